#include <benchmark/benchmark.h>

#include <omp.h>

#include <memory>

#include "mixforge/mixing_harness.hpp"

using namespace mixforge;

namespace {

struct Fixture {
  FlowModel model;
  SpatialBasis basis;
  std::shared_ptr<const NoiseSpec> spec;
  BasePoint base;

  Fixture(Model m, int grid, int levels)
      : model([&] {
          FlowConfig c = FlowConfig::defaults(m);
          c.grid_size = grid;
          return c;
        }()),
        basis(m, model.grid(), model.state_index(), m == Model::nse ? 8 : 10),
        spec(std::make_shared<NoiseSpec>(NoiseSpec::defaults(basis.size(), levels, 1.0))) {
    RngStream rng(1);
    base = make_base_point(model, basis, random_field(model, rng, 1.0), sample_noise_path(spec, rng));
  }
};

Fixture& nse(int levels) {
  static Fixture f0(Model::nse, 32, 0), f2(Model::nse, 32, 2);
  return levels == 0 ? f0 : f2;
}

void BM_FlowMap(benchmark::State& st) {
  Fixture f(st.range(0) == 0 ? Model::nse : Model::cgl, 32, 0);
  RngStream rng(2);
  const NoisePath eta = sample_noise_path(f.spec, rng);
  for (auto _ : st) benchmark::DoNotOptimize(flow_map(f.model, f.basis, f.base.u0, eta));
}
BENCHMARK(BM_FlowMap)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_AssembleParallel(benchmark::State& st) {
  Fixture& f = nse(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(assemble_A(f.model, f.basis, f.base));
}
BENCHMARK(BM_AssembleParallel)->Arg(0)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_AssembleSerial(benchmark::State& st) {
  Fixture& f = nse(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(assemble_A_serial(f.model, f.basis, f.base));
}
BENCHMARK(BM_AssembleSerial)->Arg(0)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_RightInverse(benchmark::State& st) {
  Fixture& f = nse(2);
  const TangentOperator A = assemble_A(f.model, f.basis, f.base);
  const StateCoords sc(Model::nse, f.model.grid(), 1);
  const Eigen::VectorXd rhs = sc.to_vector(f.base.u1);
  for (auto _ : st) {
    const RightInverse R(A, 1e-3, static_cast<int>(st.range(0)));
    benchmark::DoNotOptimize(R.apply(rhs));
  }
}
BENCHMARK(BM_RightInverse)->Arg(8)->Arg(64)->Unit(benchmark::kMicrosecond);

// Coupled ensemble with fixed control parameters; range(0) = 1 runs the
// OpenMP loop, 0 the serial reference.
void BM_Ensemble(benchmark::State& st) {
  Fixture& f = nse(0);
  ControlParams p;
  p.r = 1e-3;
  p.M = 4;
  p.delta = 0.2;
  p.d0 = 0.15;
  const CouplingEngine eng(f.model, f.basis, f.spec, p);
  const KantorovichDensity kd = build_kantorovich_f(0.6, 1.0, 3.125, 0.15, 0.3, 0.15);
  MixingConfig cfg;
  cfg.pairs = 4;
  cfg.horizon = 8;
  cfg.lip_functionals = 8;
  for (auto _ : st) benchmark::DoNotOptimize(run_coupled_ensemble(eng, kd, cfg, st.range(0) == 1));
  st.counters["threads"] = omp_get_max_threads();
}
BENCHMARK(BM_Ensemble)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
