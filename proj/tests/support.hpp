#pragma once

#include <memory>

#include "mixforge/coupling_engine.hpp"

namespace mixforge::testing {

/// Model, basis and noise law with small defaults for unit tests.
struct Setup {
  FlowModel model;
  SpatialBasis basis;
  std::shared_ptr<const NoiseSpec> spec;

  static FlowConfig flow(Model m, int grid, int substeps) {
    FlowConfig c = FlowConfig::defaults(m);
    c.grid_size = grid;
    c.substeps = substeps;
    return c;
  }

  explicit Setup(Model m, int grid = 32, int substeps = 32, int levels = 0, int modes = -1)
      : Setup(flow(m, grid, substeps), levels, modes) {}

  Setup(const FlowConfig& fc, int levels = 0, int modes = -1)
      : model(fc),
        basis(fc.model, model.grid(), fc.sobolev_m, modes > 0 ? modes : (fc.model == Model::nse ? 8 : 10)),
        spec(std::make_shared<NoiseSpec>(NoiseSpec::defaults(basis.size(), levels, 1.0))) {}

  double norm(const SpectralField& u) const { return sobolev_norm(u, model.state_index()); }
};

}  // namespace mixforge::testing
