#pragma once

#include <exception>

namespace mixforge {

/// Exceptions cannot leave an OpenMP region. Wrap the loop body in run() and
/// call rethrow() after the loop; the first captured exception is rethrown.
class LoopGuard {
 public:
  template <class F>
  void run(F&& body) noexcept {
    try {
      body();
    } catch (...) {
#pragma omp critical(mixforge_loop_guard)
      if (!error_) error_ = std::current_exception();
    }
  }

  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
};

}  // namespace mixforge
