#pragma once

#include <cstddef>
#include <vector>

#include "fairdistill/matrix.hpp"

namespace fairdistill {

struct AdamOptions {
  double learning_rate = 1e-2;
  /// L2 penalty added to the gradient before the moment updates.
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamOptions options) : opt_(options) {}

  /// params[i] -= update(grads[i]); moment state is keyed by position, so the
  /// same parameter list must be passed on every call.
  void step(const std::vector<DenseMat*>& params, const std::vector<const DenseMat*>& grads);

  const AdamOptions& options() const noexcept { return opt_; }
  long steps_taken() const noexcept { return t_; }

 private:
  AdamOptions opt_;
  long t_ = 0;
  std::vector<DenseMat> m_;
  std::vector<DenseMat> v_;
};

}  // namespace fairdistill
