#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fci/nn/autodiff.hpp"

namespace fci::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. The parameter list is bound on the first step and must
// keep the same order and shapes afterwards.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Applies one update from the accumulated gradients, then clears them.
  void step(std::span<Parameter* const> params);

  std::uint64_t steps() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace fci::nn
