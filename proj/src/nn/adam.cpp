#include "fci/nn/adam.hpp"

#include <cmath>

#include "fci/error.hpp"

namespace fci::nn {

void Adam::step(std::span<Parameter* const> params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw invalid_argument("adam: parameter list changed between steps");

  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = m_[k].values();
    auto& v = v_[k].values();
    auto& w = p.value.values();
    auto& g = p.grad.values();
    if (m.size() != w.size()) throw invalid_argument("adam: parameter shape changed between steps");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      g[i] = 0.0;
    }
  }
}

}  // namespace fci::nn
