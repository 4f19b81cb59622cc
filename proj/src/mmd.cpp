#include "fci/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fci/error.hpp"

namespace fci::mmd {

using nn::Tensor;
using nn::Var;

KernelSpec KernelSpec::fixed(double bw) {
  if (!(bw > 0.0) || !std::isfinite(bw)) throw invalid_argument("kernel bandwidth must be positive");
  KernelSpec s;
  s.bandwidth = bw;
  return s;
}

double KernelSpec::resolve(const Tensor& samples) const {
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw invalid_argument("kernel bandwidth must be positive");
    return *bandwidth;
  }
  return median_bandwidth(samples);
}

double kernel_eval(double bandwidth, std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw invalid_argument("kernel_eval: dimension mismatch " + std::to_string(u.size()) + " vs " +
                           std::to_string(v.size()));
  }
  if (!(bandwidth > 0.0)) throw invalid_argument("kernel bandwidth must be positive");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return std::exp(-s / (bandwidth * bandwidth));
}

double median_bandwidth(const Tensor& samples) {
  const auto n = samples.rows();
  if (n < 2) throw invalid_argument("median_bandwidth needs at least 2 points");
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < samples.cols(); ++k) {
        const double d = samples(i, k) - samples(j, k);
        s += d * d;
      }
      dist.push_back(std::sqrt(s));
    }
  }
  std::sort(dist.begin(), dist.end());
  const auto c = dist.size();
  double med = c % 2 == 1 ? dist[c / 2] : 0.5 * (dist[c / 2 - 1] + dist[c / 2]);
  if (med > 0.0) return med;
  double mean = 0.0;
  for (double d : dist) mean += d;
  mean /= static_cast<double>(c);
  if (mean > 0.0) return mean;
  throw data_error("degenerate sample for bandwidth");
}

Mmd2Estimate mmd2_unbiased(const Tensor& U, const Tensor& V, const KernelSpec& spec) {
  const double bw = spec.bandwidth ? *spec.bandwidth : median_bandwidth(stack_rows(U, V));
  return mmd2_unbiased(U, V, bw);
}

Mmd2Estimate mmd2_unbiased(const Tensor& U, const Tensor& V, double bandwidth) {
  nn::Graph g;
  const Var out = mmd2_unbiased(g.constant(U), g.constant(V), bandwidth);
  return {out.value()[0], U.rows(), V.rows()};
}

Var mmd2_unbiased(const Var& U, const Var& V, double bandwidth) {
  const auto m = U.rows(), n = V.rows();
  if (m < 2 || n < 2) {
    throw invalid_argument("unbiased MMD needs at least 2 samples on each side (got m=" + std::to_string(m) +
                           ", n=" + std::to_string(n) + ")");
  }
  if (U.cols() != V.cols()) throw invalid_argument("mmd2_unbiased: sample dimensions differ");
  if (!(bandwidth > 0.0)) throw invalid_argument("kernel bandwidth must be positive");
  const double inv_h2 = 1.0 / (bandwidth * bandwidth);
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);

  // The diagonal distances are exactly zero, so each within-sample kernel sum
  // over i != j is the full sum minus the sample size.
  Var kuu = nn::exp(nn::scale(nn::pairwise_sqdist(U, U), -inv_h2));
  Var kvv = nn::exp(nn::scale(nn::pairwise_sqdist(V, V), -inv_h2));
  // Cross sum in a canonical argument order so that swapping U and V gives a
  // bit-identical estimate.
  const auto& uv = U.value().values();
  const auto& vv = V.value().values();
  const bool swap = std::lexicographical_compare(vv.begin(), vv.end(), uv.begin(), uv.end());
  Var kuv = nn::exp(nn::scale(swap ? nn::pairwise_sqdist(V, U) : nn::pairwise_sqdist(U, V), -inv_h2));
  Var within_u = nn::scale(nn::add_scalar(nn::sum(kuu), -dm), 1.0 / (dm * (dm - 1.0)));
  Var within_v = nn::scale(nn::add_scalar(nn::sum(kvv), -dn), 1.0 / (dn * (dn - 1.0)));
  Var cross = nn::scale(nn::sum(kuv), -2.0 / (dm * dn));
  return nn::add(nn::add(within_u, within_v), cross);
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw invalid_argument("stack_rows: widths differ");
  std::vector<double> v = a.values();
  v.insert(v.end(), b.values().begin(), b.values().end());
  return Tensor({a.rows() + b.rows(), a.cols()}, std::move(v));
}

}  // namespace fci::mmd
