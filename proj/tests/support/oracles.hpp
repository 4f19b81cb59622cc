#pragma once

// Independent reference computations used as test oracles.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fci/mmd.hpp"
#include "fci/nn/tensor.hpp"

namespace fci::testing {

// Direct evaluation of the three-term unbiased estimator with explicit loops.
inline double brute_mmd2(const nn::Tensor& u, const nn::Tensor& v, double bw) {
  auto k = [bw](std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-d / (bw * bw));
  };
  const double m = static_cast<double>(u.rows()), n = static_cast<double>(v.rows());
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < u.rows(); ++j)
      if (i != j) xx += k(u.row(i), u.row(j));
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.rows(); ++j)
      if (i != j) yy += k(v.row(i), v.row(j));
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < v.rows(); ++j) xy += k(u.row(i), v.row(j));
  return xx / (m * (m - 1)) + yy / (n * (n - 1)) - 2.0 * xy / (m * n);
}

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
};

inline Summary summarize(const std::vector<double>& xs) {
  Summary s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  s.se = s.sd / std::sqrt(static_cast<double>(xs.size()));
  return s;
}

// Replicates of the estimator between two independent 1-D standard normal
// samples of size n each, with the median-heuristic bandwidth.
inline Summary null_mmd_summary(int replicates, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> vals;
  for (int r = 0; r < replicates; ++r) {
    nn::Tensor u = nn::Tensor::matrix(n, 1), v = nn::Tensor::matrix(n, 1);
    for (auto& x : u.values()) x = g(rng);
    for (auto& x : v.values()) x = g(rng);
    vals.push_back(mmd::mmd2_unbiased(u, v, mmd::KernelSpec::median()).value);
  }
  return summarize(vals);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Average ranks with ties sharing the mean rank.
inline std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace fci::testing
