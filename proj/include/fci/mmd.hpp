#pragma once

#include <optional>
#include <span>

#include "fci/nn/autodiff.hpp"
#include "fci/nn/tensor.hpp"

namespace fci::mmd {

enum class BandwidthRule { MedianHeuristic };

// Gaussian kernel k(u, v) = exp(-|u - v|^2 / bandwidth^2). Either a fixed
// bandwidth or a rule that derives it from the samples at hand.
struct KernelSpec {
  std::optional<double> bandwidth;
  BandwidthRule rule = BandwidthRule::MedianHeuristic;

  static KernelSpec fixed(double bw);
  static KernelSpec median() { return {}; }

  // Fixed bandwidth, or the rule applied to the rows of `samples`.
  double resolve(const nn::Tensor& samples) const;
};

struct Mmd2Estimate {
  double value = 0.0;  // may be negative
  std::size_t m = 0;
  std::size_t n = 0;
};

double kernel_eval(double bandwidth, std::span<const double> u, std::span<const double> v);

// Median of pairwise Euclidean distances between rows, falling back to the
// mean when the median is zero. Throws on a degenerate sample.
double median_bandwidth(const nn::Tensor& samples);

// Unbiased squared MMD between the rows of U (m x d) and V (n x d).
Mmd2Estimate mmd2_unbiased(const nn::Tensor& U, const nn::Tensor& V, const KernelSpec& spec);
Mmd2Estimate mmd2_unbiased(const nn::Tensor& U, const nn::Tensor& V, double bandwidth);

// The same estimator recorded on a tape; differentiable in both arguments.
nn::Var mmd2_unbiased(const nn::Var& U, const nn::Var& V, double bandwidth);

// Row-wise union of two samples with equal width.
nn::Tensor stack_rows(const nn::Tensor& a, const nn::Tensor& b);

}  // namespace fci::mmd
