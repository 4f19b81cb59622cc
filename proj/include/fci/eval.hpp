#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fci/conformal.hpp"

namespace fci::eval {

using conformal::PredictiveSet;
using conformal::PValueVector;

// Labels use 1..L for inliers and 0 for outliers.
double coverage(std::span<const PredictiveSet> sets, std::span<const int> labels);
// (1/m) * sum(|C(X_i)| - [Y_i is an outlier]).
double size_error_paper(std::span<const PredictiveSet> sets, std::span<const int> labels);
// Mean of |C| - 1 over inliers and |C| over outliers; 0 is ideal.
double size_error_excess(std::span<const PredictiveSet> sets, std::span<const int> labels);

struct KsResult {
  double statistic = 0.0;
  double critical = 0.0;
  double level = 0.01;
  std::size_t n = 0;
  bool reject = false;
};

// Two-sided one-sample statistic sup |F_n - F|.
double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf);
// Asymptotic critical value sqrt(-ln(level / 2) / 2) / sqrt(n).
double ks_critical_value(std::size_t n, double level);

KsResult ks_uniformity(std::span<const double> p_values, double level = 0.01);
// Fraction of p-values <= level.
double empirical_type1(std::span<const double> p_values, double level = 0.05);

// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);
double chi2_cdf(double t, int d);

struct Chi2Report {
  std::size_t n = 0;
  int d = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  KsResult ks;
};
Chi2Report chi2_moment_check(std::span<const double> scores, int d, double level = 0.01);

struct KsEntry {
  int label = 0;
  KsResult ks;
  double type1 = 0.0;
};

struct EvalReport {
  std::string method = "fci";
  double alpha = 0.05;
  double coverage = 0.0;
  double size_error_paper = 0.0;
  double size_error_excess = 0.0;
  std::vector<double> type1_per_class;  // empty when no p-values are available
  std::optional<double> outlier_detection_rate;
  double inlier_empty_rate = 0.0;
  double mean_set_size = 0.0;
  std::vector<KsEntry> ks;
  std::size_t n_total = 0;
  std::size_t n_inliers = 0;
  std::size_t n_outliers = 0;

  nlohmann::json to_json() const;
};

EvalReport evaluate_sets(std::span<const PredictiveSet> sets, std::span<const int> labels, double alpha,
                         const std::string& method = "fci");
// Fills type-I rates and per-class KS tests from p-values of inliers at their
// own class. Classes with fewer than 20 inliers get no KS entry.
void add_pvalue_diagnostics(EvalReport& report, std::span<const PValueVector> p_values, std::span<const int> labels,
                            double ks_level = 0.01);

// Lower bound 1 - alpha - 3 * sqrt(alpha (1 - alpha) / m) on exchangeable coverage.
double coverage_lower_bound(double alpha, std::size_t m);

struct Histogram {
  int label = 0;
  std::vector<double> edges;  // bins + 1 ascending
  std::vector<std::size_t> counts;
};

// Equal-width bins over [lo, hi]; values equal to hi land in the last bin.
Histogram make_histogram(std::span<const double> values, std::size_t bins = 20, double lo = 0.0, double hi = 1.0,
                         int label = 0);

void emit_report(const EvalReport& report, const std::string& path);
void emit_histogram(const Histogram& h, const std::string& path);
void emit_histogram(std::span<const double> p_values, std::size_t bins, const std::string& path);

}  // namespace fci::eval
