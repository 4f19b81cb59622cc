#include "fci/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fci/csv.hpp"
#include "fci/error.hpp"

namespace fci::eval {

namespace {

void check_aligned(std::size_t sets, std::size_t labels) {
  if (sets != labels) {
    throw invalid_argument("got " + std::to_string(sets) + " predictive sets but " + std::to_string(labels) + " labels");
  }
  if (sets == 0) throw invalid_argument("no test points to evaluate");
}

constexpr int kOutlier = 0;

}  // namespace

double coverage(std::span<const PredictiveSet> sets, std::span<const int> labels) {
  check_aligned(sets.size(), labels.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (labels[i] == kOutlier ? sets[i].empty() : sets[i].contains(labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

double size_error_paper(std::span<const PredictiveSet> sets, std::span<const int> labels) {
  check_aligned(sets.size(), labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    total += static_cast<double>(sets[i].size()) - (labels[i] == kOutlier ? 1.0 : 0.0);
  }
  return total / static_cast<double>(sets.size());
}

double size_error_excess(std::span<const PredictiveSet> sets, std::span<const int> labels) {
  check_aligned(sets.size(), labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    total += static_cast<double>(sets[i].size()) - (labels[i] == kOutlier ? 0.0 : 1.0);
  }
  return total / static_cast<double>(sets.size());
}

double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw invalid_argument("KS statistic of an empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_value(std::size_t n, double level) {
  if (!(level > 0.0 && level < 1.0)) throw invalid_argument("KS level must lie in (0, 1)");
  return std::sqrt(-0.5 * std::log(level / 2.0)) / std::sqrt(static_cast<double>(n));
}

namespace {

KsResult ks_against(std::span<const double> sample, const std::function<double(double)>& cdf, double level) {
  KsResult r;
  r.n = sample.size();
  r.level = level;
  r.statistic = ks_statistic(std::vector<double>(sample.begin(), sample.end()), cdf);
  r.critical = ks_critical_value(r.n, level);
  r.reject = r.statistic > r.critical;
  return r;
}

}  // namespace

KsResult ks_uniformity(std::span<const double> p_values, double level) {
  if (p_values.size() < 20) {
    throw invalid_argument("KS uniformity needs at least 20 p-values, got " + std::to_string(p_values.size()));
  }
  return ks_against(p_values, [](double x) { return std::clamp(x, 0.0, 1.0); }, level);
}

double empirical_type1(std::span<const double> p_values, double level) {
  if (p_values.empty()) throw invalid_argument("type-I rate of an empty sample");
  const auto k = std::count_if(p_values.begin(), p_values.end(), [&](double p) { return p <= level; });
  return static_cast<double>(k) / static_cast<double>(p_values.size());
}

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0)) throw invalid_argument("gamma shape must be positive");
  if (std::isnan(x)) return x;
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  constexpr double eps = 1e-16;
  constexpr int max_iter = 10000;
  const double log_prefix = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    // Series: sum x^n / (a (a+1) ... (a+n)).
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < max_iter; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * eps) break;
    }
    return std::min(1.0, sum * std::exp(log_prefix));
  }
  // Continued fraction for Q(a, x) via modified Lentz.
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < max_iter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::max(0.0, 1.0 - std::exp(log_prefix) * h);
}

double chi2_cdf(double t, int d) {
  if (d < 1) throw invalid_argument("chi-squared degrees of freedom must be >= 1");
  return regularized_gamma_p(0.5 * d, 0.5 * t);
}

Chi2Report chi2_moment_check(std::span<const double> scores, int d, double level) {
  if (d < 1) throw invalid_argument("chi-squared degrees of freedom must be >= 1");
  if (scores.size() < 100) {
    throw invalid_argument("chi-squared check needs at least 100 scores, got " + std::to_string(scores.size()));
  }
  Chi2Report r;
  r.n = scores.size();
  r.d = d;
  double s = 0.0;
  for (double v : scores) s += v;
  r.mean = s / static_cast<double>(r.n);
  double ss = 0.0;
  for (double v : scores) ss += (v - r.mean) * (v - r.mean);
  r.variance = ss / static_cast<double>(r.n - 1);
  r.ks = ks_against(scores, [d](double t) { return chi2_cdf(t, d); }, level);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json ks_json = nlohmann::json::array();
  for (const auto& e : ks) {
    ks_json.push_back({{"class", e.label},
                       {"stat", e.ks.statistic},
                       {"critical", e.ks.critical},
                       {"level", e.ks.level},
                       {"n", e.ks.n},
                       {"reject", e.ks.reject}});
  }
  return {{"method", method},
          {"alpha", alpha},
          {"coverage", coverage},
          {"size_error_paper", size_error_paper},
          {"size_error_excess", size_error_excess},
          {"type1_per_class", type1_per_class},
          {"outlier_detection_rate",
           outlier_detection_rate ? nlohmann::json(*outlier_detection_rate) : nlohmann::json(nullptr)},
          {"inlier_empty_rate", inlier_empty_rate},
          {"mean_set_size", mean_set_size},
          {"ks", ks_json},
          {"counts", {{"total", n_total}, {"inliers", n_inliers}, {"outliers", n_outliers}}}};
}

EvalReport evaluate_sets(std::span<const PredictiveSet> sets, std::span<const int> labels, double alpha,
                         const std::string& method) {
  EvalReport r;
  r.method = method;
  r.alpha = alpha;
  r.coverage = coverage(sets, labels);
  r.size_error_paper = size_error_paper(sets, labels);
  r.size_error_excess = size_error_excess(sets, labels);
  r.n_total = sets.size();
  std::size_t inlier_empty = 0, outlier_empty = 0, total_size = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    total_size += sets[i].size();
    if (labels[i] == kOutlier) {
      ++r.n_outliers;
      if (sets[i].empty()) ++outlier_empty;
    } else {
      ++r.n_inliers;
      if (sets[i].empty()) ++inlier_empty;
    }
  }
  if (r.n_inliers) r.inlier_empty_rate = static_cast<double>(inlier_empty) / static_cast<double>(r.n_inliers);
  if (r.n_outliers) r.outlier_detection_rate = static_cast<double>(outlier_empty) / static_cast<double>(r.n_outliers);
  r.mean_set_size = static_cast<double>(total_size) / static_cast<double>(r.n_total);
  return r;
}

void add_pvalue_diagnostics(EvalReport& report, std::span<const PValueVector> p_values, std::span<const int> labels,
                            double ks_level) {
  if (p_values.size() != labels.size()) throw invalid_argument("p-value rows and labels differ in length");
  if (p_values.empty()) return;
  const auto L = p_values.front().size();
  report.type1_per_class.assign(L, 0.0);
  report.ks.clear();
  for (std::size_t k = 0; k < L; ++k) {
    std::vector<double> own;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == static_cast<int>(k + 1)) own.push_back(p_values[i].at(k));
    }
    if (own.empty()) continue;
    report.type1_per_class[k] = empirical_type1(own, report.alpha);
    if (own.size() >= 20) report.ks.push_back({static_cast<int>(k + 1), ks_uniformity(own, ks_level), report.type1_per_class[k]});
  }
}

double coverage_lower_bound(double alpha, std::size_t m) {
  return 1.0 - alpha - 3.0 * std::sqrt(alpha * (1.0 - alpha) / static_cast<double>(m));
}

Histogram make_histogram(std::span<const double> values, std::size_t bins, double lo, double hi, int label) {
  if (bins == 0) throw invalid_argument("histogram needs at least one bin");
  if (!(hi > lo)) throw invalid_argument("histogram range is empty");
  Histogram h;
  h.label = label;
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * static_cast<double>(b));
  for (double v : values) {
    if (!(v >= lo && v <= hi)) throw invalid_argument("histogram value " + csv::format(v) + " outside range");
    auto b = static_cast<std::size_t>((v - lo) / width);
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

void emit_report(const EvalReport& report, const std::string& path) { csv::write(path, report.to_json().dump(2) + "\n"); }

void emit_histogram(const Histogram& h, const std::string& path) {
  std::string out = "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out += csv::format(h.edges[b]) + "," + csv::format(h.edges[b + 1]) + "," + std::to_string(h.counts[b]) + "\n";
  }
  csv::write(path, out);
}

void emit_histogram(std::span<const double> p_values, std::size_t bins, const std::string& path) {
  emit_histogram(make_histogram(p_values, bins), path);
}

}  // namespace fci::eval
