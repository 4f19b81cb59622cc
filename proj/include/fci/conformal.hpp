#pragma once

#include <span>
#include <string>
#include <vector>

#include "fci/flow.hpp"

namespace fci::conformal {

enum class PValueMode {
  Smoothed,       // (1 + #{T_i >= t}) / (|A| + 1)
  PaperLiteral,   // #{T_i <= t} / |A|
};

const char* mode_name(PValueMode mode);
PValueMode parse_mode(const std::string& name);

struct ConformalConfig {
  double alpha = 0.05;
  PValueMode mode = PValueMode::Smoothed;

  void validate() const;
};

// Calibration scores of one class, sorted ascending.
class ScorePool {
 public:
  ScorePool(int label, std::vector<double> scores);

  int label() const noexcept { return label_; }
  std::size_t size() const noexcept { return scores_.size(); }
  const std::vector<double>& scores() const noexcept { return scores_; }

  double p_value(double t_new, PValueMode mode = PValueMode::Smoothed) const;

 private:
  int label_;
  std::vector<double> scores_;
};

// p-values for one test point, index k holding class k + 1.
using PValueVector = std::vector<double>;

struct PredictiveSet {
  std::vector<int> labels;  // ascending
  double alpha = 0.0;

  bool empty() const noexcept { return labels.empty(); }
  std::size_t size() const noexcept { return labels.size(); }
  bool contains(int label) const;
};

// Sum of squared latent coordinates, one per row of x.
std::vector<double> nonconformity_scores(const flow::ClassFlowModel& model, const nn::Tensor& x);
double nonconformity_score(const flow::ClassFlowModel& model, std::span<const double> x);

ScorePool build_pool(const flow::ClassFlowModel& model, const nn::Tensor& class_inputs);

double p_value(const ScorePool& pool, double t_new, PValueMode mode = PValueMode::Smoothed);

// models[k] and pools[k] describe the same class.
PValueVector p_values_all(std::span<const flow::ClassFlowModel> models, std::span<const ScorePool> pools,
                          std::span<const double> x, PValueMode mode = PValueMode::Smoothed);
// One PValueVector per row of x.
std::vector<PValueVector> p_values_batch(std::span<const flow::ClassFlowModel> models,
                                         std::span<const ScorePool> pools, const nn::Tensor& x,
                                         PValueMode mode = PValueMode::Smoothed);

// {k + 1 : pv[k] >= alpha}
PredictiveSet predictive_set(std::span<const double> pv, double alpha);
bool is_outlier(const PredictiveSet& set);

// "1;3" or the literal OUTLIER for the empty set.
std::string format_set(const PredictiveSet& set);
PredictiveSet parse_set(const std::string& text, double alpha);

// Pool CSV: header `class,score`, one row per score.
void write_pool_csv(const ScorePool& pool, const std::string& path);
ScorePool read_pool_csv(const std::string& path);

// P-value CSV: header `sample_id,pi_1..pi_L`.
void write_pvalues_csv(const std::vector<PValueVector>& pvs, const std::string& path);
std::vector<PValueVector> read_pvalues_csv(const std::string& path);

// Set CSV: header `sample_id,set`.
void write_sets_csv(const std::vector<PredictiveSet>& sets, const std::string& path);
std::vector<PredictiveSet> read_sets_csv(const std::string& path, double alpha);

}  // namespace fci::conformal
