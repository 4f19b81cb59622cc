#pragma once

// Comparison methods built on softmax probabilities: the "Scaling" set that
// accumulates classes until their mass reaches 1 - alpha, and split-conformal
// Adaptive Prediction Sets (deterministic variant).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fci/conformal.hpp"
#include "fci/nn/mlp.hpp"

namespace fci::baselines {

using nn::Tensor;
using conformal::PredictiveSet;

// Rows are samples, columns class probabilities for classes 1..L.
using ProbMatrix = Tensor;

void validate_prob_row(std::span<const double> row);
void validate_prob_matrix(const ProbMatrix& probs);

struct ClassifierConfig {
  std::vector<std::size_t> hidden{32};
  nn::Activation activation = nn::Activation::Relu;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

class SoftmaxClassifier {
 public:
  SoftmaxClassifier() = default;
  SoftmaxClassifier(nn::Mlp net, std::size_t num_classes);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t input_dim() const { return net_.spec().input_width(); }
  ProbMatrix predict_proba(const Tensor& x) const;

  nn::Mlp& net() { return net_; }

  nlohmann::json to_json() const;
  static SoftmaxClassifier from_json(const nlohmann::json& j);

 private:
  nn::Mlp net_;
  std::size_t num_classes_ = 0;
};

// labels are 1..num_classes.
SoftmaxClassifier train_softmax_classifier(const Tensor& x, std::span<const int> labels, std::size_t num_classes,
                                           const ClassifierConfig& config);

// Classes by descending probability (ties by ascending label), each paired
// with the cumulative mass up to and including it.
struct RankedClass {
  int label;
  double cumulative;
};
std::vector<RankedClass> rank_classes(std::span<const double> row);

PredictiveSet scaling_set(std::span<const double> row, double alpha);

struct ApsCalibration {
  double tau = 1.0;
  std::size_t n_cal = 0;
  double alpha = 0.0;
};

// Cumulative sorted mass up to and including the true class.
double aps_score(std::span<const double> row, int label);
ApsCalibration aps_calibrate_scores(std::vector<double> scores, double alpha);
ApsCalibration aps_calibrate(const ProbMatrix& probs, std::span<const int> labels, double alpha);
PredictiveSet aps_set(std::span<const double> row, const ApsCalibration& cal);

// Probability CSV: header `sample_id,p_1..p_L`.
void write_probs_csv(const ProbMatrix& probs, const std::string& path);
ProbMatrix read_probs_csv(const std::string& path);

}  // namespace fci::baselines
