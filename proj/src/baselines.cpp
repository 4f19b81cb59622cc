#include "fci/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fci/csv.hpp"
#include "fci/error.hpp"
#include "fci/nn/adam.hpp"

namespace fci::baselines {

namespace {
// Slack for cumulative sums that should reach a threshold exactly.
constexpr double kMassSlack = 1e-12;
}  // namespace

void validate_prob_row(std::span<const double> row) {
  if (row.empty()) throw invalid_argument("probability row is empty");
  double s = 0.0;
  for (double p : row) {
    if (!(p >= 0.0 && p <= 1.0)) throw invalid_argument("probability outside [0, 1]");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw invalid_argument("probability row sums to " + csv::format(s));
}

void validate_prob_matrix(const ProbMatrix& probs) {
  for (std::size_t i = 0; i < probs.rows(); ++i) validate_prob_row(probs.row(i));
}

void ClassifierConfig::validate() const {
  if (epochs < 1) throw config_error("classifier epochs must be >= 1");
  if (batch_size < 1) throw config_error("classifier batch size must be >= 1");
  if (!(lr > 0.0)) throw config_error("classifier learning rate must be positive");
}

nlohmann::json ClassifierConfig::to_json() const {
  return {{"hidden", hidden},
          {"activation", nn::activation_name(activation)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("activation")) c.activation = nn::parse_activation(j.at("activation"));
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  return c;
}

SoftmaxClassifier::SoftmaxClassifier(nn::Mlp net, std::size_t num_classes)
    : net_(std::move(net)), num_classes_(num_classes) {
  if (net_.spec().output_width() != num_classes_) throw invalid_argument("classifier output width != class count");
}

ProbMatrix SoftmaxClassifier::predict_proba(const Tensor& x) const {
  Tensor logits = net_.infer(x);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (auto& v : row) v /= z;
  }
  return logits;
}

nlohmann::json SoftmaxClassifier::to_json() const {
  return {{"num_classes", num_classes_}, {"network", net_.to_json()}};
}

SoftmaxClassifier SoftmaxClassifier::from_json(const nlohmann::json& j) {
  return SoftmaxClassifier(nn::Mlp::from_json(j.at("network")), j.at("num_classes").get<std::size_t>());
}

SoftmaxClassifier train_softmax_classifier(const Tensor& x, std::span<const int> labels, std::size_t num_classes,
                                           const ClassifierConfig& config) {
  config.validate();
  if (x.rows() != labels.size()) throw invalid_argument("classifier: feature/label count mismatch");
  std::vector<bool> seen(num_classes + 1, false);
  std::vector<std::size_t> target(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || static_cast<std::size_t>(labels[i]) > num_classes) {
      throw data_error("classifier: label " + std::to_string(labels[i]) + " outside 1.." + std::to_string(num_classes));
    }
    seen[static_cast<std::size_t>(labels[i])] = true;
    target[i] = static_cast<std::size_t>(labels[i] - 1);
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) throw data_error("classifier needs at least 2 classes present");

  std::mt19937_64 rng(config.seed);
  nn::Mlp net(nn::MlpSpec::make(x.cols(), config.hidden, num_classes, config.activation, nn::Activation::Identity),
              rng);
  nn::Adam opt({config.lr, 0.9, 0.999, 1e-8});
  const auto params = net.params();

  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = std::min(config.batch_size, x.rows());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + bs <= order.size(); start += bs) {
      std::span<const std::size_t> idx(order.data() + start, bs);
      std::vector<std::size_t> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) yb[i] = target[idx[i]];
      nn::Graph g;
      auto loss = nn::softmax_cross_entropy(net.forward(g, g.constant(x.gather_rows(idx))), yb);
      if (!std::isfinite(loss.value()[0])) throw runtime_error("classifier training diverged");
      g.backward(loss);
      opt.step(params);
    }
  }
  return SoftmaxClassifier(std::move(net), num_classes);
}

std::vector<RankedClass> rank_classes(std::span<const double> row) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  std::vector<RankedClass> out;
  double cum = 0.0;
  for (auto k : idx) {
    cum += row[k];
    out.push_back({static_cast<int>(k + 1), cum});
  }
  return out;
}

namespace {

PredictiveSet accumulate_until(std::span<const double> row, double target, double alpha) {
  PredictiveSet s;
  s.alpha = alpha;
  for (const auto& rc : rank_classes(row)) {
    s.labels.push_back(rc.label);
    if (rc.cumulative >= target - kMassSlack) break;
  }
  std::sort(s.labels.begin(), s.labels.end());
  return s;
}

}  // namespace

PredictiveSet scaling_set(std::span<const double> row, double alpha) {
  validate_prob_row(row);
  if (!(alpha >= 0.0 && alpha < 1.0)) throw invalid_argument("scaling_set: alpha must lie in [0, 1)");
  return accumulate_until(row, 1.0 - alpha, alpha);
}

double aps_score(std::span<const double> row, int label) {
  validate_prob_row(row);
  for (const auto& rc : rank_classes(row)) {
    if (rc.label == label) return rc.cumulative;
  }
  throw invalid_argument("aps_score: label " + std::to_string(label) + " out of range");
}

ApsCalibration aps_calibrate_scores(std::vector<double> scores, double alpha) {
  if (scores.empty()) throw data_error("APS calibration set is empty");
  if (!(alpha > 0.0 && alpha < 1.0)) throw invalid_argument("aps_calibrate: alpha must lie in (0, 1)");
  std::sort(scores.begin(), scores.end());
  const auto n = scores.size();
  // (n + 1)(1 - alpha) is often an integer up to rounding; do not let the
  // rounding push ceil() one rank too far.
  const double rank = std::ceil(static_cast<double>(n + 1) * (1.0 - alpha) - 1e-9);
  ApsCalibration cal;
  cal.n_cal = n;
  cal.alpha = alpha;
  cal.tau = rank > static_cast<double>(n) ? 1.0 : scores[static_cast<std::size_t>(std::max(rank, 1.0)) - 1];
  cal.tau = std::min(cal.tau, 1.0);
  return cal;
}

ApsCalibration aps_calibrate(const ProbMatrix& probs, std::span<const int> labels, double alpha) {
  if (probs.rows() == 0 || labels.empty()) throw data_error("APS calibration set is empty");
  if (probs.rows() != labels.size()) throw invalid_argument("aps_calibrate: probability/label count mismatch");
  std::vector<double> scores(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) scores[i] = aps_score(probs.row(i), labels[i]);
  return aps_calibrate_scores(std::move(scores), alpha);
}

PredictiveSet aps_set(std::span<const double> row, const ApsCalibration& cal) {
  validate_prob_row(row);
  if (cal.tau >= 1.0) {
    PredictiveSet all;
    all.alpha = cal.alpha;
    for (std::size_t k = 0; k < row.size(); ++k) all.labels.push_back(static_cast<int>(k + 1));
    return all;
  }
  return accumulate_until(row, cal.tau, cal.alpha);
}

void write_probs_csv(const ProbMatrix& probs, const std::string& path) {
  std::string out = "sample_id";
  for (std::size_t k = 0; k < probs.cols(); ++k) out += ",p_" + std::to_string(k + 1);
  out += '\n';
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    out += std::to_string(i);
    for (double p : probs.row(i)) out += "," + csv::format(p);
    out += '\n';
  }
  csv::write(path, out);
}

ProbMatrix read_probs_csv(const std::string& path) {
  const auto t = csv::read(path);
  if (t.header.size() < 2 || t.header.front() != "sample_id") throw data_error(path + ": expected sample_id,p_1..p_L");
  if (t.rows.empty()) throw data_error(path + ": no rows");
  const auto L = t.header.size() - 1;
  ProbMatrix probs = Tensor::matrix(t.rows.size(), L);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t k = 0; k < L; ++k) probs(i, k) = csv::to_double(t.rows[i][k + 1], path);
    try {
      validate_prob_row(probs.row(i));
    } catch (const Error& e) {
      throw data_error(path + ": row " + std::to_string(i) + ": " + e.what());
    }
  }
  return probs;
}

}  // namespace fci::baselines
