#include "fci/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fci/csv.hpp"
#include "fci/error.hpp"

namespace fci::conformal {

const char* mode_name(PValueMode mode) {
  return mode == PValueMode::Smoothed ? "smoothed" : "paper-literal";
}

PValueMode parse_mode(const std::string& name) {
  if (name == "smoothed") return PValueMode::Smoothed;
  if (name == "paper-literal") return PValueMode::PaperLiteral;
  throw config_error("unknown p-value mode '" + name + "' (expected smoothed or paper-literal)");
}

void ConformalConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("alpha must lie in (0, 1)");
}

ScorePool::ScorePool(int label, std::vector<double> scores) : label_(label), scores_(std::move(scores)) {
  if (scores_.empty()) throw data_error("score pool for class " + std::to_string(label) + " is empty");
  for (double s : scores_) {
    if (!std::isfinite(s) || s < 0.0) {
      throw data_error("score pool for class " + std::to_string(label) + " has an invalid score");
    }
  }
  std::sort(scores_.begin(), scores_.end());
}

double ScorePool::p_value(double t_new, PValueMode mode) const {
  if (std::isnan(t_new)) throw invalid_argument("p_value: score is NaN");
  const double n = static_cast<double>(scores_.size());
  if (mode == PValueMode::Smoothed) {
    const auto at_least = scores_.end() - std::lower_bound(scores_.begin(), scores_.end(), t_new);
    return (1.0 + static_cast<double>(at_least)) / (n + 1.0);
  }
  const auto at_most = std::upper_bound(scores_.begin(), scores_.end(), t_new) - scores_.begin();
  return static_cast<double>(at_most) / n;
}

bool PredictiveSet::contains(int label) const {
  return std::binary_search(labels.begin(), labels.end(), label);
}

std::vector<double> nonconformity_scores(const flow::ClassFlowModel& model, const nn::Tensor& x) {
  if (!model.trained()) throw invalid_argument("class " + std::to_string(model.label()) + " model is not trained");
  const nn::Tensor z = model.encode(x);
  std::vector<double> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double s = 0.0;
    for (double v : z.row(i)) s += v * v;
    out[i] = s;
  }
  return out;
}

double nonconformity_score(const flow::ClassFlowModel& model, std::span<const double> x) {
  nn::Tensor row({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  return nonconformity_scores(model, row).front();
}

ScorePool build_pool(const flow::ClassFlowModel& model, const nn::Tensor& class_inputs) {
  if (class_inputs.rows() == 0) throw data_error("class " + std::to_string(model.label()) + " has no training points");
  return ScorePool(model.label(), nonconformity_scores(model, class_inputs));
}

double p_value(const ScorePool& pool, double t_new, PValueMode mode) { return pool.p_value(t_new, mode); }

PValueVector p_values_all(std::span<const flow::ClassFlowModel> models, std::span<const ScorePool> pools,
                          std::span<const double> x, PValueMode mode) {
  nn::Tensor row({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  return p_values_batch(models, pools, row, mode).front();
}

std::vector<PValueVector> p_values_batch(std::span<const flow::ClassFlowModel> models,
                                         std::span<const ScorePool> pools, const nn::Tensor& x, PValueMode mode) {
  if (models.size() != pools.size()) {
    throw invalid_argument("got " + std::to_string(models.size()) + " models but " + std::to_string(pools.size()) +
                           " score pools");
  }
  if (models.empty()) throw invalid_argument("no class models given");
  std::vector<PValueVector> out(x.rows(), PValueVector(models.size()));
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto scores = nonconformity_scores(models[k], x);
    for (std::size_t i = 0; i < scores.size(); ++i) out[i][k] = pools[k].p_value(scores[i], mode);
  }
  return out;
}

PredictiveSet predictive_set(std::span<const double> pv, double alpha) {
  PredictiveSet s;
  s.alpha = alpha;
  for (std::size_t k = 0; k < pv.size(); ++k) {
    if (pv[k] >= alpha) s.labels.push_back(static_cast<int>(k + 1));
  }
  return s;
}

bool is_outlier(const PredictiveSet& set) { return set.empty(); }

std::string format_set(const PredictiveSet& set) {
  if (set.empty()) return "OUTLIER";
  std::string s;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(set.labels[i]);
  }
  return s;
}

PredictiveSet parse_set(const std::string& text, double alpha) {
  PredictiveSet s;
  s.alpha = alpha;
  if (text == "OUTLIER") return s;
  std::istringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ';')) s.labels.push_back(static_cast<int>(csv::to_int(part, "predictive set")));
  std::sort(s.labels.begin(), s.labels.end());
  return s;
}

void write_pool_csv(const ScorePool& pool, const std::string& path) {
  std::string out = "class,score\n";
  for (double s : pool.scores()) out += std::to_string(pool.label()) + "," + csv::format(s) + "\n";
  csv::write(path, out);
}

ScorePool read_pool_csv(const std::string& path) {
  const auto t = csv::read(path);
  if (t.header != std::vector<std::string>{"class", "score"}) throw data_error(path + ": expected header class,score");
  if (t.rows.empty()) throw data_error(path + ": pool is empty");
  const auto label = static_cast<int>(csv::to_int(t.rows.front()[0], path));
  std::vector<double> scores;
  for (const auto& r : t.rows) {
    if (csv::to_int(r[0], path) != label) throw data_error(path + ": pool mixes classes");
    scores.push_back(csv::to_double(r[1], path));
  }
  return ScorePool(label, std::move(scores));
}

void write_pvalues_csv(const std::vector<PValueVector>& pvs, const std::string& path) {
  const auto L = pvs.empty() ? 0 : pvs.front().size();
  std::string out = "sample_id";
  for (std::size_t k = 0; k < L; ++k) out += ",pi_" + std::to_string(k + 1);
  out += '\n';
  for (std::size_t i = 0; i < pvs.size(); ++i) {
    out += std::to_string(i);
    for (double p : pvs[i]) out += "," + csv::format(p);
    out += '\n';
  }
  csv::write(path, out);
}

std::vector<PValueVector> read_pvalues_csv(const std::string& path) {
  const auto t = csv::read(path);
  if (t.header.empty() || t.header.front() != "sample_id") throw data_error(path + ": expected sample_id column");
  std::vector<PValueVector> out;
  for (const auto& r : t.rows) {
    PValueVector pv;
    for (std::size_t k = 1; k < r.size(); ++k) pv.push_back(csv::to_double(r[k], path));
    out.push_back(std::move(pv));
  }
  return out;
}

void write_sets_csv(const std::vector<PredictiveSet>& sets, const std::string& path) {
  std::string out = "sample_id,set\n";
  for (std::size_t i = 0; i < sets.size(); ++i) out += std::to_string(i) + "," + format_set(sets[i]) + "\n";
  csv::write(path, out);
}

std::vector<PredictiveSet> read_sets_csv(const std::string& path, double alpha) {
  const auto t = csv::read(path);
  if (t.header != std::vector<std::string>{"sample_id", "set"}) throw data_error(path + ": expected header sample_id,set");
  std::vector<PredictiveSet> out;
  for (const auto& r : t.rows) out.push_back(parse_set(r[1], alpha));
  return out;
}

}  // namespace fci::conformal
