#pragma once

// Staged experiment driver: gen-data -> train -> calibrate -> predict ->
// evaluate, each stage reading the previous stage's files under output_dir.
//
// Layout of output_dir:
//   config.json, manifest.json, comparison.csv
//   data/train.csv, data/calibration.csv, data/test_rate_R.csv
//   models/class_L.json, models/normalizer.json, models/classifier.json
//   traces/loss_class_L.csv
//   pools/pool_class_L.csv
//   predictions/pvalues_STEM.csv, predictions/sets_STEM.csv
//   baselines/probs_calibration.csv, baselines/probs_STEM.csv
//   reports/{fci,scaling,aps}_STEM.json, reports/hist_STEM_class_L.csv

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fci/baselines.hpp"
#include "fci/conformal.hpp"
#include "fci/datasets.hpp"
#include "fci/eval.hpp"
#include "fci/flow.hpp"

namespace fci::pipeline {

constexpr const char* kToolVersion = "0.1.0";

struct SyntheticDataset {
  std::vector<data::GaussianClass> classes;
  std::size_t train_per_class = 2000;
  std::size_t calibration_per_class = 500;
  std::size_t test_per_class = 500;
  std::optional<data::GaussianClass> outlier;
};

struct IdxDataset {
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  // Raw IDX label held out of training and used as the outlier source; -1 for none.
  int outlier_label = -1;
  std::size_t max_train_per_class = 0;  // 0 keeps everything
  std::size_t max_test_per_class = 0;
  // Share of the held-out inlier rows moved to the calibration split.
  double calibration_fraction = 0.5;
};

struct DatasetConfig {
  std::variant<SyntheticDataset, IdxDataset> source;
  bool normalize = true;
};

struct ModelConfig {
  flow::FlowArchitecture architecture;
  flow::TrainConfig train;
};

struct BaselineConfig {
  bool enabled = true;
  baselines::ClassifierConfig classifier;
  // Directory holding probs_calibration.csv and probs_STEM.csv; defaults to
  // output_dir/baselines. Point it elsewhere to evaluate external classifiers.
  std::optional<std::string> probs_dir;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  conformal::ConformalConfig conformal;
  std::vector<double> contamination_rates{0.0};
  BaselineConfig baselines;
  std::uint64_t seed = 0;
  std::string output_dir = "fci_run";

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  // FNV-1a of the canonical JSON, as 16 hex digits.
  std::string hash() const;
};

// Three unit-variance Gaussian classes in 2-D at (0,0), (4,0), (0,4), an
// outlier class at (12,12), contamination rates 0, 0.05, 0.10.
ExperimentConfig reference_config();

// "0.050"
std::string rate_tag(double rate);
std::string test_stem(double rate);

using LogSink = std::function<void(std::string_view)>;
// Progress messages; the default writes to stderr. Pass an empty function to silence.
void set_log_sink(LogSink sink);

void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_calibrate(const ExperimentConfig& cfg);
// Without test_file, predicts every configured contamination rate.
void cmd_predict(const ExperimentConfig& cfg, const std::optional<std::string>& test_file = std::nullopt);

struct RateReports {
  std::string stem;
  std::optional<double> rate;
  eval::EvalReport fci;
  std::optional<eval::EvalReport> scaling;
  std::optional<eval::EvalReport> aps;
};
std::vector<RateReports> cmd_evaluate(const ExperimentConfig& cfg,
                                      const std::optional<std::string>& test_file = std::nullopt);
std::vector<RateReports> cmd_run_experiment(const ExperimentConfig& cfg);

// True when manifest.json exists, matches the config hash and lists only
// existing files.
bool verify_manifest(const ExperimentConfig& cfg, std::string* problem = nullptr);

}  // namespace fci::pipeline
