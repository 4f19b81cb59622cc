#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fci/error.hpp"
#include "fci/pipeline.hpp"

using namespace fci;
using namespace fci::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t data_rows(const fs::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) - 1;
}

// The reference task shrunk to a few seconds.
ExperimentConfig small_config(const std::string& name) {
  auto cfg = reference_config();
  auto& syn = std::get<SyntheticDataset>(cfg.dataset.source);
  syn.train_per_class = 100;
  syn.calibration_per_class = 40;
  syn.test_per_class = 60;
  cfg.model.architecture.generator_hidden = {8};
  cfg.model.architecture.inverse_hidden = {8};
  cfg.model.architecture.discriminator_hidden = {8};
  cfg.model.train.epochs = 3;
  cfg.model.train.batch_size = 32;
  cfg.baselines.classifier.hidden = {8};
  cfg.baselines.classifier.epochs = 2;
  cfg.contamination_rates = {0.0, 0.1};
  cfg.seed = 4;
  const auto dir = fs::temp_directory_path() / ("fci_test_pipeline_" + name);
  fs::remove_all(dir);
  cfg.output_dir = dir.string();
  return cfg;
}

struct Quiet {
  Quiet() { set_log_sink({}); }
};
const Quiet quiet;

}  // namespace

TEST_CASE("gen-data: files, counts and reruns") {
  const auto cfg = small_config("gen");
  cmd_gen_data(cfg);
  const fs::path out = cfg.output_dir;
  CHECK(data_rows(out / "data/train.csv") == 300);
  CHECK(data_rows(out / "data/calibration.csv") == 120);
  CHECK(data_rows(out / "data/test_rate_0.000.csv") == 180);
  CHECK(data_rows(out / "data/test_rate_0.100.csv") == 200);
  const auto dirty = data::read_csv((out / "data/test_rate_0.100.csv").string());
  CHECK(dirty.count(data::kOutlierLabel) == 20);
  CHECK_FALSE(data::read_csv((out / "data/train.csv").string()).has_outliers());
  CHECK_FALSE(data::read_csv((out / "data/calibration.csv").string()).has_outliers());

  const auto before = slurp(out / "data/test_rate_0.100.csv");
  cmd_gen_data(cfg);
  CHECK(slurp(out / "data/test_rate_0.100.csv") == before);
  fs::remove_all(out);
}

TEST_CASE("train and calibrate: models, traces and pools") {
  const auto cfg = small_config("train");
  cmd_gen_data(cfg);
  cmd_train(cfg);
  const fs::path out = cfg.output_dir;
  for (int l = 1; l <= 3; ++l) {
    CHECK(fs::exists(out / ("models/class_" + std::to_string(l) + ".json")));
    CHECK(data_rows(out / ("traces/loss_class_" + std::to_string(l) + ".csv")) == 3);
  }
  CHECK(fs::exists(out / "models/normalizer.json"));
  CHECK(fs::exists(out / "models/classifier.json"));

  cmd_calibrate(cfg);
  std::vector<std::string> first;
  for (int l = 1; l <= 3; ++l) {
    const auto path = out / ("pools/pool_class_" + std::to_string(l) + ".csv");
    const auto pool = conformal::read_pool_csv(path.string());
    CHECK(pool.label() == l);
    CHECK(pool.size() == 100);
    CHECK(std::is_sorted(pool.scores().begin(), pool.scores().end()));
    first.push_back(slurp(path));
  }
  cmd_calibrate(cfg);
  for (int l = 1; l <= 3; ++l)
    CHECK(slurp(out / ("pools/pool_class_" + std::to_string(l) + ".csv")) == first[l - 1]);
  fs::remove_all(out);
}

TEST_CASE("run-experiment: sets follow p-values, reports and manifest") {
  const auto cfg = small_config("run");
  const auto reports = cmd_run_experiment(cfg);
  const fs::path out = cfg.output_dir;
  REQUIRE(reports.size() == 2);
  CHECK(reports[1].rate == 0.1);
  CHECK(reports[1].scaling.has_value());
  CHECK(reports[1].aps.has_value());

  for (const auto& stem : {"test_rate_0.000", "test_rate_0.100"}) {
    const auto pv = conformal::read_pvalues_csv((out / "predictions" / ("pvalues_" + std::string(stem) + ".csv")).string());
    const auto sets =
        conformal::read_sets_csv((out / "predictions" / ("sets_" + std::string(stem) + ".csv")).string(), 0.05);
    REQUIRE(pv.size() == sets.size());
    for (std::size_t i = 0; i < pv.size(); ++i) {
      CHECK(conformal::predictive_set(pv[i], cfg.conformal.alpha).labels == sets[i].labels);
      const bool all_below = std::all_of(pv[i].begin(), pv[i].end(), [&](double p) { return p < cfg.conformal.alpha; });
      CHECK(sets[i].empty() == all_below);
    }
    for (const auto* m : {"fci", "scaling", "aps"})
      CHECK(fs::exists(out / "reports" / (std::string(m) + "_" + stem + ".json")));
    CHECK(fs::exists(out / "reports" / ("hist_" + std::string(stem) + "_class_1.csv")));
  }
  const auto comparison = slurp(out / "comparison.csv");
  CHECK(comparison.rfind("rate,method,coverage,size_error_paper,size_error_excess", 0) == 0);
  CHECK(data_rows(out / "comparison.csv") == 6);

  std::string problem;
  CHECK(verify_manifest(cfg, &problem));
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["config_hash"] == cfg.hash());
  for (const auto* stage : {"gen-data", "train", "calibrate", "predict", "evaluate"})
    CHECK(manifest["stages"].contains(stage));

  fs::remove(out / "pools/pool_class_2.csv");
  CHECK_FALSE(verify_manifest(cfg, &problem));
  CHECK(problem.find("pool_class_2") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("evaluate: a changed alpha re-derives the sets") {
  auto cfg = small_config("alpha");
  cmd_run_experiment(cfg);
  cfg.conformal.alpha = 0.2;
  const auto reports = cmd_evaluate(cfg);
  const fs::path out = cfg.output_dir;
  const auto pv = conformal::read_pvalues_csv((out / "predictions/pvalues_test_rate_0.000.csv").string());
  const auto test = data::read_csv((out / "data/test_rate_0.000.csv").string());
  std::vector<conformal::PredictiveSet> sets;
  for (const auto& p : pv) sets.push_back(conformal::predictive_set(p, 0.2));
  CHECK(reports[0].fci.alpha == 0.2);
  CHECK(reports[0].fci.coverage == eval::coverage(sets, test.labels));
  fs::remove_all(out);
}

TEST_CASE("run-experiment: identical p-value files on rerun") {
  auto a = small_config("rerun_a"), b = small_config("rerun_b");
  cmd_run_experiment(a);
  cmd_run_experiment(b);
  for (const auto* f : {"predictions/pvalues_test_rate_0.100.csv", "predictions/sets_test_rate_0.100.csv",
                        "models/class_2.json", "baselines/probs_test_rate_0.000.csv"})
    CHECK(slurp(fs::path(a.output_dir) / f) == slurp(fs::path(b.output_dir) / f));
  fs::remove_all(a.output_dir);
  fs::remove_all(b.output_dir);
}

TEST_CASE("stages: missing artifacts and mismatched inputs") {
  const auto cfg = small_config("errors");
  CHECK_THROWS_AS(cmd_train(cfg), fci::Error);
  cmd_gen_data(cfg);
  CHECK_THROWS_AS(cmd_calibrate(cfg), fci::Error);
  cmd_train(cfg);
  CHECK_THROWS_AS(cmd_predict(cfg), fci::Error);
  cmd_calibrate(cfg);

  const auto wide = (fs::path(cfg.output_dir) / "wide.csv").string();
  std::ofstream(wide) << "label,f_1,f_2,f_3\n1,0,0,0\n";
  try {
    cmd_predict(cfg, wide);
    FAIL("expected a dimension error");
  } catch (const fci::Error& e) {
    CHECK(std::string(e.what()).find("dimension") != std::string::npos);
  }
  CHECK_THROWS_AS(cmd_predict(cfg, (fs::path(cfg.output_dir) / "nope.csv").string()), fci::Error);
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("config: validation and json round trip") {
  auto cfg = small_config("config");
  CHECK_NOTHROW(cfg.validate());
  const auto back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.hash() == cfg.hash());
  CHECK(back.to_json() == cfg.to_json());

  auto changed = cfg;
  changed.seed = 5;
  CHECK(changed.hash() != cfg.hash());

  auto bad = cfg;
  bad.contamination_rates = {0.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), fci::Error);
  bad = cfg;
  bad.contamination_rates = {0.1, 0.1};
  CHECK_THROWS_AS(bad.validate(), fci::Error);
  bad = cfg;
  bad.conformal.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), fci::Error);
  bad = cfg;
  std::get<SyntheticDataset>(bad.dataset.source).outlier.reset();
  CHECK_THROWS_AS(bad.validate(), fci::Error);
  bad = cfg;
  bad.model.train.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), fci::Error);

  try {
    ExperimentConfig::from_json(nlohmann::json::parse(R"({"seed": "x"})"));
    FAIL("expected a config error");
  } catch (const fci::Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
  CHECK(rate_tag(0.05) == "0.050");
  CHECK(test_stem(0.1) == "test_rate_0.100");
}
