// fci: command-line front end over the C API.
//
//   fci run-experiment --config exp.json --seed 3 --out runs/s3
//   fci predict --out runs/s3 --test my_points.csv
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fci/fci.h"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::string out;
  std::vector<double> rates;
  std::string p_value_mode;
  std::string baselines;
  std::optional<std::size_t> epochs;
  std::string test_file;
  bool quiet = false;
};

int exit_code_for(fci_status s) {
  switch (s) {
    case FCI_OK: return 0;
    case FCI_ERR_INVALID_ARGUMENT:
    case FCI_ERR_CONFIG: return kExitUsage;
    default: return kExitRuntime;
  }
}

struct ExperimentDeleter {
  void operator()(fci_experiment* e) const { fci_experiment_destroy(e); }
};
using ExperimentPtr = std::unique_ptr<fci_experiment, ExperimentDeleter>;

class Failure {
 public:
  explicit Failure(fci_status s) : status(s) {}
  fci_status status;
};

void check(fci_status s) {
  if (s != FCI_OK) throw Failure(s);
}

ExperimentPtr build_experiment(const Options& o) {
  fci_experiment* raw = nullptr;
  check(o.config_path.empty() ? fci_experiment_create_reference(&raw) : fci_experiment_load(o.config_path.c_str(), &raw));
  ExperimentPtr exp(raw);
  if (o.seed) check(fci_experiment_set_seed(exp.get(), *o.seed));
  if (o.alpha) check(fci_experiment_set_alpha(exp.get(), *o.alpha));
  if (!o.out.empty()) check(fci_experiment_set_output_dir(exp.get(), o.out.c_str()));
  if (!o.rates.empty()) {
    check(fci_experiment_clear_contamination_rates(exp.get()));
    for (double r : o.rates) check(fci_experiment_add_contamination_rate(exp.get(), r));
  }
  if (!o.p_value_mode.empty()) {
    check(fci_experiment_set_p_value_mode(
        exp.get(), o.p_value_mode == "smoothed" ? FCI_PVALUE_SMOOTHED : FCI_PVALUE_PAPER_LITERAL));
  }
  if (!o.baselines.empty()) check(fci_experiment_set_baselines(exp.get(), o.baselines == "on"));
  if (o.epochs) check(fci_experiment_set_epochs(exp.get(), *o.epochs));
  check(fci_experiment_validate(exp.get()));
  return exp;
}

void print_comparison(const fci_experiment* exp) {
  std::ifstream in(std::string(fci_experiment_output_dir(exp)) + "/comparison.csv");
  if (in) std::cout << in.rdbuf();
}

void print_config(const fci_experiment* exp) {
  std::size_t needed = 0;
  check(fci_experiment_to_json(exp, nullptr, 0, &needed));
  std::string buf(needed, '\0');
  check(fci_experiment_to_json(exp, buf.data(), buf.size(), &needed));
  buf.pop_back();
  std::cout << buf << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-based conformal inference: per-class roundtrip models, conformal p-values and outlier sets"};
  app.set_version_flag("--version", std::string(fci_version()));
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--config", o.config_path, "Experiment config JSON (default: built-in reference task)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--alpha", o.alpha, "Test size alpha in (0, 1)");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--contamination-rate", o.rates, "Contamination rate in [0, 1); repeat for a sweep")
      ->allow_extra_args(false);
  app.add_option("--p-value-mode", o.p_value_mode, "p-value definition")
      ->check(CLI::IsMember({"smoothed", "paper-literal"}));
  app.add_option("--baselines", o.baselines, "Run the Scaling and APS baselines")->check(CLI::IsMember({"on", "off"}));
  app.add_option("--epochs", o.epochs, "Override training epochs per class");
  app.add_flag("--quiet,-q", o.quiet, "Suppress progress messages");

  auto* gen = app.add_subcommand("gen-data", "Write train, calibration and contaminated test CSVs");
  auto* train = app.add_subcommand("train", "Train one roundtrip model per class");
  auto* calibrate = app.add_subcommand("calibrate", "Compute per-class score pools");
  auto* predict = app.add_subcommand("predict", "Write p-values and predictive sets");
  auto* evaluate = app.add_subcommand("evaluate", "Write evaluation reports, histograms and comparison.csv");
  auto* run = app.add_subcommand("run-experiment", "Run every stage in order");
  auto* show = app.add_subcommand("show-config", "Print the effective configuration");
  for (auto* sub : {predict, evaluate}) {
    sub->add_option("--test", o.test_file, "Test CSV (label,f_1..f_p); default: every configured rate")
        ->check(CLI::ExistingFile);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  fci_set_quiet(o.quiet ? 1 : 0);
  try {
    auto exp = build_experiment(o);
    const char* test = o.test_file.empty() ? nullptr : o.test_file.c_str();
    if (gen->parsed()) check(fci_experiment_gen_data(exp.get()));
    if (train->parsed()) check(fci_experiment_train(exp.get()));
    if (calibrate->parsed()) check(fci_experiment_calibrate(exp.get()));
    if (predict->parsed()) check(fci_experiment_predict(exp.get(), test));
    if (evaluate->parsed()) {
      check(fci_experiment_evaluate(exp.get(), test));
      print_comparison(exp.get());
    }
    if (run->parsed()) {
      check(fci_experiment_run(exp.get()));
      print_comparison(exp.get());
    }
    if (show->parsed()) print_config(exp.get());
  } catch (const Failure& f) {
    std::cerr << "fci: " << fci_status_name(f.status) << ": " << fci_last_error() << '\n';
    return exit_code_for(f.status);
  }
  return 0;
}
