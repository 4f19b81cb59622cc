#include "fci/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "fci/csv.hpp"
#include "fci/error.hpp"

namespace fci::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

LogSink& log_sink() {
  static LogSink sink = [](std::string_view msg) { std::cerr << msg << '\n'; };
  return sink;
}

void log(const std::string& msg) {
  if (auto& s = log_sink()) s(msg);
}

json gaussian_to_json(const data::GaussianClass& g) { return {{"mean", g.mean}, {"cov", g.cov}}; }

data::GaussianClass gaussian_from_json(const json& j) {
  data::GaussianClass g;
  g.mean = j.at("mean").get<std::vector<double>>();
  if (j.contains("cov")) {
    g.cov = j.at("cov").get<std::vector<std::vector<double>>>();
  } else {
    g = data::GaussianClass::isotropic(g.mean, j.value("variance", 1.0));
  }
  return g;
}

// Rethrows any library error from a sub-config check as a config error.
template <typename F>
void check_section(const std::string& section, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    throw config_error(section + ": " + e.what());
  }
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw io_error("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw data_error(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { csv::write(p.string(), j.dump(2) + "\n"); }

struct Paths {
  fs::path root;
  explicit Paths(const ExperimentConfig& cfg) : root(cfg.output_dir) {}

  fs::path data(const std::string& name) const { return root / "data" / (name + ".csv"); }
  fs::path model(int label) const { return root / "models" / ("class_" + std::to_string(label) + ".json"); }
  fs::path normalizer() const { return root / "models" / "normalizer.json"; }
  fs::path classifier() const { return root / "models" / "classifier.json"; }
  fs::path trace(int label) const { return root / "traces" / ("loss_class_" + std::to_string(label) + ".csv"); }
  fs::path pool(int label) const { return root / "pools" / ("pool_class_" + std::to_string(label) + ".csv"); }
  fs::path pvalues(const std::string& stem) const { return root / "predictions" / ("pvalues_" + stem + ".csv"); }
  fs::path sets(const std::string& stem) const { return root / "predictions" / ("sets_" + stem + ".csv"); }
  fs::path probs_dir(const ExperimentConfig& cfg) const {
    return cfg.baselines.probs_dir ? fs::path(*cfg.baselines.probs_dir) : root / "baselines";
  }
  fs::path report(const std::string& method, const std::string& stem) const {
    return root / "reports" / (method + "_" + stem + ".json");
  }
  fs::path histogram(const std::string& stem, int label) const {
    return root / "reports" / ("hist_" + stem + "_class_" + std::to_string(label) + ".csv");
  }
  fs::path manifest() const { return root / "manifest.json"; }
  fs::path comparison() const { return root / "comparison.csv"; }
};

// manifest.json: one per output directory, reset when the config changes.
class Manifest {
 public:
  explicit Manifest(const ExperimentConfig& cfg) : paths_(cfg), hash_(cfg.hash()) {
    const auto p = paths_.manifest();
    if (fs::exists(p)) {
      try {
        const auto j = read_json(p);
        if (j.value("config_hash", "") == hash_) {
          created_ = j.value("created", "");
          for (const auto& a : j.at("artifacts")) artifacts_.insert(a.get<std::string>());
          stages_ = j.value("stages", json::object());
        }
      } catch (const std::exception&) {
        // A damaged manifest is rebuilt from scratch.
      }
    }
    if (created_.empty()) created_ = utc_now();
    write_json(paths_.root / "config.json", cfg.to_json());
    add(paths_.root / "config.json");
  }

  void add(const fs::path& p) { artifacts_.insert(fs::relative(p, paths_.root).generic_string()); }

  void finish_stage(const std::string& name, const std::string& started) {
    stages_[name] = {{"started", started}, {"finished", utc_now()}};
    save();
  }

 private:
  void save() const {
    json j{{"tool_version", kToolVersion},
           {"config_hash", hash_},
           {"created", created_},
           {"updated", utc_now()},
           {"artifacts", artifacts_},
           {"stages", stages_}};
    write_json(paths_.manifest(), j);
  }

  Paths paths_;
  std::string hash_;
  std::string created_;
  std::set<std::string> artifacts_;
  json stages_ = json::object();
};

data::LabeledDataset load_split(const fs::path& p) {
  if (!fs::exists(p)) throw io_error("missing dataset '" + p.string() + "' (run gen-data first)");
  return data::read_csv(p.string());
}

std::size_t class_count(const data::LabeledDataset& train) {
  if (train.size() == 0) throw data_error("training data is empty");
  for (std::size_t c = 1; c <= train.num_classes; ++c) {
    if (train.count(static_cast<int>(c)) == 0) throw data_error("class " + std::to_string(c) + " has no training rows");
  }
  return train.num_classes;
}

data::Normalizer load_normalizer(const Paths& paths) {
  if (!fs::exists(paths.normalizer())) throw io_error("missing '" + paths.normalizer().string() + "' (run train first)");
  return data::Normalizer::from_json(read_json(paths.normalizer()));
}

std::vector<flow::ClassFlowModel> load_models(const Paths& paths, std::size_t L) {
  std::vector<flow::ClassFlowModel> models;
  for (std::size_t c = 1; c <= L; ++c) {
    const auto p = paths.model(static_cast<int>(c));
    if (!fs::exists(p)) throw io_error("missing model '" + p.string() + "' (run train first)");
    models.push_back(flow::ClassFlowModel::from_json(read_json(p)));
  }
  return models;
}

std::vector<conformal::ScorePool> load_pools(const Paths& paths, std::size_t L) {
  std::vector<conformal::ScorePool> pools;
  for (std::size_t c = 1; c <= L; ++c) {
    const auto p = paths.pool(static_cast<int>(c));
    if (!fs::exists(p)) throw io_error("missing score pool '" + p.string() + "' (run calibrate first)");
    pools.push_back(conformal::read_pool_csv(p.string()));
  }
  return pools;
}

std::vector<fs::path> test_files(const ExperimentConfig& cfg, const std::optional<std::string>& test_file) {
  if (test_file) return {fs::path(*test_file)};
  std::vector<fs::path> out;
  for (double r : cfg.contamination_rates) out.push_back(Paths(cfg).data(test_stem(r)));
  return out;
}

std::optional<double> rate_of(const ExperimentConfig& cfg, const fs::path& file) {
  for (double r : cfg.contamination_rates) {
    if (file.stem() == test_stem(r)) return r;
  }
  return std::nullopt;
}

// Keeps at most `cap` rows per class (first in row order); cap 0 keeps all.
data::LabeledDataset cap_per_class(const data::LabeledDataset& d, std::size_t cap) {
  if (cap == 0) return d;
  std::vector<std::size_t> keep, seen(d.num_classes + 1, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (seen[static_cast<std::size_t>(d.labels[i])]++ < cap) keep.push_back(i);
  }
  return d.select(keep);
}

struct Remapped {
  data::LabeledDataset inliers;
  nn::Tensor outliers;
};

// Drops the held-out raw label and renumbers the remaining classes 1..L.
Remapped hold_out(const data::LabeledDataset& d, int raw_outlier) {
  const int held = raw_outlier + 1;
  std::vector<std::size_t> in_idx, out_idx;
  for (std::size_t i = 0; i < d.size(); ++i) (d.labels[i] == held ? out_idx : in_idx).push_back(i);
  Remapped r;
  r.inliers = d.select(in_idx);
  if (raw_outlier >= 0) {
    for (auto& l : r.inliers.labels)
      if (l > held) --l;
    r.inliers.num_classes = d.num_classes > 0 ? d.num_classes - 1 : 0;
    if (!out_idx.empty()) r.outliers = d.features.gather_rows(out_idx);
  }
  return r;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

void set_log_sink(LogSink sink) { log_sink() = std::move(sink); }

std::string rate_tag(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", rate);
  return buf;
}

std::string test_stem(double rate) { return "test_rate_" + rate_tag(rate); }

void ExperimentConfig::validate() const {
  std::size_t input_dim = 0;
  check_section("dataset", [&] {
    if (const auto* s = std::get_if<SyntheticDataset>(&dataset.source)) {
      if (s->classes.size() < 2) throw invalid_argument("need at least 2 classes");
      input_dim = s->classes.front().mean.size();
      std::mt19937_64 rng(0);
      for (const auto& c : s->classes) {
        if (c.mean.size() != input_dim) throw invalid_argument("classes differ in dimension");
        data::sample_gaussian(c, 0, rng);
      }
      if (s->outlier) {
        if (s->outlier->mean.size() != input_dim) throw invalid_argument("outlier class dimension differs");
        data::sample_gaussian(*s->outlier, 0, rng);
      }
      if (s->train_per_class < 2 * model.train.batch_size) {
        throw invalid_argument("train_per_class must be at least twice the batch size");
      }
      if (s->test_per_class == 0) throw invalid_argument("test_per_class must be positive");
      if (baselines.enabled && s->calibration_per_class == 0) {
        throw invalid_argument("baselines need calibration_per_class > 0");
      }
    } else {
      const auto& x = std::get<IdxDataset>(dataset.source);
      for (const auto* p : {&x.train_images, &x.train_labels, &x.test_images, &x.test_labels}) {
        if (p->empty()) throw invalid_argument("IDX dataset needs train/test image and label paths");
      }
      if (x.outlier_label < -1 || x.outlier_label > 255) throw invalid_argument("outlier_label must be -1 or 0..255");
      if (!(x.calibration_fraction >= 0.0 && x.calibration_fraction < 1.0)) {
        throw invalid_argument("calibration_fraction must lie in [0, 1)");
      }
    }
  });
  check_section("model", [&] {
    if (input_dim > 0) {
      model.architecture.validate(input_dim);
    } else if (model.architecture.latent.dim < 1) {
      throw invalid_argument("latent dimension must be >= 1");
    }
    model.train.validate();
  });
  check_section("conformal", [&] { conformal.validate(); });
  check_section("contamination", [&] {
    if (contamination_rates.empty()) throw invalid_argument("rates list is empty");
    std::set<std::string> tags;
    for (double r : contamination_rates) {
      if (!(r >= 0.0 && r < 1.0)) throw invalid_argument("rate " + csv::format(r) + " outside [0, 1)");
      if (!tags.insert(rate_tag(r)).second) throw invalid_argument("duplicate rate " + rate_tag(r));
    }
    bool needs_outliers = std::any_of(contamination_rates.begin(), contamination_rates.end(), [](double r) { return r > 0; });
    if (needs_outliers) {
      if (const auto* s = std::get_if<SyntheticDataset>(&dataset.source); s && !s->outlier) {
        throw invalid_argument("positive rates need dataset.outlier");
      }
      if (const auto* x = std::get_if<IdxDataset>(&dataset.source); x && x->outlier_label < 0) {
        throw invalid_argument("positive rates need dataset.outlier_label");
      }
    }
  });
  check_section("baselines", [&] {
    if (baselines.enabled) baselines.classifier.validate();
  });
  if (output_dir.empty()) throw config_error("output_dir is empty");
}

json ExperimentConfig::to_json() const {
  json ds;
  if (const auto* s = std::get_if<SyntheticDataset>(&dataset.source)) {
    json classes = json::array();
    for (const auto& c : s->classes) classes.push_back(gaussian_to_json(c));
    ds = {{"kind", "synthetic"},
          {"classes", classes},
          {"train_per_class", s->train_per_class},
          {"calibration_per_class", s->calibration_per_class},
          {"test_per_class", s->test_per_class},
          {"outlier", s->outlier ? gaussian_to_json(*s->outlier) : json(nullptr)}};
  } else {
    const auto& x = std::get<IdxDataset>(dataset.source);
    ds = {{"kind", "idx"},
          {"train_images", x.train_images},
          {"train_labels", x.train_labels},
          {"test_images", x.test_images},
          {"test_labels", x.test_labels},
          {"outlier_label", x.outlier_label},
          {"max_train_per_class", x.max_train_per_class},
          {"max_test_per_class", x.max_test_per_class},
          {"calibration_fraction", x.calibration_fraction}};
  }
  ds["normalize"] = dataset.normalize;
  json b{{"enabled", baselines.enabled}, {"classifier", baselines.classifier.to_json()}};
  if (baselines.probs_dir) b["probs_dir"] = *baselines.probs_dir;
  return {{"dataset", ds},
          {"model", {{"architecture", model.architecture.to_json()}, {"train", model.train.to_json()}}},
          {"conformal", {{"alpha", conformal.alpha}, {"p_value_mode", conformal::mode_name(conformal.mode)}}},
          {"contamination", {{"rates", contamination_rates}}},
          {"baselines", b},
          {"seed", seed},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    ExperimentConfig c;
    if (!j.is_object()) throw config_error("config must be a JSON object");
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      const auto kind = d.value("kind", std::string("synthetic"));
      if (kind == "synthetic") {
        SyntheticDataset s;
        for (const auto& cj : d.at("classes")) s.classes.push_back(gaussian_from_json(cj));
        s.train_per_class = d.value("train_per_class", s.train_per_class);
        s.calibration_per_class = d.value("calibration_per_class", s.calibration_per_class);
        s.test_per_class = d.value("test_per_class", s.test_per_class);
        if (d.contains("outlier") && !d.at("outlier").is_null()) s.outlier = gaussian_from_json(d.at("outlier"));
        c.dataset.source = std::move(s);
      } else if (kind == "idx") {
        IdxDataset x;
        x.train_images = d.at("train_images").get<std::string>();
        x.train_labels = d.at("train_labels").get<std::string>();
        x.test_images = d.at("test_images").get<std::string>();
        x.test_labels = d.at("test_labels").get<std::string>();
        x.outlier_label = d.value("outlier_label", x.outlier_label);
        x.max_train_per_class = d.value("max_train_per_class", x.max_train_per_class);
        x.max_test_per_class = d.value("max_test_per_class", x.max_test_per_class);
        x.calibration_fraction = d.value("calibration_fraction", x.calibration_fraction);
        c.dataset.source = std::move(x);
      } else {
        throw config_error("dataset.kind must be synthetic or idx, got '" + kind + "'");
      }
      c.dataset.normalize = d.value("normalize", c.dataset.normalize);
    } else {
      c.dataset = reference_config().dataset;
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      if (m.contains("architecture")) c.model.architecture = flow::FlowArchitecture::from_json(m.at("architecture"));
      if (m.contains("train")) c.model.train = flow::TrainConfig::from_json(m.at("train"));
    }
    if (j.contains("conformal")) {
      const auto& cf = j.at("conformal");
      c.conformal.alpha = cf.value("alpha", c.conformal.alpha);
      if (cf.contains("p_value_mode")) c.conformal.mode = conformal::parse_mode(cf.at("p_value_mode"));
    }
    if (j.contains("contamination")) {
      c.contamination_rates = j.at("contamination").value("rates", c.contamination_rates);
    }
    if (j.contains("baselines")) {
      const auto& b = j.at("baselines");
      c.baselines.enabled = b.value("enabled", c.baselines.enabled);
      if (b.contains("classifier")) c.baselines.classifier = baselines::ClassifierConfig::from_json(b.at("classifier"));
      if (b.contains("probs_dir") && !b.at("probs_dir").is_null()) c.baselines.probs_dir = b.at("probs_dir");
    }
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    return c;
  } catch (const json::exception& e) {
    throw config_error(std::string("malformed config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    throw config_error(e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw config_error(path + ": " + e.what());
  } catch (const Error& e) {
    throw config_error(e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig reference_config() {
  ExperimentConfig c;
  SyntheticDataset s;
  s.classes = {data::GaussianClass::isotropic({0.0, 0.0}), data::GaussianClass::isotropic({4.0, 0.0}),
               data::GaussianClass::isotropic({0.0, 4.0})};
  s.outlier = data::GaussianClass::isotropic({12.0, 12.0});
  c.dataset.source = std::move(s);
  c.model.architecture.latent.dim = 2;
  c.contamination_rates = {0.0, 0.05, 0.10};
  c.output_dir = "fci_reference";
  return c;
}

void cmd_gen_data(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto started = utc_now();
  const Paths paths(cfg);
  Manifest manifest(cfg);

  data::LabeledDataset train, calibration, test;
  std::variant<data::GaussianClass, nn::Tensor> outlier_source;
  bool have_outliers = false;

  if (const auto* s = std::get_if<SyntheticDataset>(&cfg.dataset.source)) {
    const auto per_class = s->train_per_class + s->calibration_per_class + s->test_per_class;
    data::SyntheticSpec spec{s->classes, std::vector<std::size_t>(s->classes.size(), per_class), cfg.seed};
    const auto all = data::gen_gaussian_classes(spec);
    const double n = static_cast<double>(per_class);
    auto parts = data::split(
        all, {s->train_per_class / n, s->calibration_per_class / n, s->test_per_class / n}, mix_seed(cfg.seed, 1));
    train = std::move(parts.train);
    calibration = std::move(parts.calibration);
    test = std::move(parts.test);
    if (s->outlier) {
      outlier_source = *s->outlier;
      have_outliers = true;
    }
  } else {
    const auto& x = std::get<IdxDataset>(cfg.dataset.source);
    log("loading IDX files");
    auto tr = hold_out(data::load_idx(x.train_images, x.train_labels), x.outlier_label);
    auto te = hold_out(data::load_idx(x.test_images, x.test_labels), x.outlier_label);
    train = cap_per_class(tr.inliers, x.max_train_per_class);
    train.num_classes = tr.inliers.num_classes;
    auto held = cap_per_class(te.inliers, x.max_test_per_class);
    held.num_classes = te.inliers.num_classes;
    auto parts = data::split(held, {0.0, x.calibration_fraction, 1.0 - x.calibration_fraction}, mix_seed(cfg.seed, 1));
    calibration = std::move(parts.calibration);
    test = std::move(parts.test);
    if (te.outliers.rows() > 0) {
      outlier_source = te.outliers;
      have_outliers = true;
    }
  }

  data::write_csv(train, paths.data("train").string());
  manifest.add(paths.data("train"));
  data::write_csv(calibration, paths.data("calibration").string());
  manifest.add(paths.data("calibration"));
  log("wrote " + std::to_string(train.size()) + " train and " + std::to_string(calibration.size()) +
      " calibration rows");

  for (std::size_t i = 0; i < cfg.contamination_rates.size(); ++i) {
    const double rate = cfg.contamination_rates[i];
    if (rate > 0.0 && !have_outliers) throw data_error("no outlier source for contamination rate " + rate_tag(rate));
    data::ContaminationSpec cs;
    cs.rate = rate;
    cs.source = outlier_source;
    cs.seed = mix_seed(cfg.seed, 100 + i);
    const auto variant = data::inject_contamination(test, cs);
    const auto p = paths.data(test_stem(rate));
    data::write_csv(variant, p.string());
    manifest.add(p);
    log("wrote " + p.filename().string() + " (" + std::to_string(variant.size()) + " rows, " +
        std::to_string(variant.count(data::kOutlierLabel)) + " outliers)");
  }
  manifest.finish_stage("gen-data", started);
}

void cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto started = utc_now();
  const Paths paths(cfg);
  Manifest manifest(cfg);

  auto train = load_split(paths.data("train"));
  const auto L = class_count(train);
  cfg.model.architecture.validate(train.dim());

  data::Normalizer norm;
  if (cfg.dataset.normalize) {
    norm = data::Normalizer::fit(train.features);
    for (auto j : norm.zero_variance) log("warning: feature " + std::to_string(j + 1) + " has zero variance; not scaled");
  } else {
    norm.mean.assign(train.dim(), 0.0);
    norm.scale.assign(train.dim(), 1.0);
  }
  write_json(paths.normalizer(), norm.to_json());
  manifest.add(paths.normalizer());
  train.features = norm.apply(train.features);

  // Each class uses its own seed, so results do not depend on training order.
  for (std::size_t c = 1; c <= L; ++c) {
    const int label = static_cast<int>(c);
    auto tc = cfg.model.train;
    tc.seed = cfg.seed + c;
    log("training class " + std::to_string(label) + " (" + std::to_string(train.count(label)) + " rows, " +
        std::to_string(tc.epochs) + " epochs)");
    auto result = flow::train_class_flow(label, train.class_features(label), train.other_class_features(label),
                                         cfg.model.architecture, tc);
    write_json(paths.model(label), result.model.to_json());
    csv::write(paths.trace(label).string(), result.trace.to_csv());
    manifest.add(paths.model(label));
    manifest.add(paths.trace(label));
  }

  if (cfg.baselines.enabled) {
    auto cc = cfg.baselines.classifier;
    cc.seed = mix_seed(cfg.seed, 2);
    log("training softmax classifier for baselines");
    const auto clf = baselines::train_softmax_classifier(train.features, train.labels, L, cc);
    write_json(paths.classifier(), clf.to_json());
    manifest.add(paths.classifier());
  }
  manifest.finish_stage("train", started);
}

void cmd_calibrate(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto started = utc_now();
  const Paths paths(cfg);
  Manifest manifest(cfg);

  auto train = load_split(paths.data("train"));
  const auto L = class_count(train);
  train.features = load_normalizer(paths).apply(train.features);
  const auto models = load_models(paths, L);
  for (std::size_t c = 1; c <= L; ++c) {
    const int label = static_cast<int>(c);
    const auto pool = conformal::build_pool(models[c - 1], train.class_features(label));
    conformal::write_pool_csv(pool, paths.pool(label).string());
    manifest.add(paths.pool(label));
  }
  log("wrote " + std::to_string(L) + " score pools");
  manifest.finish_stage("calibrate", started);
}

void cmd_predict(const ExperimentConfig& cfg, const std::optional<std::string>& test_file) {
  cfg.validate();
  const auto started = utc_now();
  const Paths paths(cfg);
  Manifest manifest(cfg);

  const auto norm = load_normalizer(paths);
  const auto L = [&] {
    std::size_t n = 0;
    while (fs::exists(paths.model(static_cast<int>(n + 1)))) ++n;
    if (n == 0) throw io_error("no models under '" + (paths.root / "models").string() + "' (run train first)");
    return n;
  }();
  const auto models = load_models(paths, L);
  const auto pools = load_pools(paths, L);

  std::optional<baselines::SoftmaxClassifier> clf;
  if (cfg.baselines.enabled && !cfg.baselines.probs_dir) {
    if (!fs::exists(paths.classifier())) throw io_error("missing '" + paths.classifier().string() + "' (run train first)");
    clf = baselines::SoftmaxClassifier::from_json(read_json(paths.classifier()));
    const auto cal = load_split(paths.data("calibration"));
    const auto p = paths.probs_dir(cfg) / "probs_calibration.csv";
    baselines::write_probs_csv(clf->predict_proba(norm.apply(cal.features)), p.string());
    manifest.add(p);
  }

  for (const auto& file : test_files(cfg, test_file)) {
    auto test = load_split(file);
    if (test.dim() != models.front().input_dim()) {
      throw data_error("feature dimension mismatch: " + file.string() + " has " + std::to_string(test.dim()) + " features, models expect " +
                       std::to_string(models.front().input_dim()));
    }
    const auto x = norm.apply(test.features);
    const auto stem = file.stem().string();
    const auto pvs = conformal::p_values_batch(models, pools, x, cfg.conformal.mode);
    std::vector<conformal::PredictiveSet> sets;
    sets.reserve(pvs.size());
    for (const auto& pv : pvs) sets.push_back(conformal::predictive_set(pv, cfg.conformal.alpha));
    conformal::write_pvalues_csv(pvs, paths.pvalues(stem).string());
    conformal::write_sets_csv(sets, paths.sets(stem).string());
    manifest.add(paths.pvalues(stem));
    manifest.add(paths.sets(stem));
    if (clf) {
      const auto p = paths.probs_dir(cfg) / ("probs_" + stem + ".csv");
      baselines::write_probs_csv(clf->predict_proba(x), p.string());
      manifest.add(p);
    }
    log("predicted " + std::to_string(test.size()) + " rows of " + file.filename().string());
  }
  manifest.finish_stage("predict", started);
}

std::vector<RateReports> cmd_evaluate(const ExperimentConfig& cfg, const std::optional<std::string>& test_file) {
  cfg.validate();
  const auto started = utc_now();
  const Paths paths(cfg);
  Manifest manifest(cfg);
  const double alpha = cfg.conformal.alpha;

  std::optional<baselines::ApsCalibration> aps_cal;
  if (cfg.baselines.enabled) {
    const auto cal = load_split(paths.data("calibration"));
    const auto p = paths.probs_dir(cfg) / "probs_calibration.csv";
    if (!fs::exists(p)) throw io_error("missing '" + p.string() + "' (run predict first)");
    const auto probs = baselines::read_probs_csv(p.string());
    aps_cal = baselines::aps_calibrate(probs, cal.labels, alpha);
  }

  std::vector<RateReports> out;
  std::string table = "rate,method,coverage,size_error_paper,size_error_excess,outlier_detection_rate,inlier_empty_rate\n";
  for (const auto& file : test_files(cfg, test_file)) {
    const auto test = load_split(file);
    const auto stem = file.stem().string();
    if (!fs::exists(paths.pvalues(stem)))
      throw io_error("missing '" + paths.pvalues(stem).string() + "' (run predict first)");
    const auto pvs = conformal::read_pvalues_csv(paths.pvalues(stem).string());
    if (pvs.size() != test.size())
      throw data_error(paths.pvalues(stem).string() + " row count differs from " + file.string());
    // Sets are re-derived so evaluate honours the current alpha.
    std::vector<conformal::PredictiveSet> sets;
    for (const auto& pv : pvs) sets.push_back(conformal::predictive_set(pv, alpha));

    RateReports rr;
    rr.stem = stem;
    rr.rate = rate_of(cfg, file);
    rr.fci = eval::evaluate_sets(sets, test.labels, alpha, "fci");
    eval::add_pvalue_diagnostics(rr.fci, pvs, test.labels);
    eval::emit_report(rr.fci, paths.report("fci", stem).string());
    manifest.add(paths.report("fci", stem));

    const auto L = pvs.empty() ? 0 : pvs.front().size();
    for (std::size_t k = 0; k < L; ++k) {
      std::vector<double> own;
      for (std::size_t i = 0; i < test.size(); ++i)
        if (test.labels[i] == static_cast<int>(k + 1)) own.push_back(pvs[i][k]);
      const auto h = paths.histogram(stem, static_cast<int>(k + 1));
      eval::emit_histogram(eval::make_histogram(own, 20, 0.0, 1.0, static_cast<int>(k + 1)), h.string());
      manifest.add(h);
    }

    if (aps_cal) {
      const auto p = paths.probs_dir(cfg) / ("probs_" + stem + ".csv");
      if (!fs::exists(p)) throw io_error("missing '" + p.string() + "' (run predict first)");
      const auto probs = baselines::read_probs_csv(p.string());
      if (probs.rows() != test.size()) throw data_error(p.string() + " row count differs from " + file.string());
      std::vector<conformal::PredictiveSet> s_sets, a_sets;
      for (std::size_t i = 0; i < probs.rows(); ++i) {
        s_sets.push_back(baselines::scaling_set(probs.row(i), alpha));
        a_sets.push_back(baselines::aps_set(probs.row(i), *aps_cal));
      }
      rr.scaling = eval::evaluate_sets(s_sets, test.labels, alpha, "scaling");
      rr.aps = eval::evaluate_sets(a_sets, test.labels, alpha, "aps");
      eval::emit_report(*rr.scaling, paths.report("scaling", stem).string());
      eval::emit_report(*rr.aps, paths.report("aps", stem).string());
      manifest.add(paths.report("scaling", stem));
      manifest.add(paths.report("aps", stem));
    }

    const auto rate_col = rr.rate ? rate_tag(*rr.rate) : stem;
    for (const auto* r : {&rr.fci, rr.scaling ? &*rr.scaling : nullptr, rr.aps ? &*rr.aps : nullptr}) {
      if (!r) continue;
      table += rate_col + "," + r->method + "," + csv::format(r->coverage) + "," + csv::format(r->size_error_paper) +
               "," + csv::format(r->size_error_excess) + "," +
               (r->outlier_detection_rate ? csv::format(*r->outlier_detection_rate) : std::string()) + "," +
               csv::format(r->inlier_empty_rate) + "\n";
    }
    log(stem + ": fci coverage " + csv::format(rr.fci.coverage) +
        (rr.scaling ? ", scaling " + csv::format(rr.scaling->coverage) + ", aps " + csv::format(rr.aps->coverage) : ""));
    out.push_back(std::move(rr));
  }
  csv::write(paths.comparison().string(), table);
  manifest.add(paths.comparison());
  manifest.finish_stage("evaluate", started);
  return out;
}

std::vector<RateReports> cmd_run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  cmd_gen_data(cfg);
  cmd_train(cfg);
  cmd_calibrate(cfg);
  cmd_predict(cfg);
  return cmd_evaluate(cfg);
}

bool verify_manifest(const ExperimentConfig& cfg, std::string* problem) {
  auto fail = [&](const std::string& why) {
    if (problem) *problem = why;
    return false;
  };
  const Paths paths(cfg);
  if (!fs::exists(paths.manifest())) return fail("manifest.json is missing");
  json j;
  try {
    j = read_json(paths.manifest());
  } catch (const Error& e) {
    return fail(e.what());
  }
  if (j.value("config_hash", "") != cfg.hash()) return fail("config hash differs");
  for (const auto& a : j.value("artifacts", json::array())) {
    if (!fs::exists(paths.root / a.get<std::string>())) return fail("listed artifact '" + a.get<std::string>() + "' is missing");
  }
  return true;
}

}  // namespace fci::pipeline
