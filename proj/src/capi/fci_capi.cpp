#include "fci/fci.h"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "fci/conformal.hpp"
#include "fci/error.hpp"
#include "fci/mmd.hpp"
#include "fci/pipeline.hpp"

struct fci_experiment {
  fci::pipeline::ExperimentConfig config;
};

struct fci_model {
  fci::flow::ClassFlowModel model;
};

struct fci_pool {
  fci::conformal::ScorePool pool;
};

namespace {

thread_local std::string g_last_error;

fci_status status_of(fci::ErrorKind kind) {
  switch (kind) {
    case fci::ErrorKind::InvalidArgument: return FCI_ERR_INVALID_ARGUMENT;
    case fci::ErrorKind::Config: return FCI_ERR_CONFIG;
    case fci::ErrorKind::Io: return FCI_ERR_IO;
    case fci::ErrorKind::Data: return FCI_ERR_DATA;
    case fci::ErrorKind::Runtime: return FCI_ERR_RUNTIME;
  }
  return FCI_ERR_INTERNAL;
}

fci_status fail(fci_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
fci_status guarded(F&& f) {
  try {
    f();
    return FCI_OK;
  } catch (const fci::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(FCI_ERR_DATA, e.what());
  } catch (const std::bad_alloc&) {
    return fail(FCI_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(FCI_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(FCI_ERR_INTERNAL, "unknown error");
  }
}

#define FCI_REQUIRE(cond, what) \
  if (!(cond)) return fail(FCI_ERR_INVALID_ARGUMENT, what)

fci::nn::Tensor matrix_from(const double* x, std::size_t rows, std::size_t cols) {
  return fci::nn::Tensor({rows, cols}, std::vector<double>(x, x + rows * cols));
}

fci::conformal::PValueMode mode_of(fci_pvalue_mode m) {
  if (m == FCI_PVALUE_SMOOTHED) return fci::conformal::PValueMode::Smoothed;
  if (m == FCI_PVALUE_PAPER_LITERAL) return fci::conformal::PValueMode::PaperLiteral;
  throw fci::invalid_argument("unknown p-value mode " + std::to_string(static_cast<int>(m)));
}

}  // namespace

extern "C" {

const char* fci_version(void) { return fci::pipeline::kToolVersion; }

const char* fci_last_error(void) { return g_last_error.c_str(); }

const char* fci_status_name(fci_status status) {
  switch (status) {
    case FCI_OK: return "ok";
    case FCI_ERR_INVALID_ARGUMENT: return "invalid argument";
    case FCI_ERR_CONFIG: return "config error";
    case FCI_ERR_IO: return "i/o error";
    case FCI_ERR_DATA: return "data error";
    case FCI_ERR_RUNTIME: return "runtime error";
    case FCI_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void fci_set_quiet(int quiet) {
  if (quiet) {
    fci::pipeline::set_log_sink({});
  } else {
    fci::pipeline::set_log_sink([](std::string_view msg) {
      std::fwrite(msg.data(), 1, msg.size(), stderr);
      std::fputc('\n', stderr);
    });
  }
}

fci_status fci_experiment_create_reference(fci_experiment** out) {
  FCI_REQUIRE(out, "out is NULL");
  return guarded([&] { *out = new fci_experiment{fci::pipeline::reference_config()}; });
}

fci_status fci_experiment_load(const char* config_path, fci_experiment** out) {
  FCI_REQUIRE(config_path && out, "NULL argument");
  return guarded([&] { *out = new fci_experiment{fci::pipeline::ExperimentConfig::load(config_path)}; });
}

fci_status fci_experiment_from_json(const char* json_text, fci_experiment** out) {
  FCI_REQUIRE(json_text && out, "NULL argument");
  return guarded([&] {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
      throw fci::config_error(std::string("malformed config: ") + e.what());
    }
    *out = new fci_experiment{fci::pipeline::ExperimentConfig::from_json(j)};
  });
}

void fci_experiment_destroy(fci_experiment* exp) { delete exp; }

fci_status fci_experiment_set_seed(fci_experiment* exp, uint64_t seed) {
  FCI_REQUIRE(exp, "experiment is NULL");
  exp->config.seed = seed;
  return FCI_OK;
}

fci_status fci_experiment_set_alpha(fci_experiment* exp, double alpha) {
  FCI_REQUIRE(exp, "experiment is NULL");
  if (!(alpha > 0.0 && alpha < 1.0)) return fail(FCI_ERR_CONFIG, "alpha must lie in (0, 1)");
  exp->config.conformal.alpha = alpha;
  return FCI_OK;
}

fci_status fci_experiment_set_output_dir(fci_experiment* exp, const char* dir) {
  FCI_REQUIRE(exp && dir, "NULL argument");
  if (!*dir) return fail(FCI_ERR_CONFIG, "output directory is empty");
  exp->config.output_dir = dir;
  return FCI_OK;
}

fci_status fci_experiment_set_p_value_mode(fci_experiment* exp, fci_pvalue_mode mode) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] { exp->config.conformal.mode = mode_of(mode); });
}

fci_status fci_experiment_set_baselines(fci_experiment* exp, int enabled) {
  FCI_REQUIRE(exp, "experiment is NULL");
  exp->config.baselines.enabled = enabled != 0;
  return FCI_OK;
}

fci_status fci_experiment_set_epochs(fci_experiment* exp, size_t epochs) {
  FCI_REQUIRE(exp, "experiment is NULL");
  if (epochs < 1) return fail(FCI_ERR_CONFIG, "epochs must be >= 1");
  exp->config.model.train.epochs = epochs;
  return FCI_OK;
}

fci_status fci_experiment_clear_contamination_rates(fci_experiment* exp) {
  FCI_REQUIRE(exp, "experiment is NULL");
  exp->config.contamination_rates.clear();
  return FCI_OK;
}

fci_status fci_experiment_add_contamination_rate(fci_experiment* exp, double rate) {
  FCI_REQUIRE(exp, "experiment is NULL");
  if (!(rate >= 0.0 && rate < 1.0)) return fail(FCI_ERR_CONFIG, "contamination rate must lie in [0, 1)");
  exp->config.contamination_rates.push_back(rate);
  return FCI_OK;
}

fci_status fci_experiment_validate(const fci_experiment* exp) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] { exp->config.validate(); });
}

const char* fci_experiment_output_dir(const fci_experiment* exp) {
  return exp ? exp->config.output_dir.c_str() : nullptr;
}

fci_status fci_experiment_to_json(const fci_experiment* exp, char* buf, size_t capacity, size_t* needed) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] {
    const auto text = exp->config.to_json().dump(2);
    if (needed) *needed = text.size() + 1;
    if (buf && capacity > text.size()) {
      std::memcpy(buf, text.c_str(), text.size() + 1);
    } else if (buf) {
      throw fci::invalid_argument("buffer too small: need " + std::to_string(text.size() + 1) + " bytes");
    }
  });
}

fci_status fci_experiment_gen_data(fci_experiment* exp) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] { fci::pipeline::cmd_gen_data(exp->config); });
}

fci_status fci_experiment_train(fci_experiment* exp) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] { fci::pipeline::cmd_train(exp->config); });
}

fci_status fci_experiment_calibrate(fci_experiment* exp) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] { fci::pipeline::cmd_calibrate(exp->config); });
}

fci_status fci_experiment_predict(fci_experiment* exp, const char* test_file) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] {
    fci::pipeline::cmd_predict(exp->config, test_file ? std::optional<std::string>(test_file) : std::nullopt);
  });
}

fci_status fci_experiment_evaluate(fci_experiment* exp, const char* test_file) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] {
    fci::pipeline::cmd_evaluate(exp->config, test_file ? std::optional<std::string>(test_file) : std::nullopt);
  });
}

fci_status fci_experiment_run(fci_experiment* exp) {
  FCI_REQUIRE(exp, "experiment is NULL");
  return guarded([&] { fci::pipeline::cmd_run_experiment(exp->config); });
}

fci_status fci_model_load(const char* path, fci_model** out) {
  FCI_REQUIRE(path && out, "NULL argument");
  return guarded([&] {
    std::ifstream in(path);
    if (!in) throw fci::io_error(std::string("cannot open '") + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw fci::data_error(std::string(path) + ": " + e.what());
    }
    *out = new fci_model{fci::flow::ClassFlowModel::from_json(j)};
  });
}

void fci_model_destroy(fci_model* model) { delete model; }

fci_status fci_model_info(const fci_model* model, int* label, size_t* input_dim, size_t* latent_dim) {
  FCI_REQUIRE(model, "model is NULL");
  if (label) *label = model->model.label();
  if (input_dim) *input_dim = model->model.input_dim();
  if (latent_dim) *latent_dim = model->model.latent_dim();
  return FCI_OK;
}

fci_status fci_model_encode(const fci_model* model, const double* x, size_t rows, size_t cols, double* z) {
  FCI_REQUIRE(model && x && z, "NULL argument");
  FCI_REQUIRE(rows > 0 && cols > 0, "empty input");
  return guarded([&] {
    const auto out = model->model.encode(matrix_from(x, rows, cols));
    std::copy(out.values().begin(), out.values().end(), z);
  });
}

fci_status fci_model_scores(const fci_model* model, const double* x, size_t rows, size_t cols, double* scores) {
  FCI_REQUIRE(model && x && scores, "NULL argument");
  FCI_REQUIRE(rows > 0 && cols > 0, "empty input");
  return guarded([&] {
    const auto s = fci::conformal::nonconformity_scores(model->model, matrix_from(x, rows, cols));
    std::copy(s.begin(), s.end(), scores);
  });
}

fci_status fci_pool_create(int label, const double* scores, size_t n, fci_pool** out) {
  FCI_REQUIRE(out && (scores || n == 0), "NULL argument");
  return guarded([&] { *out = new fci_pool{fci::conformal::ScorePool(label, std::vector<double>(scores, scores + n))}; });
}

fci_status fci_pool_load_csv(const char* path, fci_pool** out) {
  FCI_REQUIRE(path && out, "NULL argument");
  return guarded([&] { *out = new fci_pool{fci::conformal::read_pool_csv(path)}; });
}

void fci_pool_destroy(fci_pool* pool) { delete pool; }

fci_status fci_pool_size(const fci_pool* pool, size_t* n) {
  FCI_REQUIRE(pool && n, "NULL argument");
  *n = pool->pool.size();
  return FCI_OK;
}

fci_status fci_pool_p_value(const fci_pool* pool, double score, fci_pvalue_mode mode, double* p_value) {
  FCI_REQUIRE(pool && p_value, "NULL argument");
  return guarded([&] { *p_value = pool->pool.p_value(score, mode_of(mode)); });
}

fci_status fci_predictive_set(const double* p_values, size_t num_classes, double alpha, int* labels, size_t* size) {
  FCI_REQUIRE(p_values && labels && size, "NULL argument");
  FCI_REQUIRE(num_classes > 0, "no classes");
  FCI_REQUIRE(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  return guarded([&] {
    const auto s = fci::conformal::predictive_set(std::span<const double>(p_values, num_classes), alpha);
    std::copy(s.labels.begin(), s.labels.end(), labels);
    *size = s.labels.size();
  });
}

fci_status fci_mmd2_unbiased(const double* u, size_t m, const double* v, size_t n, size_t dim, double bandwidth,
                             double* out) {
  FCI_REQUIRE(u && v && out, "NULL argument");
  FCI_REQUIRE(dim > 0, "dimension must be positive");
  return guarded([&] {
    const auto a = matrix_from(u, m, dim);
    const auto b = matrix_from(v, n, dim);
    const auto spec = bandwidth > 0.0 ? fci::mmd::KernelSpec::fixed(bandwidth) : fci::mmd::KernelSpec::median();
    *out = fci::mmd::mmd2_unbiased(a, b, spec).value;
  });
}

}  // extern "C"
