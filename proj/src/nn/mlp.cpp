#include "fci/nn/mlp.hpp"

#include <cmath>

#include "fci/error.hpp"

namespace fci::nn {

namespace {
constexpr int kFormatVersion = 1;
}

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw invalid_argument("mlp spec needs at least an input and an output width");
  for (auto w : layer_widths) {
    if (w == 0) throw invalid_argument("mlp layer widths must be >= 1");
  }
  if (activations.size() != layer_widths.size() - 2) {
    throw invalid_argument("mlp spec has " + std::to_string(activations.size()) + " hidden activations for " +
                           std::to_string(layer_widths.size() - 2) + " hidden layers");
  }
}

MlpSpec MlpSpec::make(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output,
                      Activation hidden_act, Activation final_act) {
  MlpSpec s;
  s.layer_widths.push_back(input);
  s.layer_widths.insert(s.layer_widths.end(), hidden.begin(), hidden.end());
  s.layer_widths.push_back(output);
  s.activations.assign(hidden.size(), hidden_act);
  s.final_activation = final_act;
  s.validate();
  return s;
}

Mlp::Mlp(MlpSpec spec, std::mt19937_64& rng) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    const auto fan_in = spec_.layer_widths[l];
    const auto fan_out = spec_.layer_widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor w = Tensor::matrix(fan_in, fan_out);
    for (auto& v : w.values()) v = dist(rng);
    weights_.emplace_back(std::move(w));
    biases_.emplace_back(Tensor::matrix(1, fan_out));
  }
}

Mlp Mlp::identity(std::size_t width) {
  Tensor w = Tensor::matrix(width, width);
  for (std::size_t i = 0; i < width; ++i) w(i, i) = 1.0;
  return affine(w, Tensor::matrix(1, width));
}

Mlp Mlp::affine(const Tensor& weight, const Tensor& bias) {
  if (bias.size() != weight.cols()) throw invalid_argument("affine: bias width does not match weight");
  Mlp m;
  m.spec_.layer_widths = {weight.rows(), weight.cols()};
  m.spec_.final_activation = Activation::Identity;
  m.weights_.emplace_back(Tensor::matrix(weight.rows(), weight.cols()));
  m.weights_.back().value.values() = weight.values();
  m.biases_.emplace_back(Tensor::matrix(1, weight.cols()));
  m.biases_.back().value.values() = bias.values();
  return m;
}

void Mlp::check_input(const Tensor& input) const {
  if (input.cols() != spec_.input_width()) {
    throw invalid_argument("mlp layer 1 expects input width " + std::to_string(spec_.input_width()) + ", got " +
                           std::to_string(input.cols()));
  }
}

Var Mlp::forward(Graph& g, const Var& input, bool track_params) {
  check_input(input.value());
  Var h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Var w = track_params ? g.param(weights_[l]) : g.constant(weights_[l].value);
    Var b = track_params ? g.param(biases_[l]) : g.constant(biases_[l].value);
    h = add_bias(matmul(h, w), b);
    const bool last = l + 1 == weights_.size();
    h = activate(h, last ? spec_.final_activation : spec_.activations[l]);
  }
  return h;
}

Tensor Mlp::infer(const Tensor& input) const {
  check_input(input);
  Tensor h = Tensor::matrix(input.rows(), input.cols());
  h.values() = input.values();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& W = weights_[l].value;
    const auto& b = biases_[l].value;
    const auto n = h.rows(), k = W.rows(), m = W.cols();
    Tensor out = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      double* orow = &out.values()[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] = b[j];
      for (std::size_t p = 0; p < k; ++p) {
        const double hp = h(i, p);
        const double* wrow = &W.values()[p * m];
        for (std::size_t j = 0; j < m; ++j) orow[j] += hp * wrow[j];
      }
    }
    const auto act = l + 1 == weights_.size() ? spec_.final_activation : spec_.activations[l];
    if (act != Activation::Identity) {
      for (auto& v : out.values()) v = activation_value(act, v);
    }
    h = std::move(out);
  }
  return h;
}

std::vector<Parameter*> Mlp::params() {
  std::vector<Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Parameter*> Mlp::params() const {
  std::vector<const Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

void Mlp::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

bool Mlp::finite() const {
  for (const auto* p : params()) {
    if (!p->value.all_finite()) return false;
  }
  return true;
}

nlohmann::json spec_to_json(const MlpSpec& spec) {
  nlohmann::json acts = nlohmann::json::array();
  for (auto a : spec.activations) acts.push_back(activation_name(a));
  return {{"layer_widths", spec.layer_widths},
          {"activations", acts},
          {"final_activation", activation_name(spec.final_activation)}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.layer_widths = j.at("layer_widths").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) s.activations.push_back(parse_activation(a.get<std::string>()));
  s.final_activation = parse_activation(j.at("final_activation").get<std::string>());
  s.validate();
  return s;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& W = weights_[l].value;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < W.rows(); ++i) {
      const auto r = W.row(i);
      rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    layers.push_back({{"W", rows}, {"b", biases_[l].value.values()}});
  }
  return {{"version", kFormatVersion}, {"spec", spec_to_json(spec_)}, {"layers", layers}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kFormatVersion) {
      throw data_error("unsupported parameter format version " + j.at("version").dump());
    }
    Mlp m;
    m.spec_ = spec_from_json(j.at("spec"));
    const auto& layers = j.at("layers");
    if (layers.size() != m.spec_.layer_count()) throw data_error("parameter layer count does not match spec");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto in = m.spec_.layer_widths[l], out = m.spec_.layer_widths[l + 1];
      auto rows = layers[l].at("W").get<std::vector<std::vector<double>>>();
      auto b = layers[l].at("b").get<std::vector<double>>();
      if (rows.size() != in || b.size() != out) throw data_error("layer " + std::to_string(l + 1) + " has wrong shape");
      Tensor W = Tensor::from_rows(rows);
      if (W.cols() != out) throw data_error("layer " + std::to_string(l + 1) + " has wrong shape");
      m.weights_.emplace_back(std::move(W));
      m.biases_.emplace_back(Tensor({1, out}, std::move(b)));
    }
    if (!m.finite()) throw data_error("non-finite parameter values");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed parameter document: ") + e.what());
  }
}

}  // namespace fci::nn
