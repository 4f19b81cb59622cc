#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "fci/nn/autodiff.hpp"

namespace fci::nn {

struct MlpSpec {
  std::vector<std::size_t> layer_widths;  // input width first, output width last
  std::vector<Activation> activations;    // one per hidden layer
  Activation final_activation = Activation::Identity;

  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t output_width() const { return layer_widths.back(); }
  std::size_t layer_count() const { return layer_widths.size() - 1; }

  // Throws InvalidArgument when the spec is malformed.
  void validate() const;

  // Hidden layers share one activation.
  static MlpSpec make(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t output,
                      Activation hidden_act, Activation final_act);
};

// Multilayer perceptron y = act(W x + b) per layer. Weights are (in, out) so a
// batch (n, in) multiplies on the left.
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, std::mt19937_64& rng);

  // Single identity-activated layer with W = I and b = 0.
  static Mlp identity(std::size_t width);
  // Single identity-activated affine layer with the given parameters.
  static Mlp affine(const Tensor& weight, const Tensor& bias);

  const MlpSpec& spec() const { return spec_; }

  // Records the forward pass. With track_params = false the weights enter the
  // graph as constants, so gradients reach the input but not the parameters.
  Var forward(Graph& g, const Var& input, bool track_params = true);

  // Plain evaluation without a tape.
  Tensor infer(const Tensor& input) const;

  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;
  void zero_grad();

  bool finite() const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  void check_input(const Tensor& input) const;

  MlpSpec spec_;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

nlohmann::json spec_to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const nlohmann::json& j);

}  // namespace fci::nn
