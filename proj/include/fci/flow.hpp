#pragma once

// Per-class roundtrip model: generator (latent -> input), inverse map
// (input -> latent), discriminator (input -> probability) and a logistic
// class head on the latent, together with the training losses and loop.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fci/nn/adam.hpp"
#include "fci/nn/autodiff.hpp"
#include "fci/nn/mlp.hpp"

namespace fci::flow {

using nn::Tensor;
using nn::Var;

struct LatentSpec {
  std::size_t dim = 2;

  // d >= 1 and d <= input_dim.
  void validate(std::size_t input_dim) const;
};

struct FlowArchitecture {
  LatentSpec latent;
  std::vector<std::size_t> generator_hidden{32, 32};
  std::vector<std::size_t> inverse_hidden{32, 32};
  std::vector<std::size_t> discriminator_hidden{32, 32};
  nn::Activation hidden_activation = nn::Activation::LeakyRelu;

  void validate(std::size_t input_dim) const;
  nlohmann::json to_json() const;
  static FlowArchitecture from_json(const nlohmann::json& j);
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double lr_generator = 1e-3;
  double lr_discriminator = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double w_gan = 1.0;
  double w_mmd = 1.0;
  double w_cycle = 1.0;
  double w_pred = 1.0;
  std::size_t discriminator_steps = 1;
  // Unset: median heuristic over the first minibatch union of each epoch.
  std::optional<double> kernel_bandwidth;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// h(z) = sigmoid(b - exp(s) |z|^2), an estimate of P(Y = label | z). The head
// only sees the squared latent norm, the statistic the non-conformity score
// uses, and is decreasing in it: fine-tuning can only pull the class towards
// the origin and push other classes outward.
class LogisticHead {
 public:
  LogisticHead() = default;
  explicit LogisticHead(std::size_t latent_dim);
  LogisticHead(std::size_t latent_dim, double log_rate, double bias);

  std::size_t latent_dim() const { return latent_dim_; }
  double log_rate() const { return log_rate_.value[0]; }
  double bias() const { return bias_.value[0]; }
  Var forward(nn::Graph& g, const Var& z);
  Tensor infer(const Tensor& z) const;
  std::vector<nn::Parameter*> params() { return {&log_rate_, &bias_}; }

  nlohmann::json to_json() const;
  static LogisticHead from_json(const nlohmann::json& j);

 private:
  std::size_t latent_dim_ = 0;
  nn::Parameter log_rate_;  // (1, 1)
  nn::Parameter bias_;      // (1, 1)
};

class ClassFlowModel {
 public:
  ClassFlowModel() = default;
  // Randomly initialised networks for the given architecture.
  ClassFlowModel(int label, std::size_t input_dim, const FlowArchitecture& arch, std::uint64_t seed);
  // Explicit networks; dimensions are checked against each other.
  ClassFlowModel(int label, LatentSpec latent, nn::Mlp generator, nn::Mlp inverse, nn::Mlp discriminator,
                 LogisticHead head);

  int label() const { return label_; }
  std::size_t input_dim() const { return inverse_.spec().input_width(); }
  std::size_t latent_dim() const { return latent_.dim; }
  bool trained() const { return trained_; }
  void mark_trained(bool t = true) { trained_ = t; }

  nn::Mlp& generator() { return generator_; }
  nn::Mlp& inverse() { return inverse_; }
  nn::Mlp& discriminator() { return discriminator_; }
  LogisticHead& head() { return head_; }
  const nn::Mlp& generator() const { return generator_; }
  const nn::Mlp& inverse() const { return inverse_; }
  const nn::Mlp& discriminator() const { return discriminator_; }
  const LogisticHead& head() const { return head_; }

  // (batch, input_dim) -> (batch, d)
  Tensor encode(const Tensor& x) const;
  // (batch, d) -> (batch, input_dim)
  Tensor generate(const Tensor& z) const;

  const std::optional<TrainConfig>& config() const { return config_; }
  void set_config(TrainConfig c) { config_ = std::move(c); }

  nlohmann::json to_json() const;
  static ClassFlowModel from_json(const nlohmann::json& j);

 private:
  int label_ = 1;
  LatentSpec latent_;
  nn::Mlp generator_;
  nn::Mlp inverse_;
  nn::Mlp discriminator_;
  LogisticHead head_;
  std::optional<TrainConfig> config_;
  bool trained_ = false;
};

// Loss building blocks on recorded probabilities and tensors.
Var discriminator_loss(const Var& d_real, const Var& d_fake);
Var generator_loss(const Var& d_fake);
Var cycle_loss(const Var& x, const Var& x_roundtrip, const Var& z, const Var& z_roundtrip);
Var pred_loss(const Var& h_pos, const Var& h_neg);

struct GanLosses {
  double d_loss = 0.0;
  double g_loss = 0.0;
};

GanLosses loss_forward_gan(const ClassFlowModel& model, const Tensor& real, const Tensor& z);
double loss_backward_mmd(const ClassFlowModel& model, const Tensor& real, const Tensor& z, double bandwidth);
double loss_cycle(const ClassFlowModel& model, const Tensor& real, const Tensor& z);
double loss_pred_finetune(const ClassFlowModel& model, const Tensor& pos, const Tensor& neg);

// Per-epoch means of each tracked loss.
struct LossTrace {
  std::vector<double> d_loss;
  std::vector<double> g_loss;
  std::vector<double> mmd;
  std::vector<double> cycle;
  std::vector<double> pred;

  std::size_t epochs() const { return d_loss.size(); }
  std::string to_csv() const;
};

struct TrainResult {
  ClassFlowModel model;
  LossTrace trace;
};

// Standard-normal draws of shape (rows, dim).
Tensor sample_latent(std::size_t rows, std::size_t dim, std::mt19937_64& rng);

// Alternates a discriminator step, a generator-side step on the weighted sum
// of the GAN, MMD and cycle losses, and a fine-tune step of the inverse map and
// head against a negative minibatch drawn from `other` (skipped when `other`
// is empty).
TrainResult train_class_flow(int label, const Tensor& data, const Tensor& other, const FlowArchitecture& arch,
                             const TrainConfig& config);

}  // namespace fci::flow
