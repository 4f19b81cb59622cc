#pragma once

// Tape-based reverse-mode differentiation over rank-2 tensors.
//
// A Graph records every operation applied to its Vars in creation order, so
// the reverse of that order is a valid topological order for backward().
// Parameters enter a graph through Graph::param(); backward() adds the
// gradient of the loss into Parameter::grad. A Graph is single-use and must
// not be shared between threads.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fci/nn/tensor.hpp"

namespace fci::nn {

struct Parameter {
  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape(), 0.0) {}

  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Graph;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // Receives the gradient flowing into the node; accumulates into parents.
  using BackwardFn = std::function<void(Graph&, const Tensor&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  // Used by op implementations. The node requires a gradient iff any parent does.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  // Gradient buffer of a node, allocated on first use; nullptr when the node
  // does not take part in differentiation.
  Tensor* grad_buffer(std::size_t id);

  // Gradient of the last backward() pass with respect to v (zeros if none).
  Tensor grad(const Var& v) const;

  // Requires a (1,1) loss. Parameter gradients are accumulated, not overwritten.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

enum class Activation { Identity, Relu, LeakyRelu, Tanh, Sigmoid };

constexpr double kLeakySlope = 0.2;
constexpr double kProbEpsilon = 1e-7;

// Linear algebra and elementwise arithmetic.
Var matmul(const Var& a, const Var& b);
Var add_bias(const Var& a, const Var& bias);  // bias is (1, cols)
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var concat_cols(const Var& a, const Var& b);

// Pointwise nonlinearities.
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = kLeakySlope);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var activate(const Var& a, Activation act);
Var exp(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);  // derivative taken as 0 at 0

// log(clamp(p, eps, 1 - eps)); the clamp is transparent to the gradient.
Var log_prob(const Var& p);
Var one_minus(const Var& p);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);
Var row_norm(const Var& a);  // Euclidean norm of each row, (n, 1)

// (m, d) x (n, d) -> (m, n) matrix of squared Euclidean distances.
Var pairwise_sqdist(const Var& a, const Var& b);

// Mean cross-entropy of row-wise softmax(logits) against 0-based labels.
Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels);

double activation_value(Activation act, double x);
const char* activation_name(Activation act);
Activation parse_activation(const std::string& name);

}  // namespace fci::nn
