#include "fci/nn/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "fci/error.hpp"

namespace fci::nn {

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

Var Graph::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (&p.graph() != this) throw invalid_argument("operands belong to different graphs");
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor* Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

Tensor Graph::grad(const Var& v) const {
  const auto& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw invalid_argument("backward requires a scalar loss, got shape " + loss.value().shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())->fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, nodes_[i].grad);
    auto& node = nodes_[i];
    if (node.param != nullptr) {
      auto& pg = node.param->grad.values();
      const auto& g = node.grad.values();
      for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
    }
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                           b.value().shape_string());
  }
}

// Elementwise unary op: value f(x), derivative df(x, y) where y = f(x).
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  const auto& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const auto ia = a.id();
  const Var parents[] = {a};
  const auto out_id = a.graph().size();
  return a.graph().record(std::move(y), parents, [ia, out_id, df](Graph& g, const Tensor& go) {
    auto* ga = g.grad_buffer(ia);
    if (!ga) return;
    const auto& xv = g.value_at(ia);
    const auto& yv = g.value_at(out_id);
    for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) {
    throw invalid_argument("matmul: inner dimensions differ " + A.shape_string() + " x " + B.shape_string());
  }
  const auto n = A.rows(), k = A.cols(), m = B.cols();
  Tensor C = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      const double* brow = &B.values()[p * m];
      double* crow = &C.values()[i * m];
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.graph().record(std::move(C), parents, [ia, ib, n, k, m](Graph& g, const Tensor& go) {
    if (auto* ga = g.grad_buffer(ia)) {
      const auto& Bv = g.value_at(ib);
      // dA = dC * B^T
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += go[i * m + j] * Bv[p * m + j];
          (*ga)[i * k + p] += s;
        }
      }
    }
    if (auto* gb = g.grad_buffer(ib)) {
      const auto& Av = g.value_at(ia);
      // dB = A^T * dC
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) (*gb)[p * m + j] += aip * go[i * m + j];
        }
      }
    }
  });
}

Var add_bias(const Var& a, const Var& bias) {
  const auto& A = a.value();
  const auto& b = bias.value();
  if (b.size() != A.cols()) {
    throw invalid_argument("add_bias: bias " + b.shape_string() + " does not match " + A.shape_string());
  }
  Tensor out = A;
  const auto n = A.rows(), c = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += b[j];
  const auto ia = a.id(), ib = bias.id();
  const Var parents[] = {a, bias};
  return a.graph().record(std::move(out), parents, [ia, ib, n, c](Graph& g, const Tensor& go) {
    if (auto* ga = g.grad_buffer(ia))
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    if (auto* gb = g.grad_buffer(ib))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += go[i * c + j];
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const auto ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.graph().record(std::move(out), parents, [ia, ib](Graph& g, const Tensor& go) {
    if (auto* ga = g.grad_buffer(ia))
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    if (auto* gb = g.grad_buffer(ib))
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.graph().record(std::move(out), parents, [ia, ib](Graph& g, const Tensor& go) {
    if (auto* ga = g.grad_buffer(ia))
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    if (auto* gb = g.grad_buffer(ib))
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.graph().record(std::move(out), parents, [ia, ib](Graph& g, const Tensor& go) {
    if (auto* ga = g.grad_buffer(ia)) {
      const auto& bv = g.value_at(ib);
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * bv[i];
    }
    if (auto* gb = g.grad_buffer(ib)) {
      const auto& av = g.value_at(ia);
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var concat_cols(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rows() != B.rows()) throw invalid_argument("concat_cols: row counts differ");
  const auto n = A.rows(), ca = A.cols(), cb = B.cols();
  Tensor out = Tensor::matrix(n, ca + cb);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = A(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = B(i, j);
  }
  const auto ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.graph().record(std::move(out), parents, [ia, ib, n, ca, cb](Graph& g, const Tensor& go) {
    const auto c = ca + cb;
    if (auto* ga = g.grad_buffer(ia))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ca; ++j) (*ga)[i * ca + j] += go[i * c + j];
    if (auto* gb = g.grad_buffer(ib))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cb; ++j) (*gb)[i * cb + j] += go[i * c + ca + j];
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return activation_value(Activation::Sigmoid, x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var activate(const Var& a, Activation act) {
  switch (act) {
    case Activation::Identity: return a;
    case Activation::Relu: return relu(a);
    case Activation::LeakyRelu: return leaky_relu(a);
    case Activation::Tanh: return tanh(a);
    case Activation::Sigmoid: return sigmoid(a);
  }
  return a;
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(std::max(x, 0.0)); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var log_prob(const Var& p) {
  auto clampp = [](double x) { return std::clamp(x, kProbEpsilon, 1.0 - kProbEpsilon); };
  return unary(
      p, [clampp](double x) { return std::log(clampp(x)); },
      [clampp](double x, double) { return 1.0 / clampp(x); });
}

Var one_minus(const Var& p) {
  return unary(
      p, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  const Var parents[] = {a};
  return a.graph().record(Tensor::scalar(s), parents, [ia](Graph& g, const Tensor& go) {
    if (auto* ga = g.grad_buffer(ia))
      for (auto& v : ga->values()) v += go[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(const Var& a) {
  const auto& A = a.value();
  const auto n = A.rows(), c = A.cols();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += A(i, j);
    out(i, 0) = s;
  }
  const auto ia = a.id();
  const Var parents[] = {a};
  return a.graph().record(std::move(out), parents, [ia, n, c](Graph& g, const Tensor& go) {
    if (auto* ga = g.grad_buffer(ia))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += go[i];
  });
}

Var row_norm(const Var& a) { return sqrt(row_sum(square(a))); }

Var pairwise_sqdist(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols()) {
    throw invalid_argument("pairwise_sqdist: dimension mismatch " + A.shape_string() + " vs " + B.shape_string());
  }
  const auto m = A.rows(), n = B.rows(), d = A.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = A(i, k) - B(j, k);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  const auto ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.graph().record(std::move(out), parents, [ia, ib, m, n, d](Graph& g, const Tensor& go) {
    auto* ga = g.grad_buffer(ia);
    auto* gb = g.grad_buffer(ib);
    const auto& Av = g.value_at(ia);
    const auto& Bv = g.value_at(ib);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double w = 2.0 * go[i * n + j];
        if (w == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = Av[i * d + k] - Bv[j * d + k];
          if (ga) (*ga)[i * d + k] += w * diff;
          if (gb) (*gb)[j * d + k] -= w * diff;
        }
      }
    }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const auto& L = logits.value();
  const auto n = L.rows(), c = L.cols();
  if (labels.size() != n) throw invalid_argument("softmax_cross_entropy: label count mismatch");
  Tensor probs = Tensor::matrix(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw invalid_argument("softmax_cross_entropy: label out of range");
    const auto row = L.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs(i, j) = std::exp(row[j] - mx) / z;
    loss -= (row[labels[i]] - mx) - std::log(z);
  }
  loss /= static_cast<double>(n);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  const auto il = logits.id();
  const Var parents[] = {logits};
  return logits.graph().record(
      Tensor::scalar(loss), parents,
      [il, n, c, probs = std::move(probs), lab = std::move(lab)](Graph& g, const Tensor& go) {
        auto* gl = g.grad_buffer(il);
        if (!gl) return;
        const double w = go[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j)
            (*gl)[i * c + j] += w * (probs(i, j) - (j == lab[i] ? 1.0 : 0.0));
      });
}

double activation_value(Activation act, double x) {
  switch (act) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::LeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Sigmoid:
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      else {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
  }
  return x;
}

const char* activation_name(Activation act) {
  switch (act) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky-relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "leaky-relu") return Activation::LeakyRelu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw invalid_argument("unknown activation '" + name + "'");
}

}  // namespace fci::nn
