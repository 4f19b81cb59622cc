#include "fci/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fci/error.hpp"
#include "fci/mmd.hpp"

namespace fci::flow {

namespace {

nlohmann::json optional_to_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

void LatentSpec::validate(std::size_t input_dim) const {
  if (dim < 1) throw invalid_argument("latent dimension must be >= 1");
  if (dim > input_dim) {
    throw invalid_argument("latent dimension " + std::to_string(dim) + " exceeds input dimension " +
                           std::to_string(input_dim));
  }
}

void FlowArchitecture::validate(std::size_t input_dim) const {
  latent.validate(input_dim);
  for (const auto* h : {&generator_hidden, &inverse_hidden, &discriminator_hidden}) {
    for (auto w : *h) {
      if (w == 0) throw invalid_argument("hidden widths must be >= 1");
    }
  }
}

nlohmann::json FlowArchitecture::to_json() const {
  return {{"latent_dim", latent.dim},
          {"generator_hidden", generator_hidden},
          {"inverse_hidden", inverse_hidden},
          {"discriminator_hidden", discriminator_hidden},
          {"hidden_activation", nn::activation_name(hidden_activation)}};
}

FlowArchitecture FlowArchitecture::from_json(const nlohmann::json& j) {
  FlowArchitecture a;
  a.latent.dim = j.value("latent_dim", a.latent.dim);
  a.generator_hidden = j.value("generator_hidden", a.generator_hidden);
  a.inverse_hidden = j.value("inverse_hidden", a.inverse_hidden);
  a.discriminator_hidden = j.value("discriminator_hidden", a.discriminator_hidden);
  if (j.contains("hidden_activation")) a.hidden_activation = nn::parse_activation(j.at("hidden_activation"));
  return a;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw invalid_argument("epochs must be >= 1");
  if (batch_size < 2) throw invalid_argument("batch size must be >= 2");
  if (discriminator_steps < 1) throw invalid_argument("discriminator steps must be >= 1");
  for (double w : {w_gan, w_mmd, w_cycle, w_pred}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw invalid_argument("loss weights must be finite and >= 0");
  }
  for (double lr : {lr_generator, lr_discriminator}) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw invalid_argument("learning rates must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw invalid_argument("adam betas must lie in [0, 1)");
  }
  if (kernel_bandwidth && !(*kernel_bandwidth > 0.0)) throw invalid_argument("kernel bandwidth must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_generator", lr_generator},
          {"lr_discriminator", lr_discriminator},
          {"beta1", beta1},
          {"beta2", beta2},
          {"w_gan", w_gan},
          {"w_mmd", w_mmd},
          {"w_cycle", w_cycle},
          {"w_pred", w_pred},
          {"discriminator_steps", discriminator_steps},
          {"kernel_bandwidth", optional_to_json(kernel_bandwidth)},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_generator = j.value("lr_generator", c.lr_generator);
  c.lr_discriminator = j.value("lr_discriminator", c.lr_discriminator);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.w_gan = j.value("w_gan", c.w_gan);
  c.w_mmd = j.value("w_mmd", c.w_mmd);
  c.w_cycle = j.value("w_cycle", c.w_cycle);
  c.w_pred = j.value("w_pred", c.w_pred);
  c.discriminator_steps = j.value("discriminator_steps", c.discriminator_steps);
  if (j.contains("kernel_bandwidth") && !j.at("kernel_bandwidth").is_null()) {
    c.kernel_bandwidth = j.at("kernel_bandwidth").get<double>();
  }
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------

// Starts at h = 1/2 on the sphere |z|^2 = d, the mean of the target chi-square.
LogisticHead::LogisticHead(std::size_t latent_dim)
    : LogisticHead(latent_dim, 0.0, static_cast<double>(latent_dim)) {}

LogisticHead::LogisticHead(std::size_t latent_dim, double log_rate, double bias)
    : latent_dim_(latent_dim), log_rate_(Tensor::scalar(log_rate)), bias_(Tensor::scalar(bias)) {
  if (latent_dim < 1) throw invalid_argument("classifier head needs latent dimension >= 1");
}

Var LogisticHead::forward(nn::Graph& g, const Var& z) {
  if (z.cols() != latent_dim()) throw invalid_argument("classifier head: latent width mismatch");
  Var sq = nn::row_sum(nn::square(z));
  Var rate = nn::scale(nn::exp(g.param(log_rate_)), -1.0);
  return nn::sigmoid(nn::add_bias(nn::matmul(sq, rate), g.param(bias_)));
}

Tensor LogisticHead::infer(const Tensor& z) const {
  if (z.cols() != latent_dim()) throw invalid_argument("classifier head: latent width mismatch");
  Tensor out = Tensor::matrix(z.rows(), 1);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double sq = 0.0;
    for (double v : z.row(i)) sq += v * v;
    out(i, 0) = nn::activation_value(nn::Activation::Sigmoid, bias() - std::exp(log_rate()) * sq);
  }
  return out;
}

nlohmann::json LogisticHead::to_json() const {
  return {{"latent_dim", latent_dim_}, {"log_rate", log_rate()}, {"bias", bias()}};
}

LogisticHead LogisticHead::from_json(const nlohmann::json& j) {
  return LogisticHead(j.at("latent_dim").get<std::size_t>(), j.at("log_rate").get<double>(), j.at("bias").get<double>());
}

// ---------------------------------------------------------------------------

ClassFlowModel::ClassFlowModel(int label, std::size_t input_dim, const FlowArchitecture& arch, std::uint64_t seed)
    : label_(label), latent_(arch.latent), head_(arch.latent.dim) {
  arch.validate(input_dim);
  std::mt19937_64 rng(seed);
  const auto act = arch.hidden_activation;
  const auto d = arch.latent.dim;
  generator_ = nn::Mlp(nn::MlpSpec::make(d, arch.generator_hidden, input_dim, act, nn::Activation::Identity), rng);
  inverse_ = nn::Mlp(nn::MlpSpec::make(input_dim, arch.inverse_hidden, d, act, nn::Activation::Identity), rng);
  discriminator_ =
      nn::Mlp(nn::MlpSpec::make(input_dim, arch.discriminator_hidden, 1, act, nn::Activation::Sigmoid), rng);
}

ClassFlowModel::ClassFlowModel(int label, LatentSpec latent, nn::Mlp generator, nn::Mlp inverse,
                               nn::Mlp discriminator, LogisticHead head)
    : label_(label),
      latent_(latent),
      generator_(std::move(generator)),
      inverse_(std::move(inverse)),
      discriminator_(std::move(discriminator)),
      head_(std::move(head)) {
  const auto p = inverse_.spec().input_width();
  latent_.validate(p);
  if (inverse_.spec().output_width() != latent_.dim || generator_.spec().input_width() != latent_.dim ||
      generator_.spec().output_width() != p || discriminator_.spec().input_width() != p ||
      discriminator_.spec().output_width() != 1 || head_.latent_dim() != latent_.dim) {
    throw invalid_argument("class flow networks have inconsistent dimensions");
  }
}

Tensor ClassFlowModel::encode(const Tensor& x) const {
  if (x.cols() != input_dim()) {
    throw invalid_argument("encode: expected " + std::to_string(input_dim()) + " features, got " +
                           std::to_string(x.cols()));
  }
  return inverse_.infer(x);
}

Tensor ClassFlowModel::generate(const Tensor& z) const {
  if (z.cols() != latent_dim()) {
    throw invalid_argument("generate: expected latent width " + std::to_string(latent_dim()) + ", got " +
                           std::to_string(z.cols()));
  }
  return generator_.infer(z);
}

nlohmann::json ClassFlowModel::to_json() const {
  return {{"version", 1},
          {"class_label", label_},
          {"latent", {{"dim", latent_.dim}, {"base", "standard-normal"}}},
          {"trained", trained_},
          {"generator", generator_.to_json()},
          {"inverse", inverse_.to_json()},
          {"discriminator", discriminator_.to_json()},
          {"classifier_head", head_.to_json()},
          {"train_config", config_ ? config_->to_json() : nlohmann::json()}};
}

ClassFlowModel ClassFlowModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw data_error("unsupported model bundle version");
    LatentSpec latent{j.at("latent").at("dim").get<std::size_t>()};
    ClassFlowModel m(j.at("class_label").get<int>(), latent, nn::Mlp::from_json(j.at("generator")),
                     nn::Mlp::from_json(j.at("inverse")), nn::Mlp::from_json(j.at("discriminator")),
                     LogisticHead::from_json(j.at("classifier_head")));
    m.trained_ = j.at("trained").get<bool>();
    if (j.contains("train_config") && !j.at("train_config").is_null()) {
      m.config_ = TrainConfig::from_json(j.at("train_config"));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed model bundle: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

Var discriminator_loss(const Var& d_real, const Var& d_fake) {
  return nn::scale(nn::add(nn::mean(nn::log_prob(d_real)), nn::mean(nn::log_prob(nn::one_minus(d_fake)))), -1.0);
}

Var generator_loss(const Var& d_fake) { return nn::scale(nn::mean(nn::log_prob(d_fake)), -1.0); }

Var cycle_loss(const Var& x, const Var& x_roundtrip, const Var& z, const Var& z_roundtrip) {
  return nn::add(nn::mean(nn::row_norm(nn::sub(x, x_roundtrip))), nn::mean(nn::row_norm(nn::sub(z, z_roundtrip))));
}

Var pred_loss(const Var& h_pos, const Var& h_neg) {
  return nn::scale(nn::add(nn::mean(nn::log_prob(h_pos)), nn::mean(nn::log_prob(nn::one_minus(h_neg)))), -1.0);
}

GanLosses loss_forward_gan(const ClassFlowModel& model, const Tensor& real, const Tensor& z) {
  if (real.rows() == 0 || z.rows() == 0) throw invalid_argument("GAN loss needs non-empty batches");
  nn::Graph g;
  auto d_real = g.constant(model.discriminator().infer(real));
  auto d_fake = g.constant(model.discriminator().infer(model.generate(z)));
  return {discriminator_loss(d_real, d_fake).value()[0], generator_loss(d_fake).value()[0]};
}

double loss_backward_mmd(const ClassFlowModel& model, const Tensor& real, const Tensor& z, double bandwidth) {
  if (real.rows() < 2) throw invalid_argument("MMD loss needs a batch of at least 2");
  return mmd::mmd2_unbiased(model.encode(real), z, bandwidth).value;
}

double loss_cycle(const ClassFlowModel& model, const Tensor& real, const Tensor& z) {
  nn::Graph g;
  auto x = g.constant(real);
  auto zz = g.constant(z);
  auto x_rt = g.constant(model.generate(model.encode(real)));
  auto z_rt = g.constant(model.encode(model.generate(z)));
  return cycle_loss(x, x_rt, zz, z_rt).value()[0];
}

double loss_pred_finetune(const ClassFlowModel& model, const Tensor& pos, const Tensor& neg) {
  if (pos.rows() == 0 || neg.rows() == 0) throw invalid_argument("fine-tune loss needs non-empty batches");
  nn::Graph g;
  auto hp = g.constant(model.head().infer(model.encode(pos)));
  auto hn = g.constant(model.head().infer(model.encode(neg)));
  return pred_loss(hp, hn).value()[0];
}

std::string LossTrace::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,d_loss,g_loss,mmd,cycle,pred\n";
  for (std::size_t e = 0; e < epochs(); ++e) {
    os << (e + 1) << ',' << d_loss[e] << ',' << g_loss[e] << ',' << mmd[e] << ',' << cycle[e] << ',' << pred[e]
       << '\n';
  }
  return os.str();
}

Tensor sample_latent(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor z = Tensor::matrix(rows, dim);
  for (auto& v : z.values()) v = n01(rng);
  return z;
}

namespace {

std::vector<nn::Parameter*> concat(std::vector<nn::Parameter*> a, const std::vector<nn::Parameter*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void check_finite(double v, const char* what, std::size_t epoch, std::size_t iter) {
  if (!std::isfinite(v)) {
    throw runtime_error(std::string("non-finite ") + what + " loss at epoch " + std::to_string(epoch + 1) +
                        ", iteration " + std::to_string(iter + 1));
  }
}

}  // namespace

TrainResult train_class_flow(int label, const Tensor& data, const Tensor& other, const FlowArchitecture& arch,
                             const TrainConfig& config) {
  config.validate();
  if (data.rows() < 2 * config.batch_size) {
    throw data_error("class " + std::to_string(label) + " has " + std::to_string(data.rows()) +
                     " samples; training needs at least " + std::to_string(2 * config.batch_size) +
                     " (twice the batch size)");
  }
  if (!data.all_finite()) throw data_error("class " + std::to_string(label) + " has non-finite features");
  const auto p = data.cols();
  if (other.size() != 0 && other.cols() != p) throw invalid_argument("negative sample width differs from class data");

  TrainResult result;
  result.model = ClassFlowModel(label, p, arch, config.seed);
  auto& model = result.model;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  nn::Adam opt_d({config.lr_discriminator, config.beta1, config.beta2, 1e-8});
  nn::Adam opt_gen({config.lr_generator, config.beta1, config.beta2, 1e-8});
  nn::Adam opt_pred({config.lr_generator, config.beta1, config.beta2, 1e-8});
  const auto d_params = model.discriminator().params();
  const auto gen_params = concat(model.generator().params(), model.inverse().params());
  const auto pred_params = concat(model.inverse().params(), model.head().params());
  const bool finetune = other.rows() > 0 && config.w_pred > 0.0;

  const auto d = arch.latent.dim;
  const auto bs = config.batch_size;
  const auto iters = data.rows() / bs;
  std::vector<std::size_t> order(data.rows());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_int_distribution<std::size_t> pick_other(0, other.rows() > 0 ? other.rows() - 1 : 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_d = 0, sum_g = 0, sum_mmd = 0, sum_cyc = 0, sum_pred = 0;
    double bandwidth = config.kernel_bandwidth.value_or(0.0);

    for (std::size_t it = 0; it < iters; ++it) {
      const Tensor xb = data.gather_rows(std::span<const std::size_t>(order).subspan(it * bs, bs));

      if (!config.kernel_bandwidth && it == 0) {
        Tensor probe = sample_latent(bs, d, rng);
        bandwidth = mmd::median_bandwidth(mmd::stack_rows(model.encode(xb), probe));
      }

      // (a) discriminator
      double dl = 0.0;
      for (std::size_t k = 0; k < config.discriminator_steps; ++k) {
        const Tensor fake = model.generate(sample_latent(bs, d, rng));
        nn::Graph g;
        auto d_real = model.discriminator().forward(g, g.constant(xb));
        auto d_fake = model.discriminator().forward(g, g.constant(fake));
        auto loss = discriminator_loss(d_real, d_fake);
        dl = loss.value()[0];
        check_finite(dl, "discriminator", epoch, it);
        g.backward(loss);
        opt_d.step(d_params);
      }

      // (b) generator and inverse map
      double gl, ml, cl;
      {
        nn::Graph g;
        auto x = g.constant(xb);
        auto z = g.constant(sample_latent(bs, d, rng));
        auto z_ref = g.constant(sample_latent(bs, d, rng));
        auto fake = model.generator().forward(g, z);
        auto g_loss = generator_loss(model.discriminator().forward(g, fake, false));
        auto enc = model.inverse().forward(g, x);
        auto mmd_loss = mmd::mmd2_unbiased(enc, z_ref, bandwidth);
        auto cyc = cycle_loss(x, model.generator().forward(g, enc), z, model.inverse().forward(g, fake));
        auto total = nn::add(nn::add(nn::scale(g_loss, config.w_gan), nn::scale(mmd_loss, config.w_mmd)),
                             nn::scale(cyc, config.w_cycle));
        gl = g_loss.value()[0];
        ml = mmd_loss.value()[0];
        cl = cyc.value()[0];
        check_finite(total.value()[0], "generator-side", epoch, it);
        g.backward(total);
        opt_gen.step(gen_params);
      }

      // (c) fine-tune of the inverse map and class head
      double pl = 0.0;
      if (finetune) {
        std::vector<std::size_t> neg_idx(bs);
        for (auto& i : neg_idx) i = pick_other(rng);
        nn::Graph g;
        auto h_pos = model.head().forward(g, model.inverse().forward(g, g.constant(xb)));
        auto h_neg = model.head().forward(g, model.inverse().forward(g, g.constant(other.gather_rows(neg_idx))));
        auto loss = pred_loss(h_pos, h_neg);
        pl = loss.value()[0];
        check_finite(pl, "fine-tune", epoch, it);
        g.backward(nn::scale(loss, config.w_pred));
        opt_pred.step(pred_params);
      }

      sum_d += dl;
      sum_g += gl;
      sum_mmd += ml;
      sum_cyc += cl;
      sum_pred += pl;
    }

    const double n = static_cast<double>(iters);
    result.trace.d_loss.push_back(sum_d / n);
    result.trace.g_loss.push_back(sum_g / n);
    result.trace.mmd.push_back(sum_mmd / n);
    result.trace.cycle.push_back(sum_cyc / n);
    result.trace.pred.push_back(sum_pred / n);
  }

  if (!model.generator().finite() || !model.inverse().finite() || !model.discriminator().finite()) {
    throw runtime_error("class " + std::to_string(label) + ": training produced non-finite parameters");
  }
  model.set_config(config);
  model.mark_trained();
  return result;
}

}  // namespace fci::flow
