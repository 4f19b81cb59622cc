#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fci/error.hpp"
#include "fci/flow.hpp"
#include "fci/mmd.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fci;
using namespace fci::flow;
using nn::Graph;
using nn::Mlp;
using nn::Tensor;
using fci::testing::normal_tensor;

namespace {

const double kLog4 = 2.0 * std::log(2.0);

// A discriminator that answers 0.5 everywhere.
Mlp flat_discriminator(std::size_t p) {
  std::mt19937_64 rng(0);
  Mlp d(nn::MlpSpec::make(p, {}, 1, nn::Activation::Identity, nn::Activation::Sigmoid), rng);
  for (auto* q : d.params()) q->value.fill(0.0);
  return d;
}

Tensor identity_matrix(std::size_t n) {
  Tensor t = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

ClassFlowModel identity_model(std::size_t p) {
  return ClassFlowModel(1, LatentSpec{p}, Mlp::identity(p), Mlp::identity(p), flat_discriminator(p), LogisticHead(p));
}

Tensor gaussian_rows(std::size_t n, std::vector<double> mean, std::mt19937_64& rng) {
  auto t = normal_tensor(n, mean.size(), rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < mean.size(); ++j) t(i, j) += mean[j];
  return t;
}

}  // namespace

TEST_CASE("latent spec: 1 <= d <= input dimension") {
  CHECK_THROWS_AS(LatentSpec{0}.validate(3), fci::Error);
  CHECK_THROWS_AS(LatentSpec{4}.validate(3), fci::Error);
  CHECK_NOTHROW(LatentSpec{2}.validate(3));
  CHECK_NOTHROW(LatentSpec{1}.validate(1));
}

TEST_CASE("gan loss: uninformative discriminator gives 2 log 2") {
  Graph g;
  auto half = g.constant(Tensor({4, 1}, 0.5));
  CHECK(discriminator_loss(half, half).value()[0] == doctest::Approx(kLog4).epsilon(1e-14));

  std::mt19937_64 rng(1);
  auto model = identity_model(2);
  const auto losses = loss_forward_gan(model, normal_tensor(8, 2, rng), normal_tensor(8, 2, rng));
  CHECK(losses.d_loss == doctest::Approx(kLog4).epsilon(1e-14));
  CHECK(losses.g_loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("gan loss: perfect discriminator gives about 0") {
  Graph g;
  auto real = g.constant(Tensor({3, 1}, 1.0 - nn::kProbEpsilon));
  auto fake = g.constant(Tensor({3, 1}, nn::kProbEpsilon));
  CHECK(discriminator_loss(real, fake).value()[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(discriminator_loss(real, fake).value()[0] < 1e-6);
}

TEST_CASE("gan loss: generator loss strictly decreases as D(G(Z)) rises") {
  double prev = INFINITY;
  for (double p = 0.05; p < 1.0; p += 0.05) {
    Graph g;
    const double v = generator_loss(g.constant(Tensor({2, 1}, p))).value()[0];
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("mmd loss: identity encoder on latent draws is within null noise") {
  std::mt19937_64 rng(2);
  auto model = identity_model(2);
  const std::size_t n = 300;
  const double value = loss_backward_mmd(model, normal_tensor(n, 2, rng), normal_tensor(n, 2, rng), 1.0);
  std::vector<double> null;
  for (int r = 0; r < 60; ++r) {
    null.push_back(mmd::mmd2_unbiased(normal_tensor(n, 2, rng), normal_tensor(n, 2, rng), 1.0).value);
  }
  CHECK(std::abs(value) < 4.0 * fci::testing::summarize(null).sd);
}

TEST_CASE("mmd loss: constant encoder matches the brute-force triple sum") {
  Tensor c = Tensor::from_rows({{1.5, -0.5}});
  auto inverse = Mlp::affine(Tensor::matrix(2, 2), c);
  ClassFlowModel model(1, LatentSpec{2}, Mlp::identity(2), inverse, flat_discriminator(2), LogisticHead(2));
  const auto x = Tensor({5, 2}, 0.7);
  std::mt19937_64 rng(3);
  const auto z = normal_tensor(5, 2, rng);
  const Tensor encoded({5, 2}, std::vector<double>{1.5, -0.5, 1.5, -0.5, 1.5, -0.5, 1.5, -0.5, 1.5, -0.5});
  CHECK(std::abs(loss_backward_mmd(model, x, z, 0.8) - fci::testing::brute_mmd2(encoded, z, 0.8)) < 1e-12);
}

TEST_CASE("mmd loss: delegates to the kernel estimator exactly") {
  std::mt19937_64 rng(4);
  auto model = ClassFlowModel(1, 3, FlowArchitecture{LatentSpec{2}}, 9);
  const auto x = normal_tensor(10, 3, rng), z = normal_tensor(10, 2, rng);
  CHECK(loss_backward_mmd(model, x, z, 1.1) == mmd::mmd2_unbiased(model.encode(x), z, 1.1).value);
  CHECK_THROWS_AS(loss_backward_mmd(model, normal_tensor(1, 3, rng), z, 1.0), fci::Error);
}

TEST_CASE("cycle loss: exact mutual inverses give 0") {
  auto g = Mlp::affine(Tensor::from_rows({{2.0}}), Tensor::from_rows({{1.0}}));
  auto i = Mlp::affine(Tensor::from_rows({{0.5}}), Tensor::from_rows({{-0.5}}));
  ClassFlowModel model(1, LatentSpec{1}, g, i, flat_discriminator(1), LogisticHead(1));
  std::mt19937_64 rng(5);
  CHECK(loss_cycle(model, normal_tensor(6, 1, rng), normal_tensor(6, 1, rng)) < 1e-14);
}

TEST_CASE("cycle loss: roundtrip offset of 3 in d = 1 gives 3") {
  Graph g;
  auto x = g.constant(Tensor::from_rows({{0.4}}));
  auto x_rt = g.constant(Tensor::from_rows({{3.4}}));
  auto z = g.constant(Tensor::from_rows({{-1.0}}));
  CHECK(cycle_loss(x, x_rt, z, z).value()[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("property: cycle loss is non-negative") {
  std::mt19937_64 rng(6);
  for (int s = 0; s < 20; ++s) {
    auto model = ClassFlowModel(1, 3, FlowArchitecture{LatentSpec{2}}, static_cast<std::uint64_t>(s));
    CHECK(loss_cycle(model, normal_tensor(5, 3, rng), normal_tensor(5, 2, rng)) >= 0.0);
  }
}

TEST_CASE("pred loss: constant head p gives -log p - log(1 - p), minimised at 1/2") {
  auto at = [](double p) {
    Graph g;
    return pred_loss(g.constant(Tensor({4, 1}, p)), g.constant(Tensor({4, 1}, p))).value()[0];
  };
  CHECK(at(0.5) == doctest::Approx(kLog4).epsilon(1e-14));
  for (double p : {0.1, 0.3, 0.45, 0.55, 0.8}) {
    CHECK(at(p) == doctest::Approx(-std::log(p) - std::log(1 - p)).epsilon(1e-13));
    CHECK(at(p) > at(0.5));
  }
}

TEST_CASE("pred loss: perfect separation gives about 0") {
  Graph g;
  auto pos = g.constant(Tensor({3, 1}, 1.0));
  auto neg = g.constant(Tensor({3, 1}, 0.0));
  CHECK(pred_loss(pos, neg).value()[0] < 1e-6);
}

TEST_CASE("pred loss at model level uses the head on the encoded batch") {
  // With log_rate = -inf-ish the head is constant sigmoid(bias).
  LogisticHead head(2, -50.0, 0.0);
  ClassFlowModel model(1, LatentSpec{2}, Mlp::identity(2), Mlp::identity(2), flat_discriminator(2), head);
  std::mt19937_64 rng(7);
  CHECK(loss_pred_finetune(model, normal_tensor(4, 2, rng), normal_tensor(4, 2, rng)) ==
        doctest::Approx(kLog4).epsilon(1e-12));
}

TEST_CASE("head: decreasing in the latent norm and differentiable") {
  LogisticHead head(2, 0.3, 1.5);
  const auto out = head.infer(Tensor::from_rows({{0.0, 0.0}, {1.0, 0.0}, {2.0, 1.0}}));
  CHECK(out[0] > out[1]);
  CHECK(out[1] > out[2]);
  CHECK(out[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.5))));
  std::mt19937_64 rng(8);
  const auto z = normal_tensor(4, 2, rng);
  auto r = fci::testing::check_gradients(
      [&](Graph& g) { return nn::sum(head.forward(g, g.constant(z))); }, head.params());
  CHECK(r.ok);
}

TEST_CASE("encode and generate: shape contract and determinism") {
  auto id = identity_model(3);
  const auto x = Tensor::from_rows({{1.0, 2.0, 3.0}, {-1.0, 0.0, 0.5}});
  CHECK(id.encode(x).values() == x.values());
  CHECK(id.generate(x).values() == x.values());

  auto model = ClassFlowModel(2, 4, FlowArchitecture{LatentSpec{2}}, 3);
  std::mt19937_64 rng(9);
  const auto batch = normal_tensor(7, 4, rng);
  const auto z1 = model.encode(batch);
  CHECK(z1.rows() == 7);
  CHECK(z1.cols() == 2);
  CHECK(model.encode(batch).values() == z1.values());
  const auto back = model.generate(z1);
  CHECK(back.rows() == 7);
  CHECK(back.cols() == 4);
  CHECK(model.generate(z1).values() == back.values());
  CHECK_THROWS_AS(model.encode(normal_tensor(2, 3, rng)), fci::Error);
  CHECK_THROWS_AS(model.generate(normal_tensor(2, 3, rng)), fci::Error);
}

TEST_CASE("model bundle round-trips exactly") {
  auto model = ClassFlowModel(3, 4, FlowArchitecture{LatentSpec{2}}, 11);
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.kernel_bandwidth = 0.5;
  model.set_config(cfg);
  model.mark_trained();
  const auto text = model.to_json().dump();
  auto back = ClassFlowModel::from_json(nlohmann::json::parse(text));
  CHECK(back.label() == 3);
  CHECK(back.trained());
  CHECK(back.latent_dim() == 2);
  CHECK(back.config()->epochs == 7);
  CHECK(*back.config()->kernel_bandwidth == 0.5);
  CHECK(back.to_json().dump() == text);
  std::mt19937_64 rng(10);
  const auto x = normal_tensor(5, 4, rng);
  CHECK(back.encode(x).values() == model.encode(x).values());
  CHECK_THROWS_AS(ClassFlowModel::from_json(nlohmann::json::parse(R"({"version":2})")), fci::Error);
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), fci::Error);
  c.epochs = 3;
  c.w_mmd = -1.0;
  CHECK_THROWS_AS(c.validate(), fci::Error);
  c.w_mmd = 0.5;
  CHECK_NOTHROW(c.validate());
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.epochs == 3);
  CHECK(back.w_mmd == 0.5);
  CHECK_FALSE(back.kernel_bandwidth.has_value());
}

TEST_CASE("training: epochs = 0 is rejected and small classes are named") {
  std::mt19937_64 rng(12);
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train_class_flow(1, normal_tensor(300, 2, rng), Tensor(), FlowArchitecture{}, cfg), fci::Error);
  cfg.epochs = 1;
  cfg.batch_size = 64;
  try {
    train_class_flow(7, normal_tensor(100, 2, rng), Tensor(), FlowArchitecture{}, cfg);
    FAIL("expected an insufficient-data error");
  } catch (const fci::Error& e) {
    CHECK(std::string(e.what()).find("class 7") != std::string::npos);
  }
}

TEST_CASE("training: trace has one entry per epoch and is deterministic") {
  std::mt19937_64 rng(13);
  const auto data = gaussian_rows(256, {1.0, -1.0}, rng);
  const auto other = gaussian_rows(256, {4.0, 4.0}, rng);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 64;
  cfg.seed = 5;
  FlowArchitecture arch;
  arch.generator_hidden = arch.inverse_hidden = arch.discriminator_hidden = {8};
  const auto a = train_class_flow(1, data, other, arch, cfg);
  const auto b = train_class_flow(1, data, other, arch, cfg);
  CHECK(a.trace.epochs() == 4);
  for (const auto* v : {&a.trace.d_loss, &a.trace.g_loss, &a.trace.mmd, &a.trace.cycle, &a.trace.pred}) {
    CHECK(v->size() == 4);
  }
  CHECK(a.trace.d_loss == b.trace.d_loss);
  CHECK(a.trace.mmd == b.trace.mmd);
  CHECK(a.trace.pred == b.trace.pred);
  CHECK(a.model.to_json() == b.model.to_json());
  CHECK(a.model.trained());
  const auto csv = a.trace.to_csv();
  CHECK(csv.rfind("epoch,d_loss,g_loss,mmd,cycle,pred\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  cfg.seed = 6;
  const auto c = train_class_flow(1, data, other, arch, cfg);
  CHECK(c.trace.d_loss != a.trace.d_loss);
}

TEST_CASE("training: 1-D N(3,1) encodes to within the null MMD 95th percentile") {
  std::mt19937_64 rng(14);
  const auto data = gaussian_rows(1000, {3.0}, rng);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 1;
  const auto result = train_class_flow(1, data, Tensor(), FlowArchitecture{LatentSpec{1}}, cfg);

  const std::size_t n = 500;
  const auto holdout = gaussian_rows(n, {3.0}, rng);
  const auto encoded = result.model.encode(holdout);
  const double observed = mmd::mmd2_unbiased(encoded, normal_tensor(n, 1, rng), mmd::KernelSpec::median()).value;
  std::vector<double> null;
  for (int r = 0; r < 200; ++r) {
    null.push_back(
        mmd::mmd2_unbiased(normal_tensor(n, 1, rng), normal_tensor(n, 1, rng), mmd::KernelSpec::median()).value);
  }
  std::sort(null.begin(), null.end());
  const double q95 = null[static_cast<std::size_t>(0.95 * null.size())];
  INFO("observed " << observed << " null q95 " << q95);
  CHECK(observed < q95);
}

TEST_CASE("property: single-class latents pass the mean/variance sanity check") {
  std::mt19937_64 rng(15);
  const auto data = gaussian_rows(2000, {4.0, 0.0}, rng);
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.seed = 2;
  const auto result = train_class_flow(1, data, Tensor(), FlowArchitecture{LatentSpec{2}}, cfg);
  const auto z = result.model.encode(gaussian_rows(500, {4.0, 0.0}, rng));
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> col;
    for (std::size_t i = 0; i < z.rows(); ++i) col.push_back(z(i, j));
    const auto s = fci::testing::summarize(col);
    INFO("coordinate " << j << " mean " << s.mean << " var " << s.sd * s.sd);
    CHECK(s.mean >= -0.2);
    CHECK(s.mean <= 0.2);
    CHECK(s.sd * s.sd >= 0.7);
    CHECK(s.sd * s.sd <= 1.3);
  }
  // Loss-decrease proxy: MMD and cycle each fall by at least 80%.
  CHECK(result.trace.mmd.back() <= 0.2 * result.trace.mmd.front());
  CHECK(result.trace.cycle.back() <= 0.2 * result.trace.cycle.front());
}
