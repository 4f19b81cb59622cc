#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fci/error.hpp"
#include "fci/mmd.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fci;
using nn::Tensor;
using fci::testing::normal_tensor;

TEST_CASE("kernel: identical points give 1") {
  const double u[] = {0.3, -1.0, 2.0};
  CHECK(mmd::kernel_eval(0.7, u, u) == 1.0);
}

TEST_CASE("kernel: 1-D points 0 and 1 at bandwidth 1 give exp(-1)") {
  const double u[] = {0.0}, v[] = {1.0};
  CHECK(mmd::kernel_eval(1.0, u, v) == doctest::Approx(0.36787944117144233).epsilon(1e-15));
}

TEST_CASE("kernel: symmetric, bounded, dimension checked") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto a = normal_tensor(1, 3, rng), b = normal_tensor(1, 3, rng);
    const double k = mmd::kernel_eval(1.5, a.row(0), b.row(0));
    CHECK(k == mmd::kernel_eval(1.5, b.row(0), a.row(0)));
    CHECK(k > 0.0);
    CHECK(k < 1.0);
  }
  const double u[] = {0.0, 1.0}, v[] = {0.0};
  CHECK_THROWS_AS(mmd::kernel_eval(1.0, u, v), fci::Error);
  CHECK_THROWS_AS(mmd::KernelSpec::fixed(0.0), fci::Error);
}

TEST_CASE("median bandwidth: hand examples") {
  CHECK(mmd::median_bandwidth(Tensor::from_rows({{0.0}, {1.0}, {2.0}})) == 1.0);
  CHECK(mmd::median_bandwidth(Tensor::from_rows({{0.0, 0.0}, {3.0, 4.0}})) == 5.0);
  // Median zero but mean positive: three copies of one point and one other.
  const double fallback = mmd::median_bandwidth(Tensor::from_rows({{0.0}, {0.0}, {0.0}, {6.0}}));
  CHECK(fallback == doctest::Approx(3.0));
  try {
    mmd::median_bandwidth(Tensor::from_rows({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}}));
    FAIL("expected a degenerate-sample error");
  } catch (const fci::Error& e) {
    CHECK(std::string(e.what()).find("degenerate sample for bandwidth") != std::string::npos);
  }
}

TEST_CASE("mmd2: U = V = {a, a} gives 0") {
  const auto a = Tensor::from_rows({{1.0, 2.0}, {1.0, 2.0}});
  CHECK(mmd::mmd2_unbiased(a, a, 1.0).value == 0.0);
}

TEST_CASE("mmd2: U = V = {0, 1} at bandwidth 1 gives e^-1 - 1") {
  const auto u = Tensor::from_rows({{0.0}, {1.0}});
  const auto est = mmd::mmd2_unbiased(u, u, 1.0);
  CHECK(est.value == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-14));
  CHECK(est.value < 0.0);
  CHECK(est.m == 2);
  CHECK(est.n == 2);
}

TEST_CASE("mmd2: matches the brute-force triple sum") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto u = normal_tensor(5, 2, rng), v = normal_tensor(5, 2, rng);
    const double bw = 0.5 + (i % 7) * 0.3;
    CHECK(std::abs(mmd::mmd2_unbiased(u, v, bw).value - fci::testing::brute_mmd2(u, v, bw)) < 1e-12);
  }
}

TEST_CASE("mmd2: size and width errors") {
  const auto one = Tensor::from_rows({{0.0}});
  const auto two = Tensor::from_rows({{0.0}, {1.0}});
  CHECK_THROWS_AS(mmd::mmd2_unbiased(one, two, 1.0), fci::Error);
  CHECK_THROWS_AS(mmd::mmd2_unbiased(two, one, 1.0), fci::Error);
  CHECK_THROWS_AS(mmd::mmd2_unbiased(two, Tensor::from_rows({{0.0, 1.0}, {1.0, 0.0}}), 1.0), fci::Error);
}

TEST_CASE("property: swap symmetry is exact") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto u = normal_tensor(4 + i % 5, 3, rng), v = normal_tensor(3 + i % 4, 3, rng);
    CHECK(mmd::mmd2_unbiased(u, v, 1.1).value == mmd::mmd2_unbiased(v, u, 1.1).value);
    CHECK(mmd::mmd2_unbiased(u, v, mmd::KernelSpec::median()).value ==
          mmd::mmd2_unbiased(v, u, mmd::KernelSpec::median()).value);
  }
}

TEST_CASE("property: tape value equals the plain estimator") {
  std::mt19937_64 rng(4);
  const auto u = normal_tensor(6, 2, rng), v = normal_tensor(7, 2, rng);
  nn::Graph g;
  auto val = mmd::mmd2_unbiased(g.constant(u), g.constant(v), 0.9).value()[0];
  CHECK(val == doctest::Approx(mmd::mmd2_unbiased(u, v, 0.9).value).epsilon(1e-14));
}

TEST_CASE("property: null mean within 4 standard errors of zero") {
  std::mt19937_64 rng(5);
  const auto s = fci::testing::null_mmd_summary(2000, 20, rng);
  CHECK(std::abs(s.mean) < 4.0 * s.se);
}

TEST_CASE("property: separated samples exceed 10 null standard deviations") {
  std::mt19937_64 rng(6);
  auto u = normal_tensor(200, 1, rng);
  auto v = normal_tensor(200, 1, rng);
  for (auto& x : v.values()) x += 5.0;
  const double value = mmd::mmd2_unbiased(u, v, mmd::KernelSpec::median()).value;
  // Null spread at the same size.
  std::vector<double> null;
  for (int r = 0; r < 40; ++r) {
    null.push_back(
        mmd::mmd2_unbiased(normal_tensor(200, 1, rng), normal_tensor(200, 1, rng), mmd::KernelSpec::median()).value);
  }
  double m = 0, ss = 0;
  for (double x : null) m += x;
  m /= null.size();
  for (double x : null) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / (null.size() - 1));
  CHECK(value > 10.0 * sd);
}

TEST_CASE("property: gradient with respect to U matches finite differences") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10; ++i) {
    const auto u = normal_tensor(4, 2, rng), v = normal_tensor(5, 2, rng);
    auto r = fci::testing::check_input_gradients(
        u, [&](nn::Graph& g, const nn::Var& x) { return mmd::mmd2_unbiased(x, g.constant(v), 1.2); });
    CHECK(r.ok);
    // And with respect to V.
    auto r2 = fci::testing::check_input_gradients(
        v, [&](nn::Graph& g, const nn::Var& y) { return mmd::mmd2_unbiased(g.constant(u), y, 1.2); });
    CHECK(r2.ok);
  }
}
