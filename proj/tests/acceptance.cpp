// Acceptance run: the reference task at five fixed seeds plus the property
// checks. Prints one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fci/baselines.hpp"
#include "fci/conformal.hpp"
#include "fci/eval.hpp"
#include "fci/mmd.hpp"
#include "fci/pipeline.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fci;
namespace fs = std::filesystem;
using nn::Tensor;

namespace {

struct Verdict {
  int id;
  std::string title;
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

struct SeedRun {
  std::uint64_t seed;
  std::map<std::string, pipeline::RateReports> by_stem;
  std::vector<conformal::PValueVector> clean_pvalues;
  std::vector<int> clean_labels;
};

SeedRun run_seed(std::uint64_t seed, const fs::path& root) {
  auto cfg = pipeline::reference_config();
  cfg.seed = seed;
  cfg.output_dir = (root / ("seed_" + std::to_string(seed))).string();
  const auto t0 = std::chrono::steady_clock::now();
  SeedRun run{seed, {}, {}, {}};
  for (auto& r : pipeline::cmd_run_experiment(cfg)) run.by_stem.emplace(r.stem, std::move(r));
  const fs::path out = cfg.output_dir;
  run.clean_pvalues = conformal::read_pvalues_csv((out / "predictions/pvalues_test_rate_0.000.csv").string());
  run.clean_labels = data::read_csv((out / "data/test_rate_0.000.csv").string()).labels;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("  seed %llu finished in %.1f s\n", static_cast<unsigned long long>(seed), secs);
  std::fflush(stdout);
  return run;
}

flow::ClassFlowModel identity_model(std::size_t p) {
  std::mt19937_64 rng(0);
  nn::Mlp disc(nn::MlpSpec::make(p, {}, 1, nn::Activation::Identity, nn::Activation::Sigmoid), rng);
  flow::ClassFlowModel m(1, flow::LatentSpec{p}, nn::Mlp::identity(p), nn::Mlp::identity(p), disc,
                         flow::LogisticHead(p));
  m.mark_trained();
  return m;
}

Verdict coverage_criterion(const std::vector<SeedRun>& runs) {
  Verdict v{1, "FCI coverage at 0% contamination >= 0.93 in every seed"};
  for (const auto& r : runs) {
    const double c = r.by_stem.at("test_rate_0.000").fci.coverage;
    v.require(c >= 0.93, fmt("seed %.0f coverage %.4f", double(r.seed), c));
  }
  return v;
}

Verdict uniformity_criterion(const std::vector<SeedRun>& runs) {
  Verdict v{2, "per-class KS accepts at 0.01 in >= 4 of 5 seeds; pooled type-I in [0.03, 0.07]"};
  std::map<int, int> accepted;
  std::map<int, std::vector<double>> pooled;
  for (const auto& r : runs) {
    const auto& rep = r.by_stem.at("test_rate_0.000").fci;
    std::string line = fmt("seed %.0f", double(r.seed));
    for (const auto& k : rep.ks) {
      accepted[k.label] += k.ks.reject ? 0 : 1;
      line += fmt("  class %.0f D=%.4f (crit %.4f)", k.label, k.ks.statistic, k.ks.critical) +
              (k.ks.reject ? " reject" : " accept") + fmt(" type-I %.3f", k.type1);
    }
    v.notes.push_back("     " + line);
    for (std::size_t i = 0; i < r.clean_labels.size(); ++i) {
      const int y = r.clean_labels[i];
      if (y > 0) pooled[y].push_back(r.clean_pvalues[i][static_cast<std::size_t>(y - 1)]);
    }
  }
  for (int l = 1; l <= 3; ++l) {
    v.require(accepted[l] >= 4, fmt("class %.0f KS accepted in %.0f of 5 seeds", l, accepted[l]));
    const double t1 = eval::empirical_type1(pooled[l], 0.05);
    v.require(t1 >= 0.03 && t1 <= 0.07,
              fmt("class %.0f pooled type-I %.4f over %.0f p-values", l, t1, double(pooled[l].size())));
  }
  return v;
}

Verdict outlier_criterion(const std::vector<SeedRun>& runs) {
  Verdict v{3, "inlier empty-set rate <= 0.07 and outlier detection >= 0.90 at 10% contamination"};
  for (const auto& r : runs) {
    const auto& rep = r.by_stem.at("test_rate_0.100").fci;
    const double det = rep.outlier_detection_rate.value_or(0.0);
    v.require(rep.inlier_empty_rate <= 0.07 && det >= 0.90,
              fmt("seed %.0f inlier empty %.4f, detection %.4f", double(r.seed), rep.inlier_empty_rate, det));
  }
  return v;
}

Verdict robustness_criterion(const std::vector<SeedRun>& runs) {
  Verdict v{4, "0% -> 10%: Scaling and APS coverage drop >= 0.05, FCI drop <= 0.02 (mean over seeds)"};
  double fci = 0, scaling = 0, aps = 0;
  for (const auto& r : runs) {
    const auto& a = r.by_stem.at("test_rate_0.000");
    const auto& b = r.by_stem.at("test_rate_0.100");
    const double df = a.fci.coverage - b.fci.coverage;
    const double ds = a.scaling->coverage - b.scaling->coverage;
    const double da = a.aps->coverage - b.aps->coverage;
    v.notes.push_back("     " + fmt("seed %.0f drops: fci %+.4f", double(r.seed), df) +
                      fmt(", scaling %+.4f, aps %+.4f", ds, da));
    fci += df / runs.size();
    scaling += ds / runs.size();
    aps += da / runs.size();
  }
  v.require(scaling >= 0.05, fmt("mean Scaling drop %.4f", scaling));
  v.require(aps >= 0.05, fmt("mean APS drop %.4f", aps));
  v.require(fci <= 0.02, fmt("mean FCI drop %.4f", fci));
  return v;
}

Verdict mmd_criterion() {
  Verdict v{5, "MMD matches brute force within 1e-12; null mean within 4 SE"};
  std::mt19937_64 rng(501);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto u = testing::normal_tensor(3 + i % 5, 1 + i % 3, rng);
    const auto w = testing::normal_tensor(2 + i % 6, 1 + i % 3, rng);
    const double bw = 0.4 + 0.1 * (i % 11);
    worst = std::max(worst, std::abs(mmd::mmd2_unbiased(u, w, bw).value - testing::brute_mmd2(u, w, bw)));
  }
  v.require(worst <= 1e-12, fmt("max |estimator - oracle| = %.3g over 100 instances", worst));
  const auto s = testing::null_mmd_summary(2000, 20, rng);
  v.require(std::abs(s.mean) <= 4 * s.se, fmt("null mean %.3g, SE %.3g", s.mean, s.se));
  return v;
}

Verdict chi2_criterion() {
  Verdict v{6, "oracle-encoder scores follow chi2_5; CDF matches closed forms within 1e-10"};
  std::mt19937_64 rng(601);
  const auto model = identity_model(5);
  const auto scores = conformal::nonconformity_scores(model, testing::normal_tensor(10000, 5, rng));
  const auto r = eval::chi2_moment_check(scores, 5);
  v.require(std::abs(r.mean - 5.0) <= 0.15, fmt("mean %.4f", r.mean));
  v.require(std::abs(r.variance - 10.0) <= 1.0, fmt("variance %.4f", r.variance));
  v.require(!r.ks.reject, fmt("KS D=%.4f vs critical %.4f", r.ks.statistic, r.ks.critical));
  double worst = 0.0;
  for (int i = 1; i <= 100; ++i) {
    const double t = 0.2 * i;
    worst = std::max(worst, std::abs(eval::chi2_cdf(t, 1) - std::erf(std::sqrt(t / 2))));
    worst = std::max(worst, std::abs(eval::chi2_cdf(t, 2) - (1 - std::exp(-t / 2))));
  }
  v.require(worst <= 1e-10, fmt("closed-form max error %.3g", worst));
  return v;
}

Verdict autodiff_criterion() {
  Verdict v{7, "finite-difference checks on 50 random networks (rel err < 1e-5)"};
  int passed = 0;
  double worst_rel = 0.0, worst_abs = 0.0, checked = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto c = testing::run_network_case(i, 701);
    passed += c.result.ok ? 1 : 0;
    worst_rel = std::max(worst_rel, c.result.max_rel_err);
    worst_abs = std::max(worst_abs, c.result.max_abs_err);
    checked += static_cast<double>(c.result.checked);
    if (!c.result.ok) v.notes.push_back("     failed: " + c.name);
  }
  v.require(passed == 50, fmt("%.0f of 50 networks passed, %.0f partials checked", passed, checked));
  v.notes.push_back("     " + fmt("worst relative error %.3g, worst absolute error %.3g", worst_rel, worst_abs));
  return v;
}

Verdict baselines_criterion(const std::vector<SeedRun>& runs) {
  Verdict v{8, "APS coverage >= 0.93 without contamination; hand examples exact"};
  for (const auto& r : runs) {
    const double c = r.by_stem.at("test_rate_0.000").aps->coverage;
    v.require(c >= 0.93, fmt("seed %.0f APS coverage %.4f", double(r.seed), c));
  }
  using baselines::ApsCalibration;
  const double a[] = {0.6, 0.3, 0.1}, b[] = {0.97, 0.02, 0.01}, u[] = {0.25, 0.25, 0.25, 0.25};
  const double row[] = {0.5, 0.3, 0.2};
  bool exact = baselines::scaling_set(a, 0.05).labels == std::vector<int>{1, 2, 3} &&
               baselines::scaling_set(b, 0.05).labels == std::vector<int>{1} &&
               baselines::scaling_set(u, 0.0).labels == std::vector<int>{1, 2, 3, 4} &&
               baselines::aps_calibrate_scores({0.2, 0.4, 0.6, 0.8}, 0.25).tau == 0.8 &&
               baselines::aps_calibrate_scores({0.7, 0.7, 0.7}, 0.5).tau == 0.7 &&
               baselines::aps_set(row, ApsCalibration{1.0, 4, 0.05}).labels == std::vector<int>{1, 2, 3} &&
               baselines::aps_set(row, ApsCalibration{0.75, 4, 0.05}).labels == std::vector<int>{1, 2} &&
               baselines::aps_set(row, ApsCalibration{1e-12, 4, 0.05}).labels == std::vector<int>{1};
  v.require(exact, "scaling_set, aps_calibrate and aps_set hand examples");
  return v;
}

Verdict conformal_criterion() {
  Verdict v{9, "p-value and set hand counts exact; smoothed p-values super-uniform over 1e5 draws"};
  using conformal::PValueMode;
  const conformal::ScorePool pool(1, {1, 2, 3, 4});
  const bool pv_exact = pool.p_value(2.5, PValueMode::Smoothed) == 0.6 &&
                        pool.p_value(100, PValueMode::Smoothed) == 0.2 &&
                        pool.p_value(100, PValueMode::PaperLiteral) == 1.0 &&
                        pool.p_value(0.5, PValueMode::Smoothed) == 1.0;
  v.require(pv_exact, "p_value hand counts");
  const bool set_exact =
      conformal::predictive_set(conformal::PValueVector{0.9, 0.03, 0.2}, 0.05).labels == std::vector<int>{1, 3} &&
      conformal::predictive_set(conformal::PValueVector{0.01, 0.02}, 0.05).empty() &&
      conformal::predictive_set(conformal::PValueVector{0.3, 0.0005, 1.0}, 1e-9).labels.size() == 3;
  v.require(set_exact, "predictive_set hand examples");

  std::mt19937_64 rng(901);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int draws = 100000;
  std::vector<double> p(draws);
  for (auto& x : p) {
    std::vector<double> cal(19);
    for (auto& c : cal) c = std::pow(n01(rng), 2);
    x = conformal::ScorePool(1, cal).p_value(std::pow(n01(rng), 2), PValueMode::Smoothed);
  }
  double worst = -1.0;
  bool ok = true;
  for (int k = 1; k <= 99; ++k) {
    const double alpha = k / 100.0;
    const double rate = std::count_if(p.begin(), p.end(), [&](double q) { return q <= alpha; }) / double(draws);
    const double se = std::sqrt(alpha * (1 - alpha) / draws);
    ok = ok && rate <= alpha + 3 * se;
    worst = std::max(worst, (rate - alpha) / se);
  }
  v.require(ok, fmt("largest excess over alpha across the grid: %.2f SE", worst));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string work = "acceptance_runs";
  app.add_option("--work-dir", work, "directory for the reference runs");
  CLI11_PARSE(app, argc, argv);

  pipeline::set_log_sink({});
  const auto t0 = std::chrono::steady_clock::now();
  std::printf("reference runs (seeds 1..5) under %s\n", work.c_str());
  std::vector<SeedRun> runs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) runs.push_back(run_seed(seed, work));

  std::vector<Verdict> verdicts{coverage_criterion(runs),  uniformity_criterion(runs), outlier_criterion(runs),
                                robustness_criterion(runs), mmd_criterion(),          chi2_criterion(),
                                autodiff_criterion(),       baselines_criterion(runs), conformal_criterion()};
  int failed = 0;
  for (const auto& v : verdicts) {
    std::printf("\n[%d] %s\n", v.id, v.title.c_str());
    for (const auto& n : v.notes) std::printf("    %s\n", n.c_str());
  }
  std::printf("\n");
  for (const auto& v : verdicts) {
    std::printf("%s criterion %d: %s\n", v.pass ? "PASS" : "FAIL", v.id, v.title.c_str());
    failed += v.pass ? 0 : 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%d of %zu criteria passed in %.0f s\n", static_cast<int>(verdicts.size()) - failed, verdicts.size(),
              secs);
  return failed == 0 ? 0 : 1;
}
