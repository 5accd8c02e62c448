#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ccdepth/errors.hpp"
#include "ccdepth/evaluator.hpp"
#include "test_util.hpp"

using namespace ccdepth;

namespace {

// Straight per-pixel loop over the seven columns.
std::array<double, 7> loop_metrics(const std::vector<double>& p, const std::vector<double>& g) {
  double abs_rel = 0, sq_rel = 0, se = 0, sle = 0, d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = p[i] - g[i];
    abs_rel += std::abs(diff) / g[i];
    sq_rel += diff * diff / g[i];
    se += diff * diff;
    const double ld = std::log(p[i]) - std::log(g[i]);
    sle += ld * ld;
    const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  const double n = static_cast<double>(p.size());
  return {abs_rel / n, sq_rel / n, std::sqrt(se / n), std::sqrt(sle / n), d1 / n, d2 / n, d3 / n};
}

double loop_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("metrics match the per-pixel loop") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> depth(1.0, 80.0), noise(0.6, 1.6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p, g;
    const int n = 1 + static_cast<int>(rng() % 500);
    for (int i = 0; i < n; ++i) {
      g.push_back(depth(rng));
      p.push_back(g.back() * noise(rng));
    }
    auto m = compute_metrics(p, g);
    auto want = loop_metrics(p, g);
    auto got = m.values();
    for (int k = 0; k < 7; ++k) CHECK(std::abs(got[k] - want[k]) <= 1e-12);
  }
}

TEST_CASE("prediction 1.25 times ground truth gives the exact threshold values") {
  std::vector<double> g, p;
  for (int i = 0; i < 64; ++i) {
    g.push_back(std::ldexp(1.0 + (i % 8), i % 5));  // dyadic values keep 1.25 g exact
    p.push_back(1.25 * g.back());
  }
  auto m = compute_metrics(p, g);
  CHECK(m.abs_rel == 0.25);
  CHECK(m.delta1 == 0.0);
  CHECK(m.delta2 == 1.0);
  CHECK(m.delta3 == 1.0);
}

TEST_CASE("metric errors") {
  std::vector<double> empty;
  CHECK_THROWS_WITH_AS(compute_metrics(empty, empty), doctest::Contains("no valid pixels"), DomainError);
  std::vector<double> p{1.0, 0.0}, g{1.0, 2.0};
  CHECK_THROWS_AS(compute_metrics(p, g), DomainError);
}

TEST_CASE("median scaling matches the sorted-median oracle and is scale invariant") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.5, 50.0);
  for (int n : {1, 2, 7, 10, 101}) {
    std::vector<double> p, g;
    for (int i = 0; i < n; ++i) {
      p.push_back(u(rng));
      g.push_back(u(rng));
    }
    CHECK(median_scale_factor(p, g) == doctest::Approx(loop_median(g) / loop_median(p)).epsilon(1e-14));
    std::vector<double> scaled = p;
    for (auto& v : scaled) v *= 37.5;
    auto a = compute_metrics(median_scale(p, g), g).values();
    auto b = compute_metrics(median_scale(scaled, g), g).values();
    for (int k = 0; k < 7; ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-12);
  }
  std::vector<double> zeros{0.0, 0.0, 1.0}, g3{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(median_scale_factor(zeros, g3), DomainError);
}

TEST_CASE("Eigen crop on the KITTI image size") {
  auto c = eigen_crop(375, 1242);
  CHECK(c.top == 153);
  CHECK(c.bottom == 371);
  CHECK(c.left == 44);
  CHECK(c.right == 1197);
}

TEST_CASE("evaluate_depth masks, caps, crops and scales") {
  auto gt = torch::full({24, 40}, 10.0, torch::kFloat64);
  gt.slice(0, 0, 4).fill_(0.0);     // no ground truth
  gt.slice(0, 4, 6).fill_(120.0);   // beyond the cap
  auto pred = torch::full({12, 20}, 2.0, torch::kFloat64);

  EvalConfig cfg;
  cfg.crop = "none";
  auto m = evaluate_depth(pred, gt, cfg);
  CHECK(m.abs_rel == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m.delta1 == 1.0);
  CHECK(m.scaling_mode == "median");

  cfg.median_scaling = false;
  auto raw = evaluate_depth(pred, gt, cfg);
  CHECK(raw.abs_rel == doctest::Approx(0.8));
  CHECK(raw.scaling_mode == "none");

  // Predictions are clamped to the cap after scaling.
  cfg.max_depth = 5.0;
  gt.fill_(4.0);
  auto capped = evaluate_depth(torch::full({24, 40}, 9.0, torch::kFloat64), gt, cfg);
  CHECK(capped.abs_rel == doctest::Approx(0.25));

  cfg.max_depth = 80.0;
  CHECK_THROWS_AS(evaluate_depth(pred, torch::zeros({24, 40}), cfg), DomainError);
}

TEST_CASE("aggregate is the unweighted mean over images") {
  MetricsReport a, b;
  a.abs_rel = 0.1;
  a.delta1 = 1.0;
  b.abs_rel = 0.3;
  b.delta1 = 0.5;
  auto m = aggregate({a, b});
  CHECK(m.abs_rel == doctest::Approx(0.2));
  CHECK(m.delta1 == doctest::Approx(0.75));
  CHECK(m.n_images == 2);
  CHECK(MetricsReport::columns().size() == 7);
  CHECK(MetricsReport::columns().front() == "abs_rel");
}

TEST_CASE("split evaluation over toy scenes writes the report files") {
  ToyConfig toy;
  toy.scenes = 3;
  toy.width = 64;
  toy.height = 32;
  ToySource source(make_toy_dataset(toy));
  NetworkConfig net_cfg;
  net_cfg.cnn_channels = {8, 16, 32};
  net_cfg.crate_dims = {48, 96};
  net_cfg.width = 64;
  net_cfg.height = 32;
  torch::manual_seed(0);
  DepthNet net(net_cfg);
  EvalConfig cfg;
  cfg.crop = "none";
  auto e = evaluate_split(net, source, cfg, LossConfig{});
  CHECK(e.per_image.size() == 3);
  CHECK(e.aggregate.n_images == 3);
  CHECK(e.skipped.empty());
  CHECK(e.aggregate.abs_rel > 0.0);

  testutil::TempDir dir;
  write_report(dir.str(), e, cfg);
  for (const char* f : {"metrics.json", "metrics.csv", "per_image.csv"})
    CHECK(std::filesystem::exists(dir.path() / f));
  auto j = report_json(e, cfg);
  CHECK(j.at("scaling_mode") == "median");
  CHECK(j.at("n_images") == 3);
  std::ifstream csv(dir / "metrics.csv");
  std::string first;
  std::getline(csv, first);
  CHECK(first.rfind("# scaling_mode=median", 0) == 0);
}
