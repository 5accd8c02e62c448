// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance [--criterion N] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <optional>

#include <CLI11.hpp>

#include "ccdepth/analysis.hpp"
#include "ccdepth/config.hpp"
#include "ccdepth/crate.hpp"
#include "ccdepth/depth_net.hpp"
#include "ccdepth/evaluator.hpp"
#include "ccdepth/losses.hpp"
#include "ccdepth/trainer.hpp"
#include "oracles.hpp"

using namespace ccdepth;
using namespace ccdepth::crate;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string g_work = "acceptance_work";

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RelativePose pose_of(double rx, double ry, double rz, double tx, double ty, double tz, int batch = 1) {
  return {torch::tensor({rx, ry, rz}, torch::kFloat64).view({1, 3}).expand({batch, 3}).clone(),
          torch::tensor({tx, ty, tz}, torch::kFloat64).view({1, 3}).expand({batch, 3}).clone()};
}

CameraIntrinsics test_camera(int w, int h) { return {0.6 * w, 0.6 * w, (w - 1) / 2.0, (h - 1) / 2.0, w, h}; }

// ---------------------------------------------------------------------------
// 1. CRATE operators against dense loops.

Outcome crate_oracles() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> k_dist(1, 2), n_dist(2, 8);
  double worst = 0;
  const int instances = 120;
  for (int trial = 0; trial < instances; ++trial) {
    const int k = k_dist(rng);
    std::uniform_int_distribution<int> p_dist(1, 6 / k);
    const int p = p_dist(rng), d = k * p, n = n_dist(rng);
    auto z = oracle::random_mat(d, n, rng);
    std::vector<oracle::Mat> bases;
    std::vector<torch::Tensor> us;
    for (int i = 0; i < k; ++i) {
      bases.push_back(oracle::random_orthonormal(d, p, rng));
      us.push_back(oracle::to_tensor(bases.back()));
    }
    auto dict = oracle::random_orthonormal(d, d, rng);
    auto zt = oracle::to_tensor(z), dt = oracle::to_tensor(dict);
    SubspaceBases sb(torch::stack(us));
    for (double eps : {0.1, 0.5, 1.0}) {
      const double want = oracle::coding_rate(z, eps);
      worst = std::max(worst, std::abs(coding_rate(zt, eps).item<double>() - want) / std::max(1.0, std::abs(want)));
      const double rr = oracle::rate_reduction(z, bases, eps);
      worst = std::max(worst, std::abs(rate_reduction(zt, sb, eps).item<double>() - rr) / std::max(1.0, std::abs(rr)));
      worst = std::max(worst, oracle::max_abs_diff(oracle::mssa(z, bases, eps, true), mssa(zt, sb, eps)));
      CrateModuleParams params{sb, Dictionary(dt), 0.7, eps, 0.1, 0.1, MssaScaleMode::kAsWritten, std::nullopt,
                               std::nullopt};
      worst = std::max(worst, oracle::max_abs_diff(oracle::mssa_residual_step(z, bases, eps, 0.7, true),
                                                   mssa_residual_step(zt, params)));
    }
    for (int i = 0; i < k; ++i) worst = std::max(worst, oracle::max_abs_diff(oracle::ssa(z, bases[i]), ssa(zt, us[i])));
    for (double lambda : {0.0, 0.1, 0.5})
      worst = std::max(worst, oracle::max_abs_diff(oracle::ista_step(z, dict, 0.1, lambda),
                                                   ista_step(zt, Dictionary(dt), 0.1, lambda)));
  }
  o.detail << instances << " instances, worst deviation " << worst;
  o.require(worst <= 1e-10, "deviation <= 1e-10");
  return o;
}

// ---------------------------------------------------------------------------
// 2. Finite-difference gradient checks.

// Central differences at h and h/2 must agree before a coordinate is used;
// disagreement means a ReLU or threshold kink lies inside the stencil.
struct FdProbe {
  double h = 1e-5;
  double floor = 1e-6;
  int kinks_skipped = 0;

  std::optional<double> error(const std::function<double()>& eval, double& slot, double analytic) {
    const double orig = slot;
    auto central = [&](double step) {
      slot = orig + step;
      const double fp = eval();
      slot = orig - step;
      const double fm = eval();
      slot = orig;
      return (fp - fm) / (2 * step);
    };
    const double n1 = central(h), n2 = central(h / 2);
    if (std::abs(n1 - n2) > 1e-4 * std::max(std::abs(n1) + std::abs(n2), 1e-4)) {
      ++kinks_skipped;
      return std::nullopt;
    }
    return std::abs(analytic - n1) / std::max(std::abs(analytic) + std::abs(n1), floor);
  }
};

Outcome gradient_checks() {
  Outcome o;
  torch::manual_seed(17);
  const auto t0 = std::chrono::steady_clock::now();

  // Per-operation checks, each reduced to a scalar by a fixed random projection.
  std::vector<std::pair<std::string, double>> ops;
  auto bases = SubspaceBases::orthonormal(2, 4, 2);
  auto dict = Dictionary::orthogonal(4);
  auto w = torch::randn({4, 5}, torch::kFloat64);
  auto z0 = torch::randn({4, 5}, torch::kFloat64) * 0.5;
  ops.emplace_back("coding_rate", oracle::gradient_check([&](const torch::Tensor& z) { return coding_rate(z, 0.5); }, z0));
  ops.emplace_back("rate_reduction",
                   oracle::gradient_check([&](const torch::Tensor& z) { return rate_reduction(z, bases, 0.5); }, z0));
  ops.emplace_back("ssa", oracle::gradient_check(
                              [&](const torch::Tensor& z) { return (ssa(z, bases.basis(0)) * w.narrow(0, 0, 2)).sum(); }, z0));
  ops.emplace_back("mssa", oracle::gradient_check([&](const torch::Tensor& z) { return (mssa(z, bases, 0.5) * w).sum(); }, z0));
  ops.emplace_back("mssa_bases", oracle::gradient_check(
                                     [&](const torch::Tensor& u) { return (mssa(z0, SubspaceBases(u), 0.5) * w).sum(); },
                                     bases.stacked()));
  CrateModuleParams params{bases, dict, 1.0, 0.5, 0.1, 0.1, MssaScaleMode::kAsWritten, std::nullopt, std::nullopt};
  ops.emplace_back("mssa_residual_step",
                   oracle::gradient_check([&](const torch::Tensor& z) { return (mssa_residual_step(z, params) * w).sum(); }, z0));
  // ISTA input shifted so that no pre-activation sits within 1e-2 of the kink.
  auto pre = z0 + 0.1 * torch::matmul(dict.matrix().t(), z0 - torch::matmul(dict.matrix(), z0)) - 0.01;
  auto zi = z0 + torch::where(pre.abs() < 0.02, torch::full_like(pre, 0.05), torch::zeros_like(pre));
  ops.emplace_back("ista_step",
                   oracle::gradient_check([&](const torch::Tensor& z) { return (ista_step(z, dict, 0.1, 0.1) * w).sum(); }, zi));
  auto zpos = z0.abs() + 0.5;
  ops.emplace_back("ista_dictionary", oracle::gradient_check(
                                          [&](const torch::Tensor& d) {
                                            return (ista_step(zpos, Dictionary(d), 0.1, 0.01) * w).sum();
                                          },
                                          dict.matrix()));
  TokenNorm norm{torch::randn({4}, torch::kFloat64), torch::randn({4}, torch::kFloat64)};
  ops.emplace_back("token_layer_norm",
                   oracle::gradient_check([&](const torch::Tensor& z) { return (token_layer_norm(z, norm) * w).sum(); }, z0));

  auto target = torch::rand({1, 3, 6, 7}, torch::kFloat64);
  auto other = torch::rand({1, 3, 6, 7}, torch::kFloat64);
  ops.emplace_back("ssim", oracle::gradient_check([&](const torch::Tensor& x) { return ssim(target, x).sum(); }, other));
  ops.emplace_back("photometric_error",
                   oracle::gradient_check([&](const torch::Tensor& x) { return photometric_error(target, x).sum(); }, other));
  auto disp = torch::rand({1, 1, 6, 7}, torch::kFloat64) + 0.2;
  ops.emplace_back("smoothness_loss",
                   oracle::gradient_check([&](const torch::Tensor& d) { return smoothness_loss(d, target); }, disp));
  ops.emplace_back("disp_to_depth",
                   oracle::gradient_check([&](const torch::Tensor& d) { return disp_to_depth(d * 0.5).sum(); }, disp));
  auto mask = (torch::rand({1, 1, 6, 7}, torch::kFloat64) > 0.3).to(torch::kFloat64);
  ops.emplace_back("scale_loss", oracle::gradient_check(
                                     [&](const torch::Tensor& lp) {
                                       return scale_loss(lp, mask, smoothness_loss(disp, target), 1e-3);
                                     },
                                     torch::rand({1, 1, 6, 7}, torch::kFloat64)));
  auto ref = torch::rand({1, 3, 6, 7}, torch::kFloat64);
  auto k = test_camera(7, 6).matrix();
  auto depth0 = torch::rand({1, 1, 6, 7}, torch::kFloat64) * 2 + 5;
  auto pose = pose_of(0.01, -0.02, 0.015, 0.13, -0.07, 0.05);
  // Pixels sampling near the snap grid or the clamped border carry no weight.
  auto keep = oracle::kink_free_pixels(warp_reference(ref, depth0, pose, k).coords, 7, 6);
  auto wi = torch::rand({1, 3, 6, 7}, torch::kFloat64) * keep;
  o.require(keep.sum().item<double>() >= 21, "half the warp pixels clear of kinks");
  ops.emplace_back("warp_depth", oracle::gradient_check(
                                     [&](const torch::Tensor& d) { return (warp_reference(ref, d, pose, k).image * wi).sum(); },
                                     depth0));
  ops.emplace_back("warp_pose", oracle::gradient_check(
                                    [&](const torch::Tensor& p) {
                                      RelativePose rp{p.narrow(1, 0, 3), p.narrow(1, 3, 3)};
                                      return (warp_reference(ref, depth0, rp, k).image * wi).sum();
                                    },
                                    torch::cat({pose.axis_angle, pose.translation}, 1)));
  ops.emplace_back("axis_angle_to_rotation", oracle::gradient_check(
                                                 [&](const torch::Tensor& a) {
                                                   return (axis_angle_to_rotation(a) *
                                                           torch::arange(9, torch::kFloat64).view({1, 3, 3}))
                                                       .sum();
                                                 },
                                                 torch::tensor({{0.3, -0.2, 0.5}}, torch::kFloat64)));
  double worst_op = 0;
  std::string worst_name;
  for (const auto& [name, err] : ops) {
    if (err > worst_op) {
      worst_op = err;
      worst_name = name;
    }
    o.require(err <= 1e-4, name + " relative error " + std::to_string(err));
  }
  o.detail << ops.size() << " operations, worst " << worst_op << " (" << worst_name << ")";

  // Full network: default widths at 64x32, all four heads and the pose vector
  // projected to one scalar; 10 coordinates per stage type.
  NetworkConfig cfg;
  cfg.width = 64;
  cfg.height = 32;
  DepthNet net(cfg);
  PoseNet pose_net(cfg);
  net->to(torch::kFloat64);
  pose_net->to(torch::kFloat64);
  net->eval();
  pose_net->eval();
  auto image = torch::rand({1, 3, 32, 64}, torch::kFloat64);
  auto pair = torch::rand({1, 6, 32, 64}, torch::kFloat64);
  std::vector<torch::Tensor> weights;
  for (int s = 0; s < 4; ++s) weights.push_back(torch::randn({1, 1, 32 >> s, 64 >> s}, torch::kFloat64));
  auto pose_weight = torch::randn({1, 6}, torch::kFloat64);
  auto objective = [&]() {
    auto d = net->forward(image);
    auto y = torch::zeros({}, torch::kFloat64);
    for (int s = 0; s < 4; ++s) y = y + (d[s] * weights[s]).sum();
    auto p = pose_net->forward(pair);
    return y + (torch::cat({p.axis_angle, p.translation}, 1) * pose_weight).sum() * 100.0;
  };

  const std::vector<std::pair<std::string, std::vector<std::string>>> stage_types = {
      {"cnn_encoder", {"layer1.", "layer2.", "layer3."}},
      {"crate_encoder", {"layer4.", "layer5."}},
      {"crate_decoder", {"layer6.", "layer7."}},
      {"cnn_decoder", {"layer8.", "layer9.", "layer10."}},
      {"heads", {"head1.", "head2.", "head3.", "head4."}},
      {"pose", {"pose."}}};
  std::vector<std::pair<std::string, torch::Tensor>> all;
  for (const auto& item : net->named_parameters()) all.emplace_back(item.key(), item.value());
  for (const auto& item : pose_net->named_parameters()) all.emplace_back("pose." + item.key(), item.value());

  auto loss = objective();
  std::vector<torch::Tensor> tensors;
  for (auto& [n, p] : all) tensors.push_back(p);
  auto grads = torch::autograd::grad({loss}, tensors, {}, false, false, true);

  std::mt19937_64 rng(99);
  FdProbe fd;
  torch::NoGradGuard no_grad;
  auto eval = [&]() { return objective().item<double>(); };
  double worst_net = 0;
  int checked_total = 0;
  for (const auto& [type, prefixes] : stage_types) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < all.size(); ++i)
      for (const auto& prefix : prefixes)
        if (all[i].first.rfind(prefix, 0) == 0) members.push_back(i);
    int checked = 0, attempts = 0;
    while (checked < 10 && attempts < 200 && !members.empty()) {
      ++attempts;
      const auto idx = members[rng() % members.size()];
      auto param = all[idx].second.data();
      const int64_t j = static_cast<int64_t>(rng() % static_cast<uint64_t>(param.numel()));
      const double analytic = grads[idx].defined() ? grads[idx].reshape(-1)[j].item<double>() : 0.0;
      // Parameters may be strided views; walk the strides to the j-th element.
      int64_t offset = 0, rest = j;
      for (int64_t dim = param.dim() - 1; dim >= 0; --dim) {
        offset += (rest % param.size(dim)) * param.stride(dim);
        rest /= param.size(dim);
      }
      double* slot = param.data_ptr<double>() + offset;
      auto err = fd.error(eval, *slot, analytic);
      if (!err) continue;
      worst_net = std::max(worst_net, *err);
      o.require(*err <= 1e-3, type + " " + all[idx].first + " relative error " + std::to_string(*err));
      ++checked;
    }
    checked_total += checked;
    o.require(checked >= 10, type + ": fewer than 10 usable coordinates");
  }
  o.detail << "; network " << checked_total << " coordinates over " << stage_types.size() << " stage types, worst "
           << worst_net << ", kink skips " << fd.kinks_skipped << "; " << seconds_since(t0) << " s";
  o.require(seconds_since(t0) < 600, "runtime under 10 minutes");
  return o;
}

// ---------------------------------------------------------------------------
// 3. Resolution ladder at 640x192.

Outcome shape_ladder() {
  Outcome o;
  NetworkConfig cfg;
  DepthNet net(cfg);
  net->eval();
  torch::NoGradGuard no_grad;
  auto out = net->forward_features(torch::rand({1, 3, 192, 640}));
  const int want_w[10] = {320, 160, 80, 40, 20, 40, 80, 160, 320, 640};
  const int want_h[10] = {96, 48, 24, 12, 6, 12, 24, 48, 96, 192};
  for (int i = 0; i < 10; ++i) {
    const auto& t = out.layers[static_cast<std::size_t>(i)];
    o.detail << (i ? " " : "") << t.size(3) << "x" << t.size(2);
    o.require(t.size(3) == want_w[i] && t.size(2) == want_h[i], "layer " + std::to_string(i + 1) + " resolution");
  }
  o.require(out.disparities.size() == 4, "four disparity heads");
  o.detail << "; heads";
  for (std::size_t s = 0; s < out.disparities.size(); ++s) {
    const auto& d = out.disparities[s];
    o.detail << " " << d.size(3) << "x" << d.size(2);
    o.require(d.size(1) == 1 && d.size(3) == (640 >> s) && d.size(2) == (192 >> s), "head " + std::to_string(s + 1));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 4. Parameter budget with an independent per-tensor enumeration.

int64_t conv_params(int64_t in, int64_t out, int64_t k) { return in * out * k * k + out; }
int64_t linear_params(int64_t in, int64_t out) { return in * out + out; }
int64_t residual_params(int64_t in, int64_t out) {
  return conv_params(in, out, 3) + conv_params(out, out, 3) + (in != out ? conv_params(in, out, 1) : 0);
}
int64_t crate_layer_params(int64_t in, int64_t dim, int64_t out, int64_t patch, int modules) {
  return linear_params(in * patch * patch, dim) + modules * (2 * dim * dim + 4 * dim) + linear_params(dim, out);
}

Outcome parameter_budget() {
  Outcome o;
  NetworkConfig c;
  const auto count = count_parameters(c).depth_net;
  const int64_t c1 = c.cnn_channels[0], c2 = c.cnn_channels[1], c3 = c.cnn_channels[2];
  const int64_t d4 = c.crate_dims[0], d5 = c.crate_dims[1];
  const int m = c.crate.modules_per_layer;
  int64_t recipe = residual_params(3, c1) + residual_params(c1, c1) + residual_params(c1, c2) + residual_params(c2, c2) +
                   residual_params(c2, c3) + residual_params(c3, c3) + crate_layer_params(c3, d4, d4, 2, m) +
                   crate_layer_params(d4, d5, d5, 2, m) + crate_layer_params(d5, d5, d4, 1, m) +
                   crate_layer_params(2 * d4, d4, c3, 1, m) + residual_params(2 * c3, c3) + residual_params(c3, c3) +
                   residual_params(c3 + c2, c2) + residual_params(c2, c2) + residual_params(c2 + c1, c1) +
                   residual_params(c1, c1);
  const int64_t head_in[4] = {c1, c2, c3, c3};
  for (int s = 0; s < c.num_scales; ++s) recipe += conv_params(head_in[s], 1, 3);

  DepthNet net(c);
  int64_t enumerated = 0;
  for (const auto& item : net->named_parameters()) {
    int64_t n = 1;
    for (auto s : item.value().sizes()) n *= s;
    enumerated += n;
  }
  o.detail << "count " << count << ", tensor enumeration " << enumerated << ", layer recipe " << recipe
           << ", budget [11340000, 13860000]";
  o.require(count == enumerated, "count equals enumeration");
  o.require(count == recipe, "count equals layer recipe");
  o.require(count >= 11'340'000 && count <= 13'860'000, "within 12.6M +- 10%");
  return o;
}

// ---------------------------------------------------------------------------
// 5. Loss identities.

Outcome loss_identities() {
  Outcome o;
  torch::manual_seed(5);
  auto image = torch::rand({2, 3, 16, 24}, torch::kFloat64);
  const double pe_self = photometric_error(image, image).abs().max().item<double>();
  auto mask = auto_mask(image, {image, image}, {torch::rand_like(image), torch::rand_like(image)});
  const double mask_max = mask.max().item<double>();
  auto constant = torch::full({2, 1, 16, 24}, 0.37, torch::kFloat64);
  const double smooth = smoothness_loss(constant, image).item<double>();
  o.detail << "pe(I,I) " << pe_self << ", auto-mask max " << mask_max << ", smoothness " << smooth << ", weights";
  for (int n = 1; n <= 4; ++n) o.detail << " " << scale_weight(n);
  o.require(pe_self == 0.0, "pe(I, I) = 0");
  o.require(mask_max == 0.0, "auto-mask all zero");
  o.require(smooth == 0.0, "smoothness of constant disparity = 0");
  o.require(scale_weight(1) == 1.0 && scale_weight(2) == 0.5 && scale_weight(3) == 0.25 && scale_weight(4) == 0.125,
            "scale weights 1, 1/2, 1/4, 1/8");
  return o;
}

// ---------------------------------------------------------------------------
// 6. Warp geometry.

Outcome warp_geometry() {
  Outcome o;
  torch::manual_seed(6);
  const int h = 48, w = 96;
  const auto cam = test_camera(w, h);
  auto k = cam.matrix();
  auto ref = torch::rand({2, 3, h, w}, torch::kFloat64);
  auto depth = torch::rand({2, 1, h, w}, torch::kFloat64) * 30 + 1;
  const bool identity_exact = torch::equal(warp_reference(ref, depth, pose_of(0, 0, 0, 0, 0, 0, 2), k).image, ref);
  o.require(identity_exact, "identity warp exact");

  // Ramps in u and v make the sampled value equal to the sampled position, so
  // the realized shift is read back from the warped image itself.
  auto u = torch::arange(w, torch::kFloat64).view({1, 1, 1, w}).expand({1, 1, h, w});
  auto v = torch::arange(h, torch::kFloat64).view({1, 1, h, 1}).expand({1, 1, h, w});
  auto ramps = torch::cat({u, v}, 1);
  double worst_rms = 0;
  const double z = 12.0;
  for (auto [tx, ty, tz] : {std::tuple{0.9, 0.0, 0.0}, std::tuple{0.0, 0.4, 0.0}, std::tuple{0.3, -0.2, 1.5}}) {
    auto warped = warp_reference(ramps, torch::full({1, 1, h, w}, z, torch::kFloat64), pose_of(0, 0, 0, tx, ty, tz), k);
    const int margin = 8;
    double se = 0;
    int n = 0;
    for (int y = margin; y < h - margin; ++y)
      for (int x = margin; x < w - margin; ++x) {
        const double X = (x - cam.cx) * z / cam.fx, Y = (y - cam.cy) * z / cam.fy;
        const double eu = cam.fx * (X + tx) / (z + tz) + cam.cx, ev = cam.fy * (Y + ty) / (z + tz) + cam.cy;
        const double gu = warped.image[0][0][y][x].item<double>(), gv = warped.image[0][1][y][x].item<double>();
        se += (gu - eu) * (gu - eu) + (gv - ev) * (gv - ev);
        ++n;
      }
    worst_rms = std::max(worst_rms, std::sqrt(se / n));
  }
  o.detail << "identity exact " << (identity_exact ? "yes" : "no") << ", translation RMS " << worst_rms << " px";
  o.require(worst_rms <= 0.5, "translation RMS <= 0.5 px");
  return o;
}

// ---------------------------------------------------------------------------
// 7. Toy overfit.

fs::path toy_run_dir() { return fs::path(g_work) / "toy_overfit"; }

Outcome toy_overfit() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = toy_run_config();
  cfg.train.max_steps = 2000;
  const auto dir = toy_run_dir();
  fs::remove_all(dir);
  ToySource source(make_toy_dataset(cfg.data.toy));
  Trainer trainer(cfg);
  auto result = trainer.fit(source, dir.string());
  const auto& h = result.history;
  o.require(h.size() == 2000, "2000 steps ran");
  if (h.size() < 200) return o;

  bool finite = true;
  for (std::size_t i = 0; i < std::min<std::size_t>(500, h.size()); ++i)
    finite = finite && std::isfinite(h[i].photometric) && std::isfinite(h[i].smoothness) && std::isfinite(h[i].total_value);
  o.require(finite, "finite loss components over the first 500 steps");

  // Ten-step moving averages ending at step 10 and at step 200.
  auto window_mean = [&](std::size_t last) {
    double s = 0;
    for (std::size_t i = last - 10; i < last; ++i) s += h[i].photometric;
    return s / 10;
  };
  const double start = window_mean(10), at200 = window_mean(200);
  const double drop = 1.0 - at200 / start;
  o.detail << "photometric " << start << " -> " << at200 << " (drop " << 100 * drop << "%)";
  o.require(drop >= 0.5, "photometric drop >= 50% at step 200");

  auto eval = evaluate_split(trainer.depth(), source, cfg.eval, cfg.loss);
  const double elapsed = seconds_since(t0);
  o.detail << ", abs_rel " << eval.aggregate.abs_rel << " after " << h.size() << " steps, d1 " << eval.aggregate.delta1
           << ", " << elapsed / 60 << " min";
  o.require(eval.aggregate.abs_rel <= 0.30, "abs_rel <= 0.30 after 2000 steps");
  o.require(elapsed < 7200, "runtime under 2 h");
  return o;
}

// ---------------------------------------------------------------------------
// 8. ISTA sparsity properties.

Outcome ista_sparsity() {
  Outcome o;
  torch::manual_seed(8);
  auto z = torch::randn({16, 200}, torch::kFloat64);
  auto d = Dictionary::orthogonal(16);
  o.require(ista_step(z, d, 0.1, 0.1).min().item<double>() >= 0.0, "ISTA output nonnegative");
  double previous = -1;
  bool monotone = true;
  for (double lambda : {0.0, 0.05, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0}) {
    const double zeros = ista_step(z, Dictionary::identity(16), 0.1, lambda).eq(0).to(torch::kFloat64).mean().item<double>();
    monotone = monotone && zeros >= previous;
    previous = zeros;
  }
  o.require(monotone, "zero fraction non-decreasing in lambda");

  // Per-module train/test percentages from the toy-trained network when it
  // exists, else from a freshly initialized one.
  auto cfg = toy_run_config();
  const auto ckpt = toy_run_dir() / "checkpoints" / "latest.ckpt";
  DepthNet net{nullptr};
  std::string origin = "initialized";
  if (fs::exists(ckpt)) {
    net = networks_from_checkpoint(read_checkpoint(ckpt.string())).first;
    origin = "toy-trained";
  } else {
    torch::manual_seed(cfg.train.seed);
    net = DepthNet(cfg.network);
  }
  auto test_toy = cfg.data.toy;
  test_toy.seed = cfg.data.toy.seed + 1000003;
  ToySource train(make_toy_dataset(cfg.data.toy)), test(make_toy_dataset(test_toy));
  auto tr = count_nonzero(net, train, "train", train.size());
  auto te = count_nonzero(net, test, "test", test.size());
  double worst_gap = 0;
  for (std::size_t i = 0; i < tr.size() && i < te.size(); ++i)
    worst_gap = std::max(worst_gap, std::abs(tr[i].percentage - te[i].percentage));
  o.require(tr.size() == 8 && te.size() == 8, "eight module records per split");
  o.detail << "nonnegative, lambda-monotone, " << origin << " network: max train/test gap " << worst_gap << " points";
  o.require(worst_gap <= 5.0, "train/test gap <= 5 points");
  return o;
}

// ---------------------------------------------------------------------------
// 9. Metrics against the per-pixel loop.

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

double metrics_oracle_gap(int trials) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> depth(0.5, 80.0), noise(0.5, 1.8);
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> p, g;
    const int n = 1 + static_cast<int>(rng() % 2000);
    for (int i = 0; i < n; ++i) {
      g.push_back(depth(rng));
      p.push_back(g.back() * noise(rng));
    }
    auto got = compute_metrics(p, g).values();
    auto want = loop_metrics(p, g);
    for (int k = 0; k < 7; ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
  }
  return worst;
}

Outcome metrics_oracle() {
  Outcome o;
  const double worst = metrics_oracle_gap(200);
  std::vector<double> g, p;
  for (int i = 0; i < 256; ++i) {
    g.push_back(std::ldexp(1.0 + (i % 16), i % 6 - 2));
    p.push_back(1.25 * g.back());
  }
  auto m = compute_metrics(p, g);
  o.detail << "worst loop deviation " << worst << "; 1.25 gt -> (" << m.abs_rel << ", " << m.delta1 << ", " << m.delta2
           << ", " << m.delta3 << ")";
  o.require(worst <= 1e-12, "loop oracle to 1e-12");
  o.require(m.abs_rel == 0.25 && m.delta1 == 0.0 && m.delta2 == 1.0 && m.delta3 == 1.0, "exact threshold values");
  return o;
}

// ---------------------------------------------------------------------------
// 10. Full-scale recipe and evaluator semantics.

Outcome recipe_and_evaluator() {
  Outcome o;
  const fs::path root = CCDEPTH_SOURCE_DIR;
  const auto recipe = load_run_config((root / "configs" / "default.json").string());
  o.require(to_json(recipe) == to_json(RunConfig{}), "configs/default.json equals the built-in defaults");
  const auto& t = recipe.train;
  o.require(t.epochs == 20 && t.batch_size == 8 && t.lr_initial == 1e-4 && t.lr_after_drop == 1e-5 &&
                t.lr_drop_epoch == 15 && recipe.network.width == 640 && recipe.network.height == 192,
            "recipe hyperparameters");
  std::ifstream readme(root / "README.md");
  std::string text((std::istreambuf_iterator<char>(readme)), std::istreambuf_iterator<char>());
  o.require(text.find("Full-scale KITTI recipe") != std::string::npos, "README documents the full-scale recipe");

  o.require(MetricsReport::columns() == std::vector<std::string>{"abs_rel", "sq_rel", "rmse", "rmse_log", "delta1",
                                                                  "delta2", "delta3"},
            "metric columns");
  // evaluate_depth on a KITTI-sized frame against the same loop after crop,
  // cap and median scaling done by hand.
  torch::manual_seed(10);
  auto gt = torch::rand({375, 1242}, torch::kFloat64) * 90;
  gt.masked_fill_(torch::rand({375, 1242}, torch::kFloat64) < 0.9, 0.0);  // sparse LiDAR
  auto pred = torch::rand({375, 1242}, torch::kFloat64) * 40 + 1;
  EvalConfig cfg;
  auto m = evaluate_depth(pred, gt, cfg).values();
  auto crop = eigen_crop(375, 1242);
  std::vector<double> p, g;
  for (int y = crop.top; y < crop.bottom; ++y)
    for (int x = crop.left; x < crop.right; ++x) {
      const double gv = gt[y][x].item<double>();
      if (gv > cfg.min_depth && gv < cfg.max_depth) {
        g.push_back(gv);
        p.push_back(pred[y][x].item<double>());
      }
    }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  const double s = median(g) / median(p);
  for (auto& v : p) v = std::clamp(v * s, cfg.min_depth, cfg.max_depth);
  auto want = loop_metrics(p, g);
  double worst = 0;
  for (int k = 0; k < 7; ++k) worst = std::max(worst, std::abs(m[k] - want[k]));
  o.detail << "recipe 20 epochs, batch 8, lr 1e-4 -> 1e-5 at 15, 640x192; evaluator vs loop " << worst << " over "
           << g.size() << " pixels";
  o.require(worst <= 1e-10, "evaluator agrees with cropped loop");
  return o;
}

// ---------------------------------------------------------------------------
// 11. Determinism.

Outcome determinism() {
  Outcome o;
  auto cfg = toy_run_config();
  cfg.train.precision = Precision::kFloat64;
  cfg.train.max_steps = 50;
  ToySource source(make_toy_dataset(cfg.data.toy));
  std::array<std::vector<LossBundle>, 2> runs;
  for (int r = 0; r < 2; ++r) {
    const auto dir = fs::path(g_work) / ("determinism_" + std::to_string(r));
    fs::remove_all(dir);
    Trainer trainer(cfg);
    runs[r] = trainer.fit(source, dir.string()).history;
  }
  o.require(runs[0].size() == 50 && runs[1].size() == 50, "50 steps each");
  double worst = 0;
  for (std::size_t i = 0; i < std::min(runs[0].size(), runs[1].size()); ++i) {
    const double a = runs[0][i].total_value, b = runs[1][i].total_value;
    worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), 1e-300));
  }
  o.detail << "50 steps at float64, worst relative difference " << worst;
  o.require(worst <= 1e-6, "relative difference <= 1e-6");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ccdepth acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "Run one criterion (1-11); 0 runs all")->check(CLI::Range(0, 11));
  app.add_option("--work", g_work, "Scratch directory for training runs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(g_work);
  torch::set_num_threads(std::max(1u, std::thread::hardware_concurrency()));

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"crate operator oracles", crate_oracles},
      {"finite-difference gradients", gradient_checks},
      {"640x192 shape ladder", shape_ladder},
      {"parameter budget", parameter_budget},
      {"loss identities", loss_identities},
      {"warp geometry", warp_geometry},
      {"toy overfit", toy_overfit},
      {"ISTA sparsity", ista_sparsity},
      {"metrics oracle", metrics_oracle},
      {"recipe and evaluator", recipe_and_evaluator},
      {"determinism", determinism}};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i) + 1 != only) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      const std::string what = e.what();
      o.detail << "exception: " << what.substr(0, what.find('\n'));
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail.str()
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
