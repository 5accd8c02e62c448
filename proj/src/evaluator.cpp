#include "ccdepth/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ccdepth/errors.hpp"
#include "ccdepth/losses.hpp"

namespace ccdepth {
namespace fs = std::filesystem;
namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + n / 2));
}

std::string csv_row(const std::string& id, const MetricsReport& m) {
  std::string row = id;
  char buf[32];
  for (double v : m.values()) {
    std::snprintf(buf, sizeof(buf), ",%.6f", v);
    row += buf;
  }
  return row;
}

}  // namespace

const std::vector<std::string>& MetricsReport::columns() {
  static const std::vector<std::string> c{"abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"};
  return c;
}

std::array<double, 7> MetricsReport::values() const {
  return {abs_rel, sq_rel, rmse, rmse_log, delta1, delta2, delta3};
}

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw ShapeError("compute_metrics: prediction and ground truth differ in size");
  if (gt.empty()) throw DomainError("compute_metrics: no valid pixels");
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  std::int64_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double p = pred[i], g = gt[i];
    if (!(p > 0) || !(g > 0) || !std::isfinite(p) || !std::isfinite(g))
      throw DomainError("compute_metrics: depths must be finite and positive");
    const double diff = p - g;
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    // max(p/g, g/p) < t, written without division so a ratio of exactly t
    // is never rounded below the threshold.
    auto within = [&](double t) { return p < t * g && g < t * p; };
    d1 += within(1.25);
    d2 += within(1.25 * 1.25);
    d3 += within(1.25 * 1.25 * 1.25);
  }
  const auto n = static_cast<double>(gt.size());
  MetricsReport m;
  m.abs_rel = abs_rel / n;
  m.sq_rel = sq_rel / n;
  m.rmse = std::sqrt(sq / n);
  m.rmse_log = std::sqrt(sq_log / n);
  m.delta1 = static_cast<double>(d1) / n;
  m.delta2 = static_cast<double>(d2) / n;
  m.delta3 = static_cast<double>(d3) / n;
  m.n_images = 1;
  return m;
}

double median_scale_factor(std::span<const double> pred, std::span<const double> gt) {
  if (pred.empty() || gt.empty()) throw DomainError("median_scale: no valid pixels");
  const double mp = median_of({pred.begin(), pred.end()});
  if (mp == 0) throw DomainError("median_scale: prediction median is zero");
  return median_of({gt.begin(), gt.end()}) / mp;
}

std::vector<double> median_scale(std::span<const double> pred, std::span<const double> gt) {
  const double s = median_scale_factor(pred, gt);
  std::vector<double> out(pred.begin(), pred.end());
  for (auto& v : out) v *= s;
  return out;
}

CropBox eigen_crop(int height, int width) {
  return {static_cast<int>(0.40810811 * height), static_cast<int>(0.99189189 * height),
          static_cast<int>(0.03594771 * width), static_cast<int>(0.96405229 * width)};
}

MetricsReport evaluate_depth(const torch::Tensor& pred_depth, const torch::Tensor& gt_depth, const EvalConfig& cfg) {
  cfg.validate();
  if (gt_depth.dim() != 2) throw ShapeError("evaluate_depth: ground truth must be (H, W)");
  auto pred = pred_depth.detach().to(torch::kCPU, torch::kFloat64);
  while (pred.dim() > 2) pred = pred.squeeze(0);
  if (pred.dim() != 2) throw ShapeError("evaluate_depth: prediction must be (h, w)");
  const int64_t h = gt_depth.size(0), w = gt_depth.size(1);
  if (pred.size(0) != h || pred.size(1) != w) {
    pred = torch::nn::functional::interpolate(pred.view({1, 1, pred.size(0), pred.size(1)}),
                                              torch::nn::functional::InterpolateFuncOptions()
                                                  .size(std::vector<int64_t>{h, w})
                                                  .mode(torch::kBilinear)
                                                  .align_corners(false))
               .view({h, w});
  }
  auto gt = gt_depth.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  pred = pred.contiguous();
  auto ga = gt.accessor<double, 2>();
  auto pa = pred.accessor<double, 2>();

  CropBox box{0, static_cast<int>(h), 0, static_cast<int>(w)};
  if (cfg.crop == "eigen") box = eigen_crop(static_cast<int>(h), static_cast<int>(w));

  std::vector<double> p, g;
  for (int y = box.top; y < box.bottom; ++y)
    for (int x = box.left; x < box.right; ++x) {
      const double gv = ga[y][x];
      if (gv > cfg.min_depth && gv < cfg.max_depth) {
        g.push_back(gv);
        p.push_back(pa[y][x]);
      }
    }
  if (g.empty()) throw DomainError("evaluate_depth: no valid pixels after capping and crop");
  if (cfg.median_scaling) p = median_scale(p, g);
  for (auto& v : p) v = std::clamp(v, cfg.min_depth, cfg.max_depth);
  auto m = compute_metrics(p, g);
  m.scaling_mode = cfg.median_scaling ? "median" : "none";
  return m;
}

MetricsReport aggregate(const std::vector<MetricsReport>& per_image) {
  MetricsReport out;
  out.n_images = static_cast<int64_t>(per_image.size());
  if (per_image.empty()) return out;
  out.scaling_mode = per_image.front().scaling_mode;
  std::array<double, 7> sum{};
  for (const auto& m : per_image) {
    const auto v = m.values();
    for (std::size_t i = 0; i < 7; ++i) sum[i] += v[i];
  }
  const auto n = static_cast<double>(per_image.size());
  out.abs_rel = sum[0] / n;
  out.sq_rel = sum[1] / n;
  out.rmse = sum[2] / n;
  out.rmse_log = sum[3] / n;
  out.delta1 = sum[4] / n;
  out.delta2 = sum[5] / n;
  out.delta3 = sum[6] / n;
  return out;
}

SplitEvaluation evaluate_split(DepthNet& net, const TripletSource& source, const EvalConfig& eval_cfg,
                               const LossConfig& loss_cfg) {
  torch::NoGradGuard no_grad;
  net->eval();
  const auto dtype = net->parameters().front().scalar_type();
  SplitEvaluation out;
  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < source.size(); ++i) {
    auto gt = source.ground_truth(i);
    auto load = source.get(i);
    if (!load.triplet) {
      out.skipped.push_back(load.skip_reason);
      continue;
    }
    const auto& id = load.triplet->source_id;
    if (!gt) {
      out.skipped.push_back(id + ": no ground truth");
      continue;
    }
    auto disp = net->forward(load.triplet->target.unsqueeze(0).to(dtype)).front();
    auto depth = disp_to_depth_unchecked(disp, {loss_cfg.min_depth, loss_cfg.max_depth})[0][0];
    try {
      auto m = evaluate_depth(depth, *gt, eval_cfg);
      out.per_image.emplace_back(id, m);
      reports.push_back(m);
    } catch (const DomainError& e) {
      out.skipped.push_back(id + ": " + e.what());
    }
  }
  out.aggregate = aggregate(reports);
  out.aggregate.scaling_mode = eval_cfg.median_scaling ? "median" : "none";
  return out;
}

nlohmann::json report_json(const SplitEvaluation& e, const EvalConfig& cfg) {
  nlohmann::json j;
  j["scaling_mode"] = e.aggregate.scaling_mode;
  j["depth_cap"] = cfg.max_depth;
  j["min_depth"] = cfg.min_depth;
  j["crop"] = cfg.crop;
  j["n_images"] = e.aggregate.n_images;
  j["n_skipped"] = e.skipped.size();
  j["columns"] = MetricsReport::columns();
  const auto v = e.aggregate.values();
  for (std::size_t i = 0; i < 7; ++i) j["metrics"][MetricsReport::columns()[i]] = v[i];
  j["skipped"] = e.skipped;
  return j;
}

void write_report(const std::string& out_dir, const SplitEvaluation& e, const EvalConfig& cfg) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  {
    std::ofstream j(dir / "metrics.json");
    if (!j) throw IoError("cannot write report in '" + out_dir + "'");
    j << report_json(e, cfg).dump(2) << "\n";
  }
  std::string header = "# scaling_mode=" + e.aggregate.scaling_mode + " depth_cap=" + std::to_string(cfg.max_depth) +
                       "\nid";
  for (const auto& c : MetricsReport::columns()) header += "," + c;
  std::ofstream csv(dir / "metrics.csv");
  csv << header << "\n" << csv_row("mean", e.aggregate) << "\n";
  std::ofstream detail(dir / "per_image.csv");
  detail << header << "\n";
  for (const auto& [id, m] : e.per_image) detail << csv_row("\"" + id + "\"", m) << "\n";
}

}  // namespace ccdepth
