#include "ccdepth/losses.hpp"

#include <cmath>
#include <string>

#include "ccdepth/errors.hpp"

namespace ccdepth {
namespace {

namespace F = torch::nn::functional;

torch::Tensor snap_to_grid(const torch::Tensor& c) {
  auto r = torch::round(c.detach());
  auto near = (c.detach() - r).abs() < kGridSnap;
  // Straight-through: the value becomes the integer exactly, the gradient is
  // left untouched.
  return torch::where(near, c + (r - c).detach(), c);
}

torch::Tensor area_resize(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kArea));
}

double value_of(const torch::Tensor& t, const std::string& what) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) throw NumericError("non-finite " + what);
  return v;
}

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0 && fy > 0)) throw DomainError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DomainError("intrinsics: resolution must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw DomainError("intrinsics: principal point outside the image");
}

CameraIntrinsics CameraIntrinsics::scaled(double sx, double sy) const {
  CameraIntrinsics k = *this;
  k.fx *= sx;
  k.cx *= sx;
  k.fy *= sy;
  k.cy *= sy;
  k.width = static_cast<int>(std::lround(width * sx));
  k.height = static_cast<int>(std::lround(height * sy));
  return k;
}

CameraIntrinsics CameraIntrinsics::resized(int new_width, int new_height) const {
  CameraIntrinsics k = scaled(static_cast<double>(new_width) / width, static_cast<double>(new_height) / height);
  k.width = new_width;
  k.height = new_height;
  return k;
}

torch::Tensor CameraIntrinsics::matrix(torch::TensorOptions opts) const {
  return torch::tensor({fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0}, torch::kFloat64).view({3, 3}).to(opts);
}

torch::Tensor disp_to_depth_unchecked(const torch::Tensor& disp, DepthRange range) {
  const double min_disp = 1.0 / range.max_depth;
  const double max_disp = 1.0 / range.min_depth;
  return 1.0 / (min_disp + (max_disp - min_disp) * disp);
}

torch::Tensor disp_to_depth(const torch::Tensor& disp, DepthRange range) {
  if (!(range.min_depth > 0 && range.min_depth < range.max_depth))
    throw DomainError("disp_to_depth: need 0 < min_depth < max_depth");
  if (disp.numel() > 0) {
    auto d = disp.detach();
    if (!((d > 0).all().item<bool>() && (d < 1).all().item<bool>()))
      throw DomainError("disp_to_depth: disparity outside the open interval (0, 1)");
  }
  return disp_to_depth_unchecked(disp, range);
}

torch::Tensor bilinear_sample(const torch::Tensor& image, const torch::Tensor& coords) {
  if (image.dim() != 4 || coords.dim() != 4 || coords.size(1) != 2 || coords.size(0) != image.size(0))
    throw ShapeError("bilinear_sample: expected image (B, C, H, W) and coords (B, 2, H', W')");
  const int64_t b = image.size(0), c = image.size(1), h = image.size(2), w = image.size(3);
  const int64_t oh = coords.size(2), ow = coords.size(3);

  auto u = snap_to_grid(coords.select(1, 0)).clamp(0.0, static_cast<double>(w - 1));
  auto v = snap_to_grid(coords.select(1, 1)).clamp(0.0, static_cast<double>(h - 1));
  // Non-finite positions fetch pixel 0 and stay non-finite through the weights.
  auto x0 = torch::floor(torch::nan_to_num(u.detach(), 0.0)).clamp(0, std::max<int64_t>(w - 2, 0));
  auto y0 = torch::floor(torch::nan_to_num(v.detach(), 0.0)).clamp(0, std::max<int64_t>(h - 2, 0));
  auto wx = u - x0;
  auto wy = v - y0;
  auto xi = x0.to(torch::kLong), yi = y0.to(torch::kLong);
  auto xi1 = (xi + 1).clamp_max(w - 1), yi1 = (yi + 1).clamp_max(h - 1);

  auto flat = image.reshape({b, c, h * w});
  auto fetch = [&](const torch::Tensor& yy, const torch::Tensor& xx) {
    auto idx = (yy * w + xx).reshape({b, 1, oh * ow}).expand({b, c, oh * ow});
    return flat.gather(2, idx).view({b, c, oh, ow});
  };
  wx = wx.unsqueeze(1);
  wy = wy.unsqueeze(1);
  return (1 - wx) * (1 - wy) * fetch(yi, xi) + wx * (1 - wy) * fetch(yi, xi1) + (1 - wx) * wy * fetch(yi1, xi) +
         wx * wy * fetch(yi1, xi1);
}

WarpResult warp_reference(const torch::Tensor& ref_image, const torch::Tensor& target_depth, const RelativePose& pose,
                          const torch::Tensor& intrinsics) {
  if (ref_image.dim() != 4 || target_depth.dim() != 4 || target_depth.size(1) != 1)
    throw ShapeError("warp_reference: expected ref (B, C, H, W) and depth (B, 1, H, W)");
  const int64_t b = target_depth.size(0), h = target_depth.size(2), w = target_depth.size(3);
  if (ref_image.size(0) != b || ref_image.size(2) != h || ref_image.size(3) != w)
    throw ShapeError("warp_reference: reference image and depth map shapes disagree");
  const auto opts = target_depth.options();

  auto k = intrinsics.to(opts);
  if (k.dim() == 2) k = k.unsqueeze(0).expand({b, 3, 3});
  auto k_inv = torch::linalg_inv(k);

  auto ys = torch::arange(h, opts);
  auto xs = torch::arange(w, opts);
  auto grid = torch::meshgrid({ys, xs}, "ij");
  auto pix = torch::stack({grid[1].flatten(), grid[0].flatten(), torch::ones({h * w}, opts)});  // (3, HW)

  auto cam = torch::matmul(k_inv, pix) * target_depth.view({b, 1, h * w});
  auto moved = torch::bmm(axis_angle_to_rotation(pose.axis_angle), cam) + pose.translation.unsqueeze(-1);
  auto proj = torch::bmm(k, moved);
  auto z = proj.select(1, 2);
  auto zc = z.clamp_min(1e-6);
  auto u = snap_to_grid(proj.select(1, 0) / zc);
  auto v = snap_to_grid(proj.select(1, 1) / zc);

  auto valid = (z > 1e-6) & (u >= 0) & (u <= static_cast<double>(w - 1)) & (v >= 0) & (v <= static_cast<double>(h - 1));
  auto coords = torch::stack({u, v}, 1).view({b, 2, h, w});
  return {bilinear_sample(ref_image, coords), valid.view({b, 1, h, w}).to(opts.dtype()).detach(), coords};
}

torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("ssim: images differ in shape");
  auto pad = [](const torch::Tensor& x) { return F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect)); };
  auto pool = [&](const torch::Tensor& x) { return F::avg_pool2d(pad(x), F::AvgPool2dFuncOptions(3).stride(1)); };
  auto mu_a = pool(a), mu_b = pool(b);
  auto sigma_a = pool(a * a) - mu_a * mu_a;
  auto sigma_b = pool(b * b) - mu_b * mu_b;
  auto sigma_ab = pool(a * b) - mu_a * mu_b;
  auto num = (2 * mu_a * mu_b + kSsimC1) * (2 * sigma_ab + kSsimC2);
  auto den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (sigma_a + sigma_b + kSsimC2);
  return (num / den).clamp(-1.0, 1.0);
}

torch::Tensor photometric_error(const torch::Tensor& target, const torch::Tensor& reconstruction, double alpha) {
  auto structural = (1 - ssim(target, reconstruction)).mean(1, true);
  auto l1 = (target - reconstruction).abs().mean(1, true);
  return (alpha / 2) * structural + (1 - alpha) * l1;
}

torch::Tensor photometric_loss(const std::vector<torch::Tensor>& errors, PhotometricAggregation agg) {
  if (errors.empty()) throw ShapeError("photometric_loss: no reconstruction errors");
  auto stacked = torch::cat(errors, 1);
  if (agg == PhotometricAggregation::kMin) return std::get<0>(stacked.min(1, true));
  return stacked.sum(1, true);
}

torch::Tensor auto_mask(const std::vector<torch::Tensor>& reconstruction_errors,
                        const std::vector<torch::Tensor>& identity_errors) {
  if (reconstruction_errors.empty() || identity_errors.empty()) throw ShapeError("auto_mask: empty error list");
  auto best_recon = std::get<0>(torch::cat(reconstruction_errors, 1).detach().min(1, true));
  auto best_identity = std::get<0>(torch::cat(identity_errors, 1).detach().min(1, true));
  return (best_recon < best_identity).to(best_recon.dtype());
}

torch::Tensor auto_mask(const torch::Tensor& target, const std::vector<torch::Tensor>& refs,
                        const std::vector<torch::Tensor>& reconstructions, double alpha) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> recon_err, identity_err;
  for (const auto& r : reconstructions) recon_err.push_back(photometric_error(target, r, alpha));
  for (const auto& r : refs) identity_err.push_back(photometric_error(target, r, alpha));
  return auto_mask(recon_err, identity_err);
}

torch::Tensor smoothness_loss(const torch::Tensor& disp, const torch::Tensor& image) {
  if (disp.dim() != 4 || image.dim() != 4 || disp.size(2) != image.size(2) || disp.size(3) != image.size(3))
    throw ShapeError("smoothness_loss: disparity and image spatial dims differ");
  auto d = disp / (disp.mean({2, 3}, true) + 1e-7);
  const int64_t h = d.size(2), w = d.size(3);
  auto loss = torch::zeros({}, disp.options());
  if (w > 1) {
    auto dx = (d.narrow(3, 1, w - 1) - d.narrow(3, 0, w - 1)).abs();
    auto ix = (image.narrow(3, 1, w - 1) - image.narrow(3, 0, w - 1)).abs().mean(1, true);
    loss = loss + (dx * torch::exp(-ix)).mean();
  }
  if (h > 1) {
    auto dy = (d.narrow(2, 1, h - 1) - d.narrow(2, 0, h - 1)).abs();
    auto iy = (image.narrow(2, 1, h - 1) - image.narrow(2, 0, h - 1)).abs().mean(1, true);
    loss = loss + (dy * torch::exp(-iy)).mean();
  }
  return loss;
}

torch::Tensor scale_loss(const torch::Tensor& photometric, const torch::Tensor& mask, const torch::Tensor& smoothness,
                         double lambda) {
  if (lambda < 0) throw DomainError("scale_loss: lambda must be >= 0");
  auto covered = mask.sum().clamp_min(1.0);
  return (mask * photometric).sum() / covered + lambda * smoothness;
}

double scale_weight(int n) { return std::ldexp(1.0, -(n - 1)); }

torch::Tensor total_loss(const std::vector<torch::Tensor>& per_scale) {
  if (per_scale.empty() || per_scale.size() > 4) throw DomainError("total_loss: expected 1..4 scale losses");
  auto total = per_scale[0] * scale_weight(1);
  for (std::size_t n = 1; n < per_scale.size(); ++n) total = total + per_scale[n] * scale_weight(static_cast<int>(n + 1));
  return total;
}

LossBundle compute_loss(const LossInputs& in, const LossConfig& cfg) {
  const int64_t full_h = in.target.size(2), full_w = in.target.size(3);
  const DepthRange range{cfg.min_depth, cfg.max_depth};
  LossBundle bundle;
  std::vector<torch::Tensor> per_scale;

  for (std::size_t s = 0; s < in.disparities.size(); ++s) {
    const int n = static_cast<int>(s + 1);
    const auto& disp = in.disparities[s];
    const int64_t h = disp.size(2), w = disp.size(3);

    torch::Tensor disp_used, target = in.target, intrinsics = in.intrinsics;
    std::array<torch::Tensor, 2> refs = in.refs;
    if (cfg.loss_at_scale == LossResolution::kUpsampled) {
      disp_used = (h == full_h && w == full_w)
                      ? disp
                      : F::interpolate(disp, F::InterpolateFuncOptions()
                                                 .size(std::vector<int64_t>{full_h, full_w})
                                                 .mode(torch::kBilinear)
                                                 .align_corners(false));
    } else {
      disp_used = disp;
      target = area_resize(in.target, h, w);
      for (auto& r : refs) r = area_resize(r, h, w);
      auto scale = torch::tensor({static_cast<double>(w) / full_w, static_cast<double>(h) / full_h, 1.0},
                                 in.intrinsics.options());
      intrinsics = in.intrinsics * scale.view({3, 1});
    }
    auto depth = disp_to_depth_unchecked(disp_used, range);

    std::vector<torch::Tensor> recon_err, identity_err;
    torch::Tensor valid;
    for (int k = 0; k < 2; ++k) {
      auto warp = warp_reference(refs[k], depth, in.poses[k], intrinsics);
      recon_err.push_back(photometric_error(target, warp.image, cfg.alpha));
      valid = valid.defined() ? valid * warp.valid : warp.valid;
      if (cfg.automask) {
        torch::NoGradGuard no_grad;
        identity_err.push_back(photometric_error(target, refs[k], cfg.alpha));
      }
    }
    auto lp = photometric_loss(recon_err, cfg.photometric_agg);
    auto mu = cfg.automask ? auto_mask(recon_err, identity_err) : torch::ones_like(valid);
    auto mask = mu * valid;

    auto smooth = smoothness_loss(disp, area_resize(in.target, h, w));
    auto photo_term = (mask * lp).sum() / mask.sum().clamp_min(1.0);
    auto ln = scale_loss(lp, mask, smooth, cfg.smoothness_weight);

    const std::string tag = " at scale " + std::to_string(n);
    const double photo_v = value_of(photo_term, "photometric loss" + tag);
    const double smooth_v = value_of(smooth, "smoothness loss" + tag);
    const double ln_v = value_of(ln, "scale loss" + tag);
    bundle.photometric += scale_weight(n) * photo_v;
    bundle.smoothness += scale_weight(n) * smooth_v;
    bundle.per_scale.push_back(ln_v);
    if (s == 0) bundle.mask_coverage = mu.mean().item<double>();
    per_scale.push_back(ln);
  }
  bundle.total = total_loss(per_scale);
  bundle.total_value = value_of(bundle.total, "total loss");
  return bundle;
}

}  // namespace ccdepth
