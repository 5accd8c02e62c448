#pragma once

// Self-supervised objective: view synthesis by inverse warping, SSIM + L1
// photometric error, automatic masking of static pixels, edge-aware
// smoothness and dyadic multi-scale weighting.
//
// Images are (B, C, H, W) tensors with values in [0, 1]; per-pixel maps are
// (B, 1, H, W).

#include <array>
#include <vector>

#include <torch/torch.h>

#include "ccdepth/config.hpp"
#include "ccdepth/depth_net.hpp"

namespace ccdepth {

struct CameraIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  void validate() const;
  /// Intrinsics after resizing the image by (sx, sy).
  CameraIntrinsics scaled(double sx, double sy) const;
  CameraIntrinsics resized(int new_width, int new_height) const;
  torch::Tensor matrix(torch::TensorOptions opts = torch::kFloat64) const;  // (3, 3)
};

struct DepthRange {
  double min_depth = 0.1;
  double max_depth = 100.0;
};

/// depth = 1 / (1/max + disp (1/min - 1/max)). Throws DomainError when any
/// disparity lies outside the open interval (0, 1).
torch::Tensor disp_to_depth(const torch::Tensor& disp, DepthRange range = {});
/// Same mapping without the domain check, for saturated network outputs.
torch::Tensor disp_to_depth_unchecked(const torch::Tensor& disp, DepthRange range = {});

struct WarpResult {
  torch::Tensor image;   // I_{t'->t}, (B, C, H, W)
  torch::Tensor valid;   // 1 where the sample lands in front of the camera and inside the frame
  torch::Tensor coords;  // (B, 2, H, W) sampling position (u, v) in reference pixels
};

/// Sampling positions within this distance (pixels) of the pixel grid snap
/// onto it, so that grid-aligned warps reproduce the reference exactly.
inline constexpr double kGridSnap = 1e-3;

/// Bilinear sampling of image at pixel coordinates (u, v), clamped to the
/// border. coords: (B, 2, H', W').
torch::Tensor bilinear_sample(const torch::Tensor& image, const torch::Tensor& coords);

/// Back-projects target pixels with their depth, moves them by pose into the
/// reference camera, projects with K and samples the reference image.
/// intrinsics: (3, 3) or (B, 3, 3).
WarpResult warp_reference(const torch::Tensor& ref_image, const torch::Tensor& target_depth, const RelativePose& pose,
                          const torch::Tensor& intrinsics);

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Per-pixel SSIM with 3x3 reflect-padded windows, clamped to [-1, 1].
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b);

/// alpha/2 (1 - SSIM) + (1 - alpha) |a - b|, averaged over channels.
torch::Tensor photometric_error(const torch::Tensor& target, const torch::Tensor& reconstruction, double alpha = 0.85);

/// Per-pixel aggregation of the error maps over reference frames.
torch::Tensor photometric_loss(const std::vector<torch::Tensor>& errors,
                               PhotometricAggregation agg = PhotometricAggregation::kSum);

/// 1 where min over reconstructions of pe beats min over unwarped references.
torch::Tensor auto_mask(const std::vector<torch::Tensor>& reconstruction_errors,
                        const std::vector<torch::Tensor>& identity_errors);
torch::Tensor auto_mask(const torch::Tensor& target, const std::vector<torch::Tensor>& refs,
                        const std::vector<torch::Tensor>& reconstructions, double alpha = 0.85);

/// Edge-aware smoothness of the mean-normalized disparity, forward
/// differences, averaged over pixels and batch.
torch::Tensor smoothness_loss(const torch::Tensor& disp, const torch::Tensor& image);

/// sum(mask * L_p) / max(sum(mask), 1) + lambda L_s.
torch::Tensor scale_loss(const torch::Tensor& photometric, const torch::Tensor& mask, const torch::Tensor& smoothness,
                         double lambda);

/// Weight of scale n (1-based): 1 / 2^(n-1).
double scale_weight(int n);
/// sum_n L_n / 2^(n-1), scale 1 first.
torch::Tensor total_loss(const std::vector<torch::Tensor>& per_scale);

struct LossInputs {
  torch::Tensor target;                   // (B, 3, H, W)
  std::array<torch::Tensor, 2> refs;      // I_{t-1}, I_{t+1}
  torch::Tensor intrinsics;               // (B, 3, 3) at full resolution
  std::vector<torch::Tensor> disparities; // finest first
  std::array<RelativePose, 2> poses;      // target -> each reference
};

struct LossBundle {
  torch::Tensor total;  // differentiable
  double photometric = 0;    // dyadically weighted masked photometric terms
  double smoothness = 0;     // dyadically weighted smoothness terms
  std::vector<double> per_scale;
  double total_value = 0;
  double mask_coverage = 0;  // fraction of full-resolution pixels with mu = 1
};

LossBundle compute_loss(const LossInputs& in, const LossConfig& cfg);

}  // namespace ccdepth
