#pragma once

// Hybrid U-Net depth network: three residual CNN encoder stages, two CRATE
// encoder stages (patch 2), two CRATE decoder stages (patch 1 + upsampling),
// three CNN decoder stages and sigmoid disparity heads on layers 7..10.
// Also the pose network regressing the motion between two frames.

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "ccdepth/config.hpp"
#include "ccdepth/crate.hpp"

namespace ccdepth {

/// 3x3 convolution honoring the configured padding mode.
torch::nn::Conv2d make_conv3x3(int64_t in, int64_t out, PaddingMode padding);

/// Two 3x3 convolutions with ELU, identity shortcut or a 1x1 projection when
/// the channel count changes.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t in, int64_t out, PaddingMode padding);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, shortcut_{nullptr};
};
TORCH_MODULE(ResidualBlock);

struct EncoderStageOutput {
  torch::Tensor full_resolution;  // X_{i+1/2}, kept for the skip connection
  torch::Tensor pooled;           // X_{i+1}
};

class CnnEncoderStageImpl : public torch::nn::Module {
 public:
  CnnEncoderStageImpl(int64_t in, int64_t out, PaddingMode padding);
  /// Throws ShapeError when the input has odd spatial dims.
  EncoderStageOutput forward(const torch::Tensor& x);

 private:
  ResidualBlock block1_{nullptr}, block2_{nullptr};
};
TORCH_MODULE(CnnEncoderStage);

/// CRATE layer with patch size 2: halves the resolution.
class CrateEncoderStageImpl : public torch::nn::Module {
 public:
  CrateEncoderStageImpl(int64_t in, int64_t dim, int64_t out, const CrateConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  crate::CrateLayer layer{nullptr};
};
TORCH_MODULE(CrateEncoderStage);

/// Optional skip concatenation, CRATE layer with patch size 1, then 2x
/// nearest-neighbor upsampling.
class CrateDecoderStageImpl : public torch::nn::Module {
 public:
  CrateDecoderStageImpl(int64_t in, int64_t dim, int64_t out, const CrateConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip = {});
  /// Output of the CRATE layer before upsampling.
  torch::Tensor transform(const torch::Tensor& x, const torch::Tensor& skip = {});
  crate::CrateLayer layer{nullptr};
};
TORCH_MODULE(CrateDecoderStage);

/// 2x upsampling, optional skip concatenation, two residual blocks.
class CnnDecoderStageImpl : public torch::nn::Module {
 public:
  CnnDecoderStageImpl(int64_t in, int64_t out, PaddingMode padding);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip = {});

 private:
  ResidualBlock block1_{nullptr}, block2_{nullptr};
};
TORCH_MODULE(CnnDecoderStage);

/// 3x3 convolution to one channel followed by a sigmoid.
class PredictionHeadImpl : public torch::nn::Module {
 public:
  PredictionHeadImpl(int64_t in, PaddingMode padding);
  torch::Tensor forward(const torch::Tensor& x);
  /// Pre-sigmoid activation.
  torch::Tensor logits(const torch::Tensor& x);
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(PredictionHead);

torch::Tensor upsample2x(const torch::Tensor& x);

struct DepthNetOutput {
  /// Disparity maps, finest first: scale n has resolution (W, H) / 2^(n-1).
  std::vector<torch::Tensor> disparities;
  /// Layer outputs X_1..X_10 (index 0 is layer 1).
  std::array<torch::Tensor, 10> layers;
};

/// Called with (layer_id 4..7, module_index, post-ISTA tokens).
using CrateObserver = std::function<void(int, int, const torch::Tensor&)>;

class DepthNetImpl : public torch::nn::Module {
 public:
  explicit DepthNetImpl(const NetworkConfig& cfg);

  /// image: (B, 3, H, W) in [0, 1] at the configured resolution.
  DepthNetOutput forward_features(const torch::Tensor& image);
  std::vector<torch::Tensor> forward(const torch::Tensor& image) { return forward_features(image).disparities; }

  const NetworkConfig& config() const { return cfg_; }
  /// Heads indexed by scale (0 = finest, attached to layer 10).
  PredictionHead head(int scale) const { return heads_.at(static_cast<std::size_t>(scale)); }
  void set_crate_observer(CrateObserver observer);

 private:
  NetworkConfig cfg_;
  std::array<CnnEncoderStage, 3> enc_cnn_{nullptr, nullptr, nullptr};
  std::array<CrateEncoderStage, 2> enc_crate_{nullptr, nullptr};
  std::array<CrateDecoderStage, 2> dec_crate_{nullptr, nullptr};
  std::array<CnnDecoderStage, 3> dec_cnn_{nullptr, nullptr, nullptr};
  std::vector<PredictionHead> heads_;
};
TORCH_MODULE(DepthNet);

/// Axis-angle rotation (radians) and translation mapping target-camera
/// coordinates into the reference camera: X_ref = R X_target + t.
struct RelativePose {
  torch::Tensor axis_angle;   // (B, 3)
  torch::Tensor translation;  // (B, 3)
};

/// Rodrigues' formula; (B, 3) -> (B, 3, 3).
torch::Tensor axis_angle_to_rotation(const torch::Tensor& axis_angle);
/// (B, 4, 4) rigid transform.
torch::Tensor pose_to_matrix(const RelativePose& pose);
/// The reverse motion: axis-angle negated, translation -R^T t.
RelativePose invert_pose(const RelativePose& pose);

/// Strided convolutions, ReLU, 1x1 head to 6 numbers averaged over space.
class PoseNetImpl : public torch::nn::Module {
 public:
  explicit PoseNetImpl(const NetworkConfig& cfg);
  /// frames: (B, 6, H, W), two frames along channels. The result maps the
  /// first frame's camera coordinates into the second's.
  RelativePose forward(const torch::Tensor& frames);
  torch::nn::Conv2d head{nullptr};

 private:
  std::vector<torch::nn::Conv2d> convs_;
  double output_scale_;
};
TORCH_MODULE(PoseNet);

/// Target-to-reference poses for (I_{t-1}, I_{t+1}). Pairs are always fed in
/// temporal order, so the previous frame's estimate is inverted.
std::array<RelativePose, 2> estimate_triplet_poses(PoseNet& net, const torch::Tensor& target,
                                                   const std::array<torch::Tensor, 2>& refs);

struct ParameterCount {
  int64_t depth_net = 0;
  int64_t pose_net = 0;
  int64_t total() const { return depth_net + pose_net; }
};

int64_t count_parameters(const torch::nn::Module& module);
/// Builds both networks for the config and counts their learnable scalars.
ParameterCount count_parameters(const NetworkConfig& cfg);

}  // namespace ccdepth
