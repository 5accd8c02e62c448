#include "ccdepth/depth_net.hpp"

#include "ccdepth/errors.hpp"

namespace ccdepth {
namespace {

namespace F = torch::nn::functional;

torch::Tensor concat_skip(const torch::Tensor& x, const torch::Tensor& skip) {
  if (!skip.defined()) return x;
  if (skip.size(2) != x.size(2) || skip.size(3) != x.size(3))
    throw ShapeError("skip connection resolution " + std::to_string(skip.size(3)) + "x" + std::to_string(skip.size(2)) +
                     " does not match decoder feature " + std::to_string(x.size(3)) + "x" + std::to_string(x.size(2)));
  return torch::cat({x, skip}, 1);
}

}  // namespace

torch::nn::Conv2d make_conv3x3(int64_t in, int64_t out, PaddingMode padding) {
  auto opts = torch::nn::Conv2dOptions(in, out, 3).padding(1);
  if (padding == PaddingMode::kReflect)
    opts.padding_mode(torch::kReflect);
  else
    opts.padding_mode(torch::kZeros);
  return torch::nn::Conv2d(opts);
}

ResidualBlockImpl::ResidualBlockImpl(int64_t in, int64_t out, PaddingMode padding) {
  conv1_ = register_module("conv1", make_conv3x3(in, out, padding));
  conv2_ = register_module("conv2", make_conv3x3(out, out, padding));
  if (in != out) shortcut_ = register_module("shortcut", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv2_(torch::elu(conv1_(x)));
  auto s = shortcut_ ? shortcut_(x) : x;
  return torch::elu(y + s);
}

CnnEncoderStageImpl::CnnEncoderStageImpl(int64_t in, int64_t out, PaddingMode padding) {
  block1_ = register_module("block1", ResidualBlock(in, out, padding));
  block2_ = register_module("block2", ResidualBlock(out, out, padding));
}

EncoderStageOutput CnnEncoderStageImpl::forward(const torch::Tensor& x) {
  if (x.size(2) % 2 != 0 || x.size(3) % 2 != 0)
    throw ShapeError("encoder stage: odd spatial dims " + std::to_string(x.size(3)) + "x" + std::to_string(x.size(2)) +
                     " cannot be max-pooled by 2");
  auto full = block2_(block1_(x));
  return {full, F::max_pool2d(full, F::MaxPool2dFuncOptions(2).stride(2))};
}

CrateEncoderStageImpl::CrateEncoderStageImpl(int64_t in, int64_t dim, int64_t out, const CrateConfig& cfg) {
  layer = register_module("crate", crate::CrateLayer(in, dim, out, 2, cfg));
}

torch::Tensor CrateEncoderStageImpl::forward(const torch::Tensor& x) { return layer(x); }

CrateDecoderStageImpl::CrateDecoderStageImpl(int64_t in, int64_t dim, int64_t out, const CrateConfig& cfg) {
  layer = register_module("crate", crate::CrateLayer(in, dim, out, 1, cfg));
}

torch::Tensor CrateDecoderStageImpl::transform(const torch::Tensor& x, const torch::Tensor& skip) {
  return layer(concat_skip(x, skip));
}

torch::Tensor CrateDecoderStageImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
  return upsample2x(transform(x, skip));
}

CnnDecoderStageImpl::CnnDecoderStageImpl(int64_t in, int64_t out, PaddingMode padding) {
  block1_ = register_module("block1", ResidualBlock(in, out, padding));
  block2_ = register_module("block2", ResidualBlock(out, out, padding));
}

torch::Tensor CnnDecoderStageImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
  return block2_(block1_(concat_skip(upsample2x(x), skip)));
}

PredictionHeadImpl::PredictionHeadImpl(int64_t in, PaddingMode padding) {
  conv = register_module("conv", make_conv3x3(in, 1, padding));
}

torch::Tensor PredictionHeadImpl::logits(const torch::Tensor& x) { return conv(x); }
torch::Tensor PredictionHeadImpl::forward(const torch::Tensor& x) { return torch::sigmoid(conv(x)); }

torch::Tensor upsample2x(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{2 * x.size(2), 2 * x.size(3)})
                               .mode(torch::kNearest));
}

DepthNetImpl::DepthNetImpl(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto c = cfg_.layer_channels();
  const auto d = cfg_.crate_token_dims();
  const bool skips = cfg_.skips == SkipMode::kConcat;
  const auto pad = cfg_.padding;

  enc_cnn_[0] = register_module("layer1", CnnEncoderStage(3, c[0], pad));
  enc_cnn_[1] = register_module("layer2", CnnEncoderStage(c[0], c[1], pad));
  enc_cnn_[2] = register_module("layer3", CnnEncoderStage(c[1], c[2], pad));
  enc_crate_[0] = register_module("layer4", CrateEncoderStage(c[2], d[0], c[3], cfg_.crate));
  enc_crate_[1] = register_module("layer5", CrateEncoderStage(c[3], d[1], c[4], cfg_.crate));
  // Layer 6 consumes X5 directly: its mirror is the bottleneck itself.
  dec_crate_[0] = register_module("layer6", CrateDecoderStage(c[4], d[2], c[5], cfg_.crate));
  dec_crate_[1] = register_module("layer7", CrateDecoderStage(c[5] + (skips ? c[3] : 0), d[3], c[6], cfg_.crate));
  dec_cnn_[0] = register_module("layer8", CnnDecoderStage(c[6] + (skips ? c[2] : 0), c[7], pad));
  dec_cnn_[1] = register_module("layer9", CnnDecoderStage(c[7] + (skips ? c[1] : 0), c[8], pad));
  dec_cnn_[2] = register_module("layer10", CnnDecoderStage(c[8] + (skips ? c[0] : 0), c[9], pad));

  for (int s = 0; s < cfg_.num_scales; ++s)
    heads_.push_back(register_module("head" + std::to_string(s + 1), PredictionHead(c[9 - s], pad)));
}

void DepthNetImpl::set_crate_observer(CrateObserver observer) {
  auto bind = [&observer](crate::CrateLayer& layer, int layer_id) {
    if (!observer) {
      layer->set_observer({});
      return;
    }
    layer->set_observer([observer, layer_id](int module_index, const torch::Tensor& z) {
      observer(layer_id, module_index, z);
    });
  };
  bind(enc_crate_[0]->layer, 4);
  bind(enc_crate_[1]->layer, 5);
  bind(dec_crate_[0]->layer, 6);
  bind(dec_crate_[1]->layer, 7);
}

DepthNetOutput DepthNetImpl::forward_features(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3)
    throw ShapeError("depth net expects a (B, 3, H, W) image tensor");
  if (image.size(2) != cfg_.height || image.size(3) != cfg_.width)
    throw ShapeError("depth net configured for " + std::to_string(cfg_.width) + "x" + std::to_string(cfg_.height) +
                     " input, got " + std::to_string(image.size(3)) + "x" + std::to_string(image.size(2)));
  const bool skips = cfg_.skips == SkipMode::kConcat;
  DepthNetOutput out;
  auto& x = out.layers;

  std::array<torch::Tensor, 3> full_res;
  torch::Tensor cur = image;
  for (int i = 0; i < 3; ++i) {
    auto stage = enc_cnn_[i]->forward(cur);
    full_res[i] = stage.full_resolution;
    x[i] = cur = stage.pooled;
  }
  x[3] = enc_crate_[0]->forward(x[2]);
  x[4] = enc_crate_[1]->forward(x[3]);
  x[5] = dec_crate_[0]->forward(x[4]);
  x[6] = dec_crate_[1]->forward(x[5], skips ? x[3] : torch::Tensor());
  x[7] = dec_cnn_[0]->forward(x[6], skips ? full_res[2] : torch::Tensor());
  x[8] = dec_cnn_[1]->forward(x[7], skips ? full_res[1] : torch::Tensor());
  x[9] = dec_cnn_[2]->forward(x[8], skips ? full_res[0] : torch::Tensor());

  for (int s = 0; s < cfg_.num_scales; ++s) out.disparities.push_back(heads_[s]->forward(x[9 - s]));
  return out;
}

torch::Tensor axis_angle_to_rotation(const torch::Tensor& axis_angle) {
  if (axis_angle.dim() != 2 || axis_angle.size(1) != 3) throw ShapeError("axis-angle must have shape (B, 3)");
  const auto b = axis_angle.size(0);
  auto theta_sq = (axis_angle * axis_angle).sum(1);
  auto theta = torch::sqrt(theta_sq + 1e-24);
  auto a = torch::sin(theta) / theta;
  auto half_sin = torch::sin(0.5 * theta);
  auto c = 2.0 * half_sin * half_sin / (theta * theta);  // (1 - cos)/theta^2 without cancellation

  auto zero = torch::zeros({b}, axis_angle.options());
  auto rx = axis_angle.select(1, 0), ry = axis_angle.select(1, 1), rz = axis_angle.select(1, 2);
  auto k = torch::stack({zero, -rz, ry, rz, zero, -rx, -ry, rx, zero}, 1).view({b, 3, 3});
  auto eye = torch::eye(3, axis_angle.options()).expand({b, 3, 3});
  return eye + a.view({b, 1, 1}) * k + c.view({b, 1, 1}) * torch::bmm(k, k);
}

torch::Tensor pose_to_matrix(const RelativePose& pose) {
  const auto b = pose.axis_angle.size(0);
  auto top = torch::cat({axis_angle_to_rotation(pose.axis_angle), pose.translation.view({b, 3, 1})}, 2);
  auto bottom = torch::zeros({b, 1, 4}, top.options());
  bottom.select(2, 3).fill_(1.0);
  return torch::cat({top, bottom}, 1);
}

RelativePose invert_pose(const RelativePose& pose) {
  auto rt = axis_angle_to_rotation(pose.axis_angle).transpose(1, 2);
  return {-pose.axis_angle, -torch::bmm(rt, pose.translation.unsqueeze(2)).squeeze(2)};
}

PoseNetImpl::PoseNetImpl(const NetworkConfig& cfg) : output_scale_(cfg.pose_output_scale) {
  int64_t in = 6;
  for (std::size_t i = 0; i < cfg.pose_channels.size(); ++i) {
    const int64_t k = i == 0 ? 7 : (i == 1 ? 5 : 3);
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, cfg.pose_channels[i], k).stride(2).padding(k / 2));
    convs_.push_back(register_module("conv" + std::to_string(i + 1), conv));
    in = cfg.pose_channels[i];
  }
  head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 6, 1)));
}

RelativePose PoseNetImpl::forward(const torch::Tensor& frames) {
  if (frames.dim() != 4 || frames.size(1) != 6) throw ShapeError("pose net expects (B, 6, H, W) frame pairs");
  auto x = frames;
  for (auto& conv : convs_) x = torch::relu(conv(x));
  auto out = head(x).mean({2, 3}) * output_scale_;
  return {out.narrow(1, 0, 3), out.narrow(1, 3, 3)};
}

std::array<RelativePose, 2> estimate_triplet_poses(PoseNet& net, const torch::Tensor& target,
                                                   const std::array<torch::Tensor, 2>& refs) {
  return {invert_pose(net->forward(torch::cat({refs[0], target}, 1))), net->forward(torch::cat({target, refs[1]}, 1))};
}

int64_t count_parameters(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

ParameterCount count_parameters(const NetworkConfig& cfg) {
  torch::NoGradGuard no_grad;
  DepthNet depth(cfg);
  PoseNet pose(cfg);
  return {count_parameters(*depth), count_parameters(*pose)};
}

}  // namespace ccdepth
