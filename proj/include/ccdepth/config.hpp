#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace ccdepth {

enum class PaddingMode { kReflect, kZeros };
enum class SkipMode { kConcat, kNone };
// How many p/(N eps^2) factors the MSSA residual step carries: one inside the
// MSSA operator and one in the step weight (as_written), or only the step
// weight (single_factor).
enum class MssaScaleMode { kAsWritten, kSingleFactor };
enum class PhotometricAggregation { kSum, kMin };
enum class LossResolution { kUpsampled, kNative };
enum class Precision { kFloat32, kFloat64 };

struct CrateConfig {
  double eps = 0.1;
  double kappa = 1.0;
  double eta = 0.1;
  double lambda1 = 0.1;
  int heads = 6;
  int modules_per_layer = 2;
  bool pre_norm = true;
  MssaScaleMode mssa_scale_mode = MssaScaleMode::kAsWritten;
  int embed_depth = 1;
};

struct NetworkConfig {
  int width = 640;
  int height = 192;
  std::array<int, 3> cnn_channels{32, 64, 128};
  std::array<int, 2> crate_dims{384, 864};
  int num_scales = 4;
  PaddingMode padding = PaddingMode::kReflect;
  SkipMode skips = SkipMode::kConcat;
  CrateConfig crate;
  std::vector<int> pose_channels{16, 32, 64, 128, 256, 256, 256};
  double pose_output_scale = 0.01;
  double param_budget = 12.6e6;

  /// Output channels C_1..C_10 of the ten layers.
  std::array<int, 10> layer_channels() const;
  /// Token dimension d of the CRATE layers 4..7.
  std::array<int, 4> crate_token_dims() const;
  void validate() const;
};

struct LossConfig {
  double alpha = 0.85;
  double smoothness_weight = 1e-3;
  double min_depth = 0.1;
  double max_depth = 100.0;
  PhotometricAggregation photometric_agg = PhotometricAggregation::kSum;
  LossResolution loss_at_scale = LossResolution::kUpsampled;
  bool automask = true;
  void validate() const;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double lr_initial = 1e-4;
  double lr_after_drop = 1e-5;
  int lr_drop_epoch = 15;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  int checkpoint_every = 1;
  long max_steps = -1;  // negative: run all epochs
  bool resume = true;
  Precision precision = Precision::kFloat32;
  void validate() const;
};

struct ToyConfig {
  int scenes = 20;
  int width = 128;
  int height = 64;
  double camera_speed = 0.4;
  std::uint64_t seed = 7;
  void validate() const;
};

struct DataConfig {
  std::string dataset = "toy";  // toy | kitti
  std::string root;
  std::string split = "eigen_zhou";
  std::string splits_dir;  // defaults to <root>/splits
  bool augment = false;
  ToyConfig toy;
  void validate() const;
};

struct EvalConfig {
  double min_depth = 1e-3;
  double max_depth = 80.0;
  bool median_scaling = true;
  std::string crop = "eigen";  // eigen | none
  void validate() const;
};

struct AnalysisConfig {
  double zero_tolerance = 0.0;
  int samples_per_split = 100;
  int warmup_runs = 3;
  int max_feature_channels = 64;
  void validate() const;
};

struct RunConfig {
  NetworkConfig network;
  LossConfig loss;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  AnalysisConfig analysis;
  void validate() const;
};

/// Reads a configuration document. Unknown keys and wrong types raise
/// ConfigError naming the dotted field path and the expected type.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NetworkConfig& c);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& c, const std::string& path);

/// Preset for desk-scale runs on the synthetic dataset: default widths at
/// 128x64, batch 4, 2,500 steps.
RunConfig toy_run_config();

std::string to_string(PaddingMode m);
std::string to_string(Precision p);

}  // namespace ccdepth
