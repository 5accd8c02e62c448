#include "ccdepth/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ccdepth/errors.hpp"

namespace ccdepth {
namespace {

using nlohmann::json;

template <typename E>
struct EnumNames;

template <>
struct EnumNames<PaddingMode> {
  static constexpr std::array<std::pair<const char*, PaddingMode>, 2> kValues{
      {{"reflect", PaddingMode::kReflect}, {"zeros", PaddingMode::kZeros}}};
};
template <>
struct EnumNames<SkipMode> {
  static constexpr std::array<std::pair<const char*, SkipMode>, 2> kValues{
      {{"concat", SkipMode::kConcat}, {"none", SkipMode::kNone}}};
};
template <>
struct EnumNames<MssaScaleMode> {
  static constexpr std::array<std::pair<const char*, MssaScaleMode>, 2> kValues{
      {{"as_written", MssaScaleMode::kAsWritten}, {"single_factor", MssaScaleMode::kSingleFactor}}};
};
template <>
struct EnumNames<PhotometricAggregation> {
  static constexpr std::array<std::pair<const char*, PhotometricAggregation>, 2> kValues{
      {{"sum", PhotometricAggregation::kSum}, {"min", PhotometricAggregation::kMin}}};
};
template <>
struct EnumNames<LossResolution> {
  static constexpr std::array<std::pair<const char*, LossResolution>, 2> kValues{
      {{"upsampled", LossResolution::kUpsampled}, {"native", LossResolution::kNative}}};
};
template <>
struct EnumNames<Precision> {
  static constexpr std::array<std::pair<const char*, Precision>, 2> kValues{
      {{"float32", Precision::kFloat32}, {"float64", Precision::kFloat64}}};
};

template <typename E>
std::string enum_name(E v) {
  for (const auto& [name, value] : EnumNames<E>::kValues)
    if (value == v) return name;
  return "?";
}

template <typename E>
std::string enum_choices() {
  std::string out;
  for (const auto& [name, value] : EnumNames<E>::kValues) {
    if (!out.empty()) out += "|";
    out += name;
  }
  return out;
}

// Walks one JSON object, type-checking each known key and rejecting the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    read(*it, field(key), out);
  }

  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Reader sub(*it, field(key));
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown field");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  static void read(const json& v, const std::string& f, int& out) {
    if (!v.is_number_integer()) throw ConfigError(f + ": expected integer");
    out = v.get<int>();
  }
  static void read(const json& v, const std::string& f, long& out) {
    if (!v.is_number_integer()) throw ConfigError(f + ": expected integer");
    out = v.get<long>();
  }
  static void read(const json& v, const std::string& f, std::uint64_t& out) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
      throw ConfigError(f + ": expected non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void read(const json& v, const std::string& f, double& out) {
    if (!v.is_number()) throw ConfigError(f + ": expected number");
    out = v.get<double>();
  }
  static void read(const json& v, const std::string& f, bool& out) {
    if (!v.is_boolean()) throw ConfigError(f + ": expected boolean");
    out = v.get<bool>();
  }
  static void read(const json& v, const std::string& f, std::string& out) {
    if (!v.is_string()) throw ConfigError(f + ": expected string");
    out = v.get<std::string>();
  }
  template <std::size_t N>
  static void read(const json& v, const std::string& f, std::array<int, N>& out) {
    if (!v.is_array() || v.size() != N || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); }))
      throw ConfigError(f + ": expected array of " + std::to_string(N) + " integers");
    for (std::size_t i = 0; i < N; ++i) out[i] = v[i].get<int>();
  }
  static void read(const json& v, const std::string& f, std::vector<int>& out) {
    if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); }))
      throw ConfigError(f + ": expected array of integers");
    out = v.get<std::vector<int>>();
  }
  template <typename E>
    requires std::is_enum_v<E>
  static void read(const json& v, const std::string& f, E& out) {
    if (v.is_string()) {
      for (const auto& [name, value] : EnumNames<E>::kValues) {
        if (v.get<std::string>() == name) {
          out = value;
          return;
        }
      }
    }
    throw ConfigError(f + ": expected one of " + enum_choices<E>());
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_crate(Reader& r, CrateConfig& c) {
  r.get("eps", c.eps);
  r.get("kappa", c.kappa);
  r.get("eta", c.eta);
  r.get("lambda1", c.lambda1);
  r.get("heads", c.heads);
  r.get("modules_per_layer", c.modules_per_layer);
  r.get("pre_norm", c.pre_norm);
  r.get("mssa_scale_mode", c.mssa_scale_mode);
  r.get("embed_depth", c.embed_depth);
}

void read_network(Reader& r, NetworkConfig& c) {
  r.get("width", c.width);
  r.get("height", c.height);
  r.get("cnn_channels", c.cnn_channels);
  r.get("crate_dims", c.crate_dims);
  r.get("num_scales", c.num_scales);
  r.get("padding_mode", c.padding);
  r.get("skips", c.skips);
  r.section("crate", [&](Reader& s) { read_crate(s, c.crate); });
  r.get("pose_channels", c.pose_channels);
  r.get("pose_output_scale", c.pose_output_scale);
  r.get("param_budget", c.param_budget);
}

json crate_json(const CrateConfig& c) {
  return {{"eps", c.eps},
          {"kappa", c.kappa},
          {"eta", c.eta},
          {"lambda1", c.lambda1},
          {"heads", c.heads},
          {"modules_per_layer", c.modules_per_layer},
          {"pre_norm", c.pre_norm},
          {"mssa_scale_mode", enum_name(c.mssa_scale_mode)},
          {"embed_depth", c.embed_depth}};
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

std::array<int, 10> NetworkConfig::layer_channels() const {
  const auto [c1, c2, c3] = cnn_channels;
  const auto [d4, d5] = crate_dims;
  return {c1, c2, c3, d4, d5, d4, c3, c3, c2, c1};
}

std::array<int, 4> NetworkConfig::crate_token_dims() const {
  return {crate_dims[0], crate_dims[1], crate_dims[1], crate_dims[0]};
}

void NetworkConfig::validate() const {
  require(width > 0 && height > 0, "network.width/height: expected positive integers");
  require(width % 32 == 0, "network.width: must be divisible by 32 (five halvings)");
  require(height % 32 == 0, "network.height: must be divisible by 32 (five halvings)");
  for (int c : cnn_channels) require(c > 0, "network.cnn_channels: expected positive integers");
  for (int d : crate_dims) {
    require(d > 0, "network.crate_dims: expected positive integers");
    require(d % crate.heads == 0, "network.crate_dims: token dims must be divisible by crate.heads");
  }
  require(num_scales >= 1 && num_scales <= 4, "network.num_scales: expected integer in 1..4");
  require(crate.heads > 0, "network.crate.heads: expected positive integer");
  require(crate.modules_per_layer > 0, "network.crate.modules_per_layer: expected positive integer");
  require(crate.eps > 0, "network.crate.eps: must be > 0");
  require(crate.kappa > 0, "network.crate.kappa: must be > 0");
  require(crate.eta > 0, "network.crate.eta: must be > 0");
  require(crate.lambda1 >= 0, "network.crate.lambda1: must be >= 0");
  require(crate.embed_depth >= 1, "network.crate.embed_depth: must be >= 1");
  require(!pose_channels.empty(), "network.pose_channels: expected non-empty array");
  for (int c : pose_channels) require(c > 0, "network.pose_channels: expected positive integers");
}

void LossConfig::validate() const {
  require(alpha >= 0 && alpha <= 1, "loss.alpha: expected number in [0, 1]");
  require(smoothness_weight >= 0, "loss.smoothness_weight: must be >= 0");
  require(min_depth > 0 && min_depth < max_depth, "loss.min_depth/max_depth: need 0 < min_depth < max_depth");
}

void TrainConfig::validate() const {
  require(epochs > 0, "train.epochs: must be > 0");
  require(batch_size > 0, "train.batch_size: must be > 0");
  require(lr_initial > 0 && lr_after_drop > 0, "train.lr_initial/lr_after_drop: must be > 0");
  require(lr_drop_epoch >= 0 && lr_drop_epoch < epochs, "train.lr_drop_epoch: must lie in [0, epochs)");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train.beta1/beta2: expected numbers in [0, 1)");
  require(grad_clip >= 0, "train.grad_clip: must be >= 0");
  require(checkpoint_every > 0, "train.checkpoint_every: must be > 0");
}

void ToyConfig::validate() const {
  require(scenes > 0, "data.toy.scenes: must be > 0");
  require(width > 0 && height > 0, "data.toy.width/height: expected positive integers");
  require(camera_speed >= 0, "data.toy.camera_speed: must be >= 0");
}

void DataConfig::validate() const {
  require(dataset == "toy" || dataset == "kitti", "data.dataset: expected one of toy|kitti");
  toy.validate();
}

void EvalConfig::validate() const {
  require(min_depth > 0 && min_depth < max_depth, "eval.min_depth/max_depth: need 0 < min_depth < max_depth");
  require(crop == "eigen" || crop == "none", "eval.crop: expected one of eigen|none");
}

void AnalysisConfig::validate() const {
  require(zero_tolerance >= 0, "analysis.zero_tolerance: must be >= 0");
  require(samples_per_split > 0, "analysis.samples_per_split: must be > 0");
  require(warmup_runs >= 0, "analysis.warmup_runs: must be >= 0");
  require(max_feature_channels > 0, "analysis.max_feature_channels: must be > 0");
}

void RunConfig::validate() const {
  network.validate();
  loss.validate();
  train.validate();
  data.validate();
  eval.validate();
  analysis.validate();
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  Reader r(j, "network");
  read_network(r, c);
  r.finish();
  return c;
}

nlohmann::json to_json(const NetworkConfig& c) {
  return {{"width", c.width},
          {"height", c.height},
          {"cnn_channels", c.cnn_channels},
          {"crate_dims", c.crate_dims},
          {"num_scales", c.num_scales},
          {"padding_mode", enum_name(c.padding)},
          {"skips", enum_name(c.skips)},
          {"crate", crate_json(c.crate)},
          {"pose_channels", c.pose_channels},
          {"pose_output_scale", c.pose_output_scale},
          {"param_budget", c.param_budget}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Reader r(j, "");
  r.section("network", [&](Reader& s) { read_network(s, c.network); });
  r.section("loss", [&](Reader& s) {
    s.get("alpha", c.loss.alpha);
    s.get("smoothness_weight", c.loss.smoothness_weight);
    s.get("min_depth", c.loss.min_depth);
    s.get("max_depth", c.loss.max_depth);
    s.get("photometric_agg", c.loss.photometric_agg);
    s.get("loss_at_scale", c.loss.loss_at_scale);
    s.get("automask", c.loss.automask);
  });
  r.section("train", [&](Reader& s) {
    s.get("epochs", c.train.epochs);
    s.get("batch_size", c.train.batch_size);
    s.get("lr_initial", c.train.lr_initial);
    s.get("lr_after_drop", c.train.lr_after_drop);
    s.get("lr_drop_epoch", c.train.lr_drop_epoch);
    s.get("beta1", c.train.beta1);
    s.get("beta2", c.train.beta2);
    s.get("grad_clip", c.train.grad_clip);
    s.get("seed", c.train.seed);
    s.get("checkpoint_every", c.train.checkpoint_every);
    s.get("max_steps", c.train.max_steps);
    s.get("resume", c.train.resume);
    s.get("precision", c.train.precision);
  });
  r.section("data", [&](Reader& s) {
    s.get("dataset", c.data.dataset);
    s.get("root", c.data.root);
    s.get("split", c.data.split);
    s.get("splits_dir", c.data.splits_dir);
    s.get("augment", c.data.augment);
    s.section("toy", [&](Reader& t) {
      t.get("scenes", c.data.toy.scenes);
      t.get("width", c.data.toy.width);
      t.get("height", c.data.toy.height);
      t.get("camera_speed", c.data.toy.camera_speed);
      t.get("seed", c.data.toy.seed);
    });
  });
  r.section("eval", [&](Reader& s) {
    s.get("min_depth", c.eval.min_depth);
    s.get("max_depth", c.eval.max_depth);
    s.get("median_scaling", c.eval.median_scaling);
    s.get("crop", c.eval.crop);
  });
  r.section("analysis", [&](Reader& s) {
    s.get("zero_tolerance", c.analysis.zero_tolerance);
    s.get("samples_per_split", c.analysis.samples_per_split);
    s.get("warmup_runs", c.analysis.warmup_runs);
    s.get("max_feature_channels", c.analysis.max_feature_channels);
  });
  r.finish();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"network", to_json(c.network)},
          {"loss",
           {{"alpha", c.loss.alpha},
            {"smoothness_weight", c.loss.smoothness_weight},
            {"min_depth", c.loss.min_depth},
            {"max_depth", c.loss.max_depth},
            {"photometric_agg", enum_name(c.loss.photometric_agg)},
            {"loss_at_scale", enum_name(c.loss.loss_at_scale)},
            {"automask", c.loss.automask}}},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"lr_initial", c.train.lr_initial},
            {"lr_after_drop", c.train.lr_after_drop},
            {"lr_drop_epoch", c.train.lr_drop_epoch},
            {"beta1", c.train.beta1},
            {"beta2", c.train.beta2},
            {"grad_clip", c.train.grad_clip},
            {"seed", c.train.seed},
            {"checkpoint_every", c.train.checkpoint_every},
            {"max_steps", c.train.max_steps},
            {"resume", c.train.resume},
            {"precision", enum_name(c.train.precision)}}},
          {"data",
           {{"dataset", c.data.dataset},
            {"root", c.data.root},
            {"split", c.data.split},
            {"splits_dir", c.data.splits_dir},
            {"augment", c.data.augment},
            {"toy",
             {{"scenes", c.data.toy.scenes},
              {"width", c.data.toy.width},
              {"height", c.data.toy.height},
              {"camera_speed", c.data.toy.camera_speed},
              {"seed", c.data.toy.seed}}}}},
          {"eval",
           {{"min_depth", c.eval.min_depth},
            {"max_depth", c.eval.max_depth},
            {"median_scaling", c.eval.median_scaling},
            {"crop", c.eval.crop}}},
          {"analysis",
           {{"zero_tolerance", c.analysis.zero_tolerance},
            {"samples_per_split", c.analysis.samples_per_split},
            {"warmup_runs", c.analysis.warmup_runs},
            {"max_feature_channels", c.analysis.max_feature_channels}}}};
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': JSON parse error: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file '" + path + "'");
  out << to_json(c).dump(2) << "\n";
}

RunConfig toy_run_config() {
  RunConfig c;
  c.network.width = 128;
  c.network.height = 64;
  // Toy textures carry no depth cue, so depth follows image position, which
  // zero padding exposes to the convolutions and reflect padding hides.
  c.network.padding = PaddingMode::kZeros;
  // The pose head starts near 0.1 scene units per frame rather than 0.01.
  c.network.pose_output_scale = 0.1;
  c.train.batch_size = 4;
  c.train.lr_initial = 2e-4;
  c.train.lr_after_drop = 2e-5;
  // 20 scenes at batch 4 give 5 steps per epoch; 2,500 steps in total.
  c.train.epochs = 500;
  c.train.lr_drop_epoch = 400;
  c.train.checkpoint_every = 50;
  c.data.dataset = "toy";
  c.eval.crop = "none";
  return c;
}

std::string to_string(PaddingMode m) { return enum_name(m); }
std::string to_string(Precision p) { return enum_name(p); }

}  // namespace ccdepth
