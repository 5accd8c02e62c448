#include "ccdepth/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "ccdepth/errors.hpp"
#include "ccdepth/image_io.hpp"

namespace ccdepth {
namespace fs = std::filesystem;
namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

int64_t count_nonzero_entries(const torch::Tensor& t, double tolerance) {
  if (tolerance < 0) throw DomainError("count_nonzero: tolerance must be >= 0");
  return (t.abs() > tolerance).sum().item<int64_t>();
}

std::vector<SparsityRecord> count_nonzero(DepthNet& net, const TripletSource& source, const std::string& split_tag,
                                          std::size_t max_samples, double tolerance) {
  torch::NoGradGuard no_grad;
  net->eval();
  const auto dtype = net->parameters().front().scalar_type();
  std::map<std::pair<int, int>, SparsityRecord> acc;
  net->set_crate_observer([&](int layer_id, int module_index, const torch::Tensor& z) {
    auto& r = acc[{layer_id, module_index}];
    r.layer_id = layer_id;
    r.module_index = module_index;
    r.nonzero += count_nonzero_entries(z, tolerance);
    r.total += z.numel();
    r.images += z.size(0);
  });
  try {
    const std::size_t n = std::min(max_samples, source.size());
    for (std::size_t i = 0; i < n; ++i) {
      auto load = source.get(i);
      if (!load.triplet) continue;
      net->forward(load.triplet->target.unsqueeze(0).to(dtype));
    }
  } catch (...) {
    net->set_crate_observer({});
    throw;
  }
  net->set_crate_observer({});
  std::vector<SparsityRecord> out;
  for (auto& [key, r] : acc) {
    r.split = split_tag;
    r.percentage = r.total > 0 ? 100.0 * static_cast<double>(r.nonzero) / static_cast<double>(r.total) : 0.0;
    out.push_back(r);
  }
  return out;
}

void write_sparsity_csv(const std::string& path, const std::vector<SparsityRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "layer_id,module_index,split,nonzero,total,percentage\n";
  char buf[32];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.percentage);
    out << r.layer_id << ',' << r.module_index << ',' << r.split << ',' << r.nonzero << ',' << r.total << ',' << buf
        << "\n";
  }
}

std::vector<FeatureExport> export_feature_maps(DepthNet& net, const torch::Tensor& image, const std::vector<int>& layer_ids,
                                               const std::string& out_dir, int max_channels) {
  for (int id : layer_ids)
    if (id < 1 || id > 10)
      throw DomainError("invalid layer id " + std::to_string(id) + "; valid ids are 1, 2, 3, 4, 5, 6, 7, 8, 9, 10");
  if (max_channels < 1) throw DomainError("export_feature_maps: max_channels must be positive");
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("export_feature_maps: expected a (3, H, W) image");
  torch::NoGradGuard no_grad;
  net->eval();
  const auto dtype = net->parameters().front().scalar_type();
  auto features = net->forward_features(image.unsqueeze(0).to(dtype));
  fs::create_directories(out_dir);

  std::vector<FeatureExport> out;
  for (int id : layer_ids) {
    auto x = features.layers[static_cast<std::size_t>(id - 1)][0].to(torch::kFloat64);
    const int64_t channels = std::min<int64_t>(x.size(0), max_channels);
    x = x.narrow(0, 0, channels);
    const int64_t h = x.size(1), w = x.size(2);
    const auto cols = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(channels))));
    const int64_t rows = (channels + cols - 1) / cols;
    auto grid = torch::zeros({rows * h, cols * w}, torch::kFloat64);
    nlohmann::json side;
    side["layer_id"] = id;
    side["channels"] = channels;
    side["channels_in_layer"] = features.layers[static_cast<std::size_t>(id - 1)].size(1);
    side["tile_height"] = h;
    side["tile_width"] = w;
    side["grid_rows"] = rows;
    side["grid_cols"] = cols;
    side["bits"] = 16;
    side["normalization"] = nlohmann::json::array();
    for (int64_t c = 0; c < channels; ++c) {
      const double lo = x[c].min().item<double>(), hi = x[c].max().item<double>();
      auto tile = hi > lo ? (x[c] - lo) / (hi - lo) : torch::zeros_like(x[c]);
      grid.narrow(0, (c / cols) * h, h).narrow(1, (c % cols) * w, w).copy_(tile);
      side["normalization"].push_back({{"channel", c}, {"min", lo}, {"max", hi}});
    }
    char name[32];
    std::snprintf(name, sizeof(name), "layer_%02d", id);
    FeatureExport e{id, (fs::path(out_dir) / (std::string(name) + ".png")).string(),
                    (fs::path(out_dir) / (std::string(name) + ".json")).string()};
    write_image_gray(e.image_path, grid, 16);
    side["image"] = fs::path(e.image_path).filename().string();
    std::ofstream(e.sidecar_path) << side.dump(2) << "\n";
    out.push_back(e);
  }
  return out;
}

torch::Tensor load_feature_grid(const std::string& sidecar_path) {
  std::ifstream in(sidecar_path);
  if (!in) throw IoError("cannot open '" + sidecar_path + "'");
  const auto side = nlohmann::json::parse(in);
  const auto grid =
      read_image_gray((fs::path(sidecar_path).parent_path() / side.at("image").get<std::string>()).string())
          .to(torch::kFloat64);
  const int64_t h = side.at("tile_height"), w = side.at("tile_width"), cols = side.at("grid_cols");
  const int64_t channels = side.at("channels");
  auto out = torch::empty({channels, h, w}, torch::kFloat64);
  for (int64_t c = 0; c < channels; ++c) {
    const auto& n = side.at("normalization").at(static_cast<std::size_t>(c));
    const double lo = n.at("min"), hi = n.at("max");
    out[c].copy_(grid.narrow(0, (c / cols) * h, h).narrow(1, (c % cols) * w, w) * (hi - lo) + lo);
  }
  return out;
}

nlohmann::json TimingReport::to_json() const {
  return {{"reference_latency_ms", kReferenceLatencyMs},
          {"hardware", hardware},
          {"width", width},
          {"height", height},
          {"warmup_runs", warmup_runs},
          {"n_runs", samples_ms.size()},
          {"mean_ms", mean},
          {"std_ms", stddev},
          {"min_ms", min},
          {"max_ms", max},
          {"p50_ms", p50},
          {"p90_ms", p90},
          {"p99_ms", p99},
          {"samples_ms", samples_ms}};
}

std::string describe_hardware() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  return cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads; torch intra-op threads " +
         std::to_string(torch::get_num_threads()) + "; device cpu";
}

TimingReport time_inference(DepthNet& net, int n_runs, int warmup_runs) {
  if (n_runs < 10) throw DomainError("time_inference: n_runs must be at least 10");
  if (warmup_runs < 0) throw DomainError("time_inference: warmup_runs must be >= 0");
  torch::NoGradGuard no_grad;
  net->eval();
  const auto& cfg = net->config();
  const auto dtype = net->parameters().front().scalar_type();
  auto input = torch::rand({1, 3, cfg.height, cfg.width}, torch::TensorOptions().dtype(dtype));
  TimingReport r;
  r.width = cfg.width;
  r.height = cfg.height;
  r.warmup_runs = warmup_runs;
  r.hardware = describe_hardware();
  for (int i = 0; i < warmup_runs; ++i) net->forward(input);
  for (int i = 0; i < n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = net->forward(input);
    const auto t1 = std::chrono::steady_clock::now();
    r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  const auto n = static_cast<double>(r.samples_ms.size());
  double sum = 0, sq = 0;
  for (double v : r.samples_ms) sum += v;
  r.mean = sum / n;
  for (double v : r.samples_ms) sq += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(sq / (n - 1));
  r.min = *std::min_element(r.samples_ms.begin(), r.samples_ms.end());
  r.max = *std::max_element(r.samples_ms.begin(), r.samples_ms.end());
  r.p50 = percentile(r.samples_ms, 0.5);
  r.p90 = percentile(r.samples_ms, 0.9);
  r.p99 = percentile(r.samples_ms, 0.99);
  return r;
}

}  // namespace ccdepth
