#pragma once

// Instrumentation: non-zero counts after every ISTA step, feature-map export
// and inference latency.

#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ccdepth/depth_net.hpp"
#include "ccdepth/kitti_data.hpp"

namespace ccdepth {

/// Entries whose magnitude exceeds tolerance (tolerance 0: exactly non-zero).
int64_t count_nonzero_entries(const torch::Tensor& t, double tolerance = 0.0);

/// Counts for one basic module, summed over the instrumented images.
/// total = images * d * N, percentage = 100 nonzero / total.
struct SparsityRecord {
  int layer_id = 0;
  int module_index = 0;  // 1-based within the layer
  int64_t nonzero = 0;
  int64_t total = 0;
  int64_t images = 0;
  double percentage = 0;
  std::string split;
};

/// Runs the network on up to max_samples target frames with observers on the
/// CRATE layers; one record per (layer, module), ordered by layer then module.
std::vector<SparsityRecord> count_nonzero(DepthNet& net, const TripletSource& source, const std::string& split_tag,
                                          std::size_t max_samples, double tolerance = 0.0);

void write_sparsity_csv(const std::string& path, const std::vector<SparsityRecord>& records);

struct FeatureExport {
  int layer_id = 0;
  std::string image_path;
  std::string sidecar_path;
};

/// Writes, per layer, a 16-bit grayscale grid of channel maps normalized per
/// channel to [0, 1], plus a JSON sidecar with the grid geometry and each
/// channel's (min, max). Throws DomainError listing the valid ids for a
/// layer outside 1..10.
std::vector<FeatureExport> export_feature_maps(DepthNet& net, const torch::Tensor& image, const std::vector<int>& layer_ids,
                                               const std::string& out_dir, int max_channels = 64);

/// Reads a grid written by export_feature_maps and restores raw values of
/// the exported channels as (C, h, w).
torch::Tensor load_feature_grid(const std::string& sidecar_path);

inline constexpr double kReferenceLatencyMs = 15.71;

struct TimingReport {
  std::vector<double> samples_ms;
  double mean = 0, stddev = 0, min = 0, max = 0, p50 = 0, p90 = 0, p99 = 0;
  int width = 0, height = 0, warmup_runs = 0;
  std::string hardware;

  nlohmann::json to_json() const;
};

/// Wall-clock latency of single-image forward passes at the network's
/// resolution, warm-up runs excluded. Throws DomainError when n_runs < 10.
TimingReport time_inference(DepthNet& net, int n_runs, int warmup_runs = 3);

std::string describe_hardware();

}  // namespace ccdepth
