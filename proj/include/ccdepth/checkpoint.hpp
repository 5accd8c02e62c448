#pragma once

// Versioned checkpoint container. Layout:
//
//   char[8]  magic "CCDCKPT1"
//   uint32   format version
//   uint64   header length in bytes
//   header   UTF-8 JSON: {"network": NetworkConfig, "metadata": {...},
//            "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}],
//            "blobs": [{"name", "offset", "nbytes"}]}
//   data     tensor payloads and opaque blobs; offsets relative to here

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ccdepth/config.hpp"
#include "ccdepth/depth_net.hpp"

namespace ccdepth {

struct Checkpoint {
  NetworkConfig network;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  std::map<std::string, std::string> blobs;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

/// Named parameters of both networks, prefixed "depth." and "pose.".
Checkpoint snapshot_networks(const DepthNet& depth, const PoseNet& pose);

/// Copies checkpoint tensors into the networks. Every parameter must be
/// present with the same shape; the first mismatching name is reported in a
/// CheckpointError.
void load_networks(const Checkpoint& ckpt, DepthNet& depth, PoseNet& pose);

/// Builds networks from the stored config and loads their parameters.
std::pair<DepthNet, PoseNet> networks_from_checkpoint(const Checkpoint& ckpt);

}  // namespace ccdepth
