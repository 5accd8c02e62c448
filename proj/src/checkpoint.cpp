#include "ccdepth/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "ccdepth/errors.hpp"

namespace ccdepth {
namespace {

constexpr char kMagic[8] = {'C', 'C', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

std::string dtype_name(const torch::Tensor& t) {
  if (t.scalar_type() == torch::kFloat32) return "float32";
  if (t.scalar_type() == torch::kFloat64) return "float64";
  throw CheckpointError("unsupported tensor dtype for checkpointing");
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  throw CheckpointError("unknown tensor dtype '" + s + "' in checkpoint");
}

std::string shape_str(c10::IntArrayRef s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + ")";
}

void load_into(const std::string& prefix, const std::map<std::string, torch::Tensor>& stored, torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& item : m.named_parameters(true)) {
    const std::string name = prefix + item.key();
    auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    if (it->second.sizes() != item.value().sizes())
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(it->second.sizes()) + " in checkpoint but " +
                            shape_str(item.value().sizes()) + " in the network");
    item.value().copy_(it->second);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["network"] = to_json(ckpt.network);
  header["metadata"] = ckpt.metadata;
  header["tensors"] = nlohmann::json::array();
  header["blobs"] = nlohmann::json::array();

  std::vector<torch::Tensor> payloads;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    const std::uint64_t nbytes = c.numel() * c.element_size();
    header["tensors"].push_back(
        {{"name", name}, {"dtype", dtype_name(c)}, {"shape", c.sizes().vec()}, {"offset", offset}, {"nbytes", nbytes}});
    payloads.push_back(c);
    offset += nbytes;
  }
  for (const auto& [name, bytes] : ckpt.blobs) {
    header["blobs"].push_back({{"name", name}, {"offset", offset}, {"nbytes", bytes.size()}});
    offset += bytes.size();
  }
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& c : payloads)
      out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
    for (const auto& [name, bytes] : ckpt.blobs) out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint '" + path + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("'" + path + "' is not a checkpoint");
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || version != kVersion) throw CheckpointError("'" + path + "': unsupported checkpoint version");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("'" + path + "': truncated header");
  const auto header = nlohmann::json::parse(text);
  const auto data_start = in.tellg();

  Checkpoint ckpt;
  ckpt.network = network_config_from_json(header.at("network"));
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& e : header.at("tensors")) {
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, dtype_from(e.at("dtype").get<std::string>()));
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size()))
      throw CheckpointError("tensor '" + e.at("name").get<std::string>() + "' has an inconsistent byte size");
    in.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    if (!in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes)))
      throw CheckpointError("'" + path + "': truncated tensor data");
    ckpt.tensors.emplace_back(e.at("name").get<std::string>(), t);
  }
  for (const auto& e : header.at("blobs")) {
    std::string bytes(e.at("nbytes").get<std::uint64_t>(), '\0');
    in.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size())))
      throw CheckpointError("'" + path + "': truncated blob data");
    ckpt.blobs[e.at("name").get<std::string>()] = std::move(bytes);
  }
  return ckpt;
}

Checkpoint snapshot_networks(const DepthNet& depth, const PoseNet& pose) {
  Checkpoint ckpt;
  ckpt.network = depth->config();
  for (const auto& item : depth->named_parameters(true))
    ckpt.tensors.emplace_back("depth." + item.key(), item.value().detach().clone());
  for (const auto& item : pose->named_parameters(true))
    ckpt.tensors.emplace_back("pose." + item.key(), item.value().detach().clone());
  return ckpt;
}

void load_networks(const Checkpoint& ckpt, DepthNet& depth, PoseNet& pose) {
  std::map<std::string, torch::Tensor> stored(ckpt.tensors.begin(), ckpt.tensors.end());
  load_into("depth.", stored, *depth);
  load_into("pose.", stored, *pose);
}

std::pair<DepthNet, PoseNet> networks_from_checkpoint(const Checkpoint& ckpt) {
  DepthNet depth(ckpt.network);
  PoseNet pose(ckpt.network);
  if (!ckpt.tensors.empty()) {
    const auto dtype = ckpt.tensors.front().second.scalar_type();
    depth->to(dtype);
    pose->to(dtype);
  }
  load_networks(ckpt, depth, pose);
  return {depth, pose};
}

}  // namespace ccdepth
