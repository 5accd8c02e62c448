#include "ccdepth/kitti_data.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "ccdepth/errors.hpp"
#include "ccdepth/image_io.hpp"
#include "ccdepth/raw_array.hpp"

namespace ccdepth {
namespace fs = std::filesystem;
namespace {

constexpr const char* kLayout =
    "expected layout: <root>/<date>/calib_cam_to_cam.txt, "
    "<root>/<date>/<drive>_sync/image_0{2,3}/data/<frame:010>.png|jpg, "
    "<root>/<date>/<drive>_sync/gt_depth/image_02/<frame:010>.ccdr, "
    "split lists in <splits_dir>/<split>/{train,val,test}_files.txt";

std::string frame_name(int frame) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%010d", frame);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

bool frame_exists(const std::string& root, const SplitEntry& e, int offset) {
  return !frame_image_path(root, e, offset).empty();
}

}  // namespace

std::string SplitEntry::id() const { return folder + " " + std::to_string(frame) + " " + (camera == 3 ? "r" : "l"); }

std::optional<SplitEntry> parse_split_line(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> tok;
  for (std::string t; ss >> t;) tok.push_back(t);
  if (tok.empty()) return std::nullopt;
  SplitEntry e;
  try {
    if (tok.size() >= 2) {
      e.folder = tok[0];
      e.frame = std::stoi(tok[1]);
      e.camera = (tok.size() >= 3 && tok[2] == "r") ? 3 : 2;
      return e;
    }
    // Relative path form: <folder>/image_0X/data/<frame>.<ext>
    fs::path p(tok[0]);
    const auto camera_dir = p.parent_path().parent_path().filename().string();
    if (camera_dir != "image_02" && camera_dir != "image_03") return std::nullopt;
    e.camera = camera_dir == "image_03" ? 3 : 2;
    e.folder = p.parent_path().parent_path().parent_path().generic_string();
    e.frame = std::stoi(p.stem().string());
    return e;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string frame_image_path(const std::string& root, const SplitEntry& e, int frame_offset) {
  const int frame = e.frame + frame_offset;
  if (frame < 0) return {};
  const fs::path base = fs::path(root) / e.folder / ("image_0" + std::to_string(e.camera)) / "data" / frame_name(frame);
  for (const char* ext : {".png", ".jpg"}) {
    auto p = base;
    p += ext;
    if (fs::exists(p)) return p.string();
  }
  return {};
}

std::string ground_truth_path(const std::string& root, const SplitEntry& e) {
  return (fs::path(root) / e.folder / "gt_depth" / ("image_0" + std::to_string(e.camera)) / (frame_name(e.frame) + ".ccdr"))
      .string();
}

SplitManifest load_split(const std::string& dataset_root, const std::string& split_name, const std::string& splits_dir) {
  if (!fs::is_directory(dataset_root))
    throw IoError("dataset root '" + dataset_root + "' does not exist; " + kLayout);
  const fs::path dir = splits_dir.empty() ? fs::path(dataset_root) / "splits" : fs::path(splits_dir);

  SplitManifest m;
  auto read_list = [&](const std::string& part, bool need_neighbours, std::vector<SplitEntry>& out) {
    fs::path list = dir / split_name / (part + "_files.txt");
    if (part == "test" && !fs::exists(list)) list = dir / "eigen" / "test_files.txt";
    if (!fs::exists(list)) {
      m.missing.push_back("split list " + list.string());
      return;
    }
    for (const auto& line : read_lines(list)) {
      auto e = parse_split_line(line);
      if (!e) continue;
      const bool ok = frame_exists(dataset_root, *e, 0) &&
                      (!need_neighbours || (frame_exists(dataset_root, *e, -1) && frame_exists(dataset_root, *e, 1)));
      if (!ok) {
        m.missing.push_back(part + ": " + e->id());
        continue;
      }
      e->has_ground_truth = fs::exists(ground_truth_path(dataset_root, *e));
      out.push_back(*e);
    }
  };
  read_list("train", true, m.train);
  read_list("val", true, m.val);
  read_list("test", false, m.test);
  return m;
}

CameraIntrinsics read_kitti_intrinsics(const std::string& calib_path, int camera) {
  std::ifstream in(calib_path);
  if (!in) throw IoError("cannot open calibration file '" + calib_path + "'");
  const std::string p_key = "P_rect_0" + std::to_string(camera) + ":";
  const std::string s_key = "S_rect_0" + std::to_string(camera) + ":";
  std::vector<double> p, s;
  for (std::string line; std::getline(in, line);) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto& dst = key == p_key ? p : (key == s_key ? s : p);
    if (key != p_key && key != s_key) continue;
    for (double v; ss >> v;) dst.push_back(v);
  }
  if (p.size() != 12 || s.size() != 2)
    throw IoError("calibration file '" + calib_path + "' lacks " + p_key + " or " + s_key);
  CameraIntrinsics k{p[0], p[5], p[2], p[6], static_cast<int>(s[0]), static_cast<int>(s[1])};
  return k;
}

TripletLoad load_triplet(const std::string& dataset_root, const SplitEntry& entry, int width, int height) {
  TripletLoad out;
  std::array<std::string, 3> paths{frame_image_path(dataset_root, entry, -1), frame_image_path(dataset_root, entry, 0),
                                   frame_image_path(dataset_root, entry, 1)};
  for (int i = 0; i < 3; ++i) {
    if (paths[i].empty()) {
      out.skip_reason = entry.id() + ": missing frame offset " + std::to_string(i - 1);
      return out;
    }
  }
  const std::string date = fs::path(entry.folder).parent_path().string();
  const auto calib = fs::path(dataset_root) / date / "calib_cam_to_cam.txt";
  if (!fs::exists(calib)) {
    out.skip_reason = entry.id() + ": missing calibration " + calib.string();
    return out;
  }
  try {
    auto prev = read_image_rgb(paths[0]);
    auto target = read_image_rgb(paths[1]);
    auto next = read_image_rgb(paths[2]);
    auto k = read_kitti_intrinsics(calib.string(), entry.camera);
    // Calibration describes the rectified image actually stored on disk.
    k.width = static_cast<int>(target.size(2));
    k.height = static_cast<int>(target.size(1));
    FrameTriplet t;
    t.target = resize_image(target, width, height);
    t.refs = {resize_image(prev, width, height), resize_image(next, width, height)};
    t.intrinsics = k.resized(width, height);
    t.source_id = entry.id();
    out.triplet = std::move(t);
  } catch (const IoError& e) {
    out.skip_reason = entry.id() + ": " + e.what();
  }
  return out;
}

KittiSource::KittiSource(std::string root, std::vector<SplitEntry> entries, int width, int height)
    : root_(std::move(root)), entries_(std::move(entries)), width_(width), height_(height) {}

TripletLoad KittiSource::get(std::size_t index) const { return load_triplet(root_, entries_.at(index), width_, height_); }

std::optional<torch::Tensor> KittiSource::ground_truth(std::size_t index) const {
  const auto path = ground_truth_path(root_, entries_.at(index));
  if (!fs::exists(path)) return std::nullopt;
  auto t = tensor_from_raw_array(read_raw_array(path));
  return t.dim() == 3 ? t.squeeze(0) : t;
}

FrameTriplet augment_triplet(const FrameTriplet& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0), gain(0.9, 1.1), bias(-0.05, 0.05);
  FrameTriplet out = t;
  const bool flip = coin(rng) < 0.5;
  const double g = gain(rng), b = bias(rng);
  auto apply = [&](const torch::Tensor& img) {
    auto x = flip ? img.flip({2}) : img;
    return (x * g + b).clamp(0.0, 1.0);
  };
  out.target = apply(t.target);
  out.refs = {apply(t.refs[0]), apply(t.refs[1])};
  if (flip) out.intrinsics.cx = (t.intrinsics.width - 1) - t.intrinsics.cx;
  return out;
}

}  // namespace ccdepth
