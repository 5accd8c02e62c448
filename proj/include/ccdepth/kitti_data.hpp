#pragma once

// Dataset ingestion: KITTI raw monocular triplets listed by split files, and a
// synthetic scene generator with exact depth and poses for desk-scale runs.
//
// KITTI layout under the dataset root (raw-data convention):
//
//   <root>/<date>/calib_cam_to_cam.txt
//   <root>/<date>/<drive>_sync/image_02/data/<frame:010>.png|jpg   (left colour)
//   <root>/<date>/<drive>_sync/image_03/data/<frame:010>.png|jpg   (right colour)
//   <root>/<date>/<drive>_sync/gt_depth/image_02/<frame:010>.ccdr  (evaluation depth)
//
// Split lists live in <splits_dir>/<split>/{train,val,test}_files.txt; when the
// split has no test list, <splits_dir>/eigen/test_files.txt is used. Each line
// is either "<date>/<drive>_sync <frame> <l|r>" or a relative image path
// "<date>/<drive>_sync/image_02/data/<frame:010>.png".

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ccdepth/config.hpp"
#include "ccdepth/losses.hpp"

namespace ccdepth {

struct FrameTriplet {
  torch::Tensor target;              // (3, H, W) in [0, 1]
  std::array<torch::Tensor, 2> refs; // I_{t-1}, I_{t+1}
  CameraIntrinsics intrinsics;       // at the tensors' resolution
  std::string source_id;
};

struct SplitEntry {
  std::string folder;  // "<date>/<drive>_sync"
  int frame = 0;
  int camera = 2;      // 2 = left colour, 3 = right colour
  bool has_ground_truth = false;

  std::string id() const;
};

struct SplitManifest {
  std::vector<SplitEntry> train, val, test;
  std::vector<std::string> missing;  // unavailable entries and list files
  std::array<std::size_t, 3> counts() const { return {train.size(), val.size(), test.size()}; }
};

/// Parses one split-list line; std::nullopt for blank or malformed lines.
std::optional<SplitEntry> parse_split_line(const std::string& line);

/// Paths of the frame image (png preferred, then jpg) and ground truth.
std::string frame_image_path(const std::string& root, const SplitEntry& e, int frame_offset = 0);
std::string ground_truth_path(const std::string& root, const SplitEntry& e);

/// Reads the split lists and keeps the entries whose files exist: train and
/// val need the frame and both temporal neighbours, test needs the frame.
/// Throws IoError (listing the expected layout) when the root is missing.
SplitManifest load_split(const std::string& dataset_root, const std::string& split_name,
                         const std::string& splits_dir = "");

/// Reads P_rect_0X and S_rect_0X from a KITTI calib_cam_to_cam.txt.
CameraIntrinsics read_kitti_intrinsics(const std::string& calib_path, int camera);

struct TripletLoad {
  std::optional<FrameTriplet> triplet;
  std::string skip_reason;
};

/// Decodes the three frames, resizes to width x height and rescales the
/// intrinsics. A missing neighbour yields a skip reason instead of throwing.
TripletLoad load_triplet(const std::string& dataset_root, const SplitEntry& entry, int width, int height);

/// Random-access source of training triplets.
class TripletSource {
 public:
  virtual ~TripletSource() = default;
  virtual std::size_t size() const = 0;
  virtual TripletLoad get(std::size_t index) const = 0;
  /// Ground-truth depth (H, W) of the target frame, when available.
  virtual std::optional<torch::Tensor> ground_truth(std::size_t index) const = 0;
  virtual int width() const = 0;
  virtual int height() const = 0;
};

class KittiSource : public TripletSource {
 public:
  KittiSource(std::string root, std::vector<SplitEntry> entries, int width, int height);
  std::size_t size() const override { return entries_.size(); }
  TripletLoad get(std::size_t index) const override;
  std::optional<torch::Tensor> ground_truth(std::size_t index) const override;
  int width() const override { return width_; }
  int height() const override { return height_; }

 private:
  std::string root_;
  std::vector<SplitEntry> entries_;
  int width_, height_;
};

// ---------------------------------------------------------------------------
// Synthetic scenes.

struct ToyScene {
  FrameTriplet triplet;
  torch::Tensor depth;                    // (H, W) z-depth of the target frame
  std::array<torch::Tensor, 2> ref_depth; // z-depth of each reference frame
  std::array<std::array<double, 6>, 2> poses;  // target -> ref: axis-angle, translation
};

/// Renders textured fronto-parallel backdrops, a ground plane and boxes seen by
/// a pinhole camera translating between the three frames.
std::vector<ToyScene> make_toy_dataset(const ToyConfig& cfg);

/// Default pinhole intrinsics of the synthetic camera.
CameraIntrinsics toy_intrinsics(int width, int height);

/// Writes 16-bit PNG frames, raw depth arrays and metadata.json.
void save_toy_dataset(const std::string& dir, const std::vector<ToyScene>& scenes, const ToyConfig& cfg);
std::vector<ToyScene> load_toy_dataset(const std::string& dir);

class ToySource : public TripletSource {
 public:
  explicit ToySource(std::vector<ToyScene> scenes);
  std::size_t size() const override { return scenes_.size(); }
  TripletLoad get(std::size_t index) const override;
  std::optional<torch::Tensor> ground_truth(std::size_t index) const override;
  int width() const override;
  int height() const override;
  const std::vector<ToyScene>& scenes() const { return scenes_; }

 private:
  std::vector<ToyScene> scenes_;
};

/// Horizontal flip and mild colour jitter applied identically to all frames.
FrameTriplet augment_triplet(const FrameTriplet& t, std::uint64_t seed);

}  // namespace ccdepth
