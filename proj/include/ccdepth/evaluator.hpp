#pragma once

// Depth evaluation with the seven standard error and accuracy columns,
// median scaling, depth capping and the Eigen crop.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ccdepth/config.hpp"
#include "ccdepth/depth_net.hpp"
#include "ccdepth/kitti_data.hpp"

namespace ccdepth {

struct MetricsReport {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  int64_t n_images = 0;
  std::string scaling_mode = "median";  // median | none

  /// Column names in report order.
  static const std::vector<std::string>& columns();
  std::array<double, 7> values() const;
};

/// Metrics over paired depths (both already masked to valid pixels).
/// Throws DomainError("no valid pixels") on empty input and when a value is
/// not strictly positive.
MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> gt);

/// Scale factor median(gt) / median(pred); the median of an even count is
/// the mean of the two middle values. Throws DomainError for empty input or
/// a zero prediction median.
double median_scale_factor(std::span<const double> pred, std::span<const double> gt);
std::vector<double> median_scale(std::span<const double> pred, std::span<const double> gt);

/// Fractional crop rectangle [top, bottom) x [left, right) of the Eigen
/// evaluation protocol.
struct CropBox {
  int top, bottom, left, right;
};
CropBox eigen_crop(int height, int width);

/// One image: prediction (h, w) is resized bilinearly to the ground-truth
/// resolution, pixels with gt outside (min_depth, max_depth) and outside the
/// crop are dropped, optional median scaling, then predictions are clamped to
/// [min_depth, max_depth].
MetricsReport evaluate_depth(const torch::Tensor& pred_depth, const torch::Tensor& gt_depth, const EvalConfig& cfg);

/// Unweighted mean over images.
MetricsReport aggregate(const std::vector<MetricsReport>& per_image);

struct SplitEvaluation {
  MetricsReport aggregate;
  std::vector<std::pair<std::string, MetricsReport>> per_image;
  std::vector<std::string> skipped;
};

/// Predicts every target frame of the source with the depth network and
/// scores it against the ground truth; images without ground truth are
/// skipped and listed.
SplitEvaluation evaluate_split(DepthNet& net, const TripletSource& source, const EvalConfig& eval_cfg,
                               const LossConfig& loss_cfg);

nlohmann::json report_json(const SplitEvaluation& e, const EvalConfig& cfg);
void write_report(const std::string& out_dir, const SplitEvaluation& e, const EvalConfig& cfg);

}  // namespace ccdepth
