#pragma once

// Training loop: depth and pose networks share one Adam optimizer; every step
// synthesizes both neighbours into the target view and minimizes the
// multi-scale self-supervised loss. Checkpoints capture parameters, optimizer
// moments, the data order and the RNG state so that a resumed run continues
// exactly where it stopped.
//
// Output directory layout written by fit():
//
//   train_log.csv                 step, epoch, lr, photometric, smoothness, total, mask_coverage
//   val_log.csv                   epoch, photometric, smoothness, total (when a validation source is given)
//   checkpoints/epoch_XXXX.ckpt   every checkpoint_every epochs
//   checkpoints/latest.ckpt       most recent state, used for resuming

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ccdepth/checkpoint.hpp"
#include "ccdepth/config.hpp"
#include "ccdepth/depth_net.hpp"
#include "ccdepth/kitti_data.hpp"
#include "ccdepth/losses.hpp"

namespace ccdepth {

/// lr_initial before lr_drop_epoch, lr_after_drop from it on (0-based epochs).
/// Throws DomainError outside [0, epochs).
double lr_schedule(int epoch, const TrainConfig& cfg);

struct Batch {
  torch::Tensor target;               // (B, 3, H, W)
  std::array<torch::Tensor, 2> refs;  // previous and next frames
  torch::Tensor intrinsics;           // (B, 3, 3)
  int64_t size() const { return target.size(0); }
};

/// Stacks triplets into a batch of the requested dtype. All triplets must
/// share a resolution.
Batch collate(const std::vector<FrameTriplet>& triplets, torch::ScalarType dtype);

struct TrainState {
  int64_t step = 0;    // completed optimizer updates
  int epoch = 0;       // current 0-based epoch
  int64_t cursor = 0;  // position inside the epoch's sample order
  std::vector<int64_t> order;
  double loss_ema = 0;  // exponential moving average of the total loss
  std::string rng_state;
  int64_t skipped_samples = 0;
};

struct FitResult {
  int64_t steps = 0;
  std::string latest_checkpoint;
  std::string log_path;
  std::vector<LossBundle> history;  // one entry per step run in this call
};

class Trainer {
 public:
  /// Seeds torch with train.seed, then builds fresh networks.
  explicit Trainer(const RunConfig& cfg);

  /// One Adam update on the batch at the learning rate of the current epoch.
  /// Throws NumericError naming the component when the loss is not finite.
  LossBundle train_step(const Batch& batch);
  /// Same loss without gradients or updates.
  LossBundle evaluate_loss(const Batch& batch);

  /// Runs the epoch loop. Resumes from out_dir/checkpoints/latest.ckpt when
  /// train.resume is set and the file exists. Stops after train.max_steps
  /// updates when that is non-negative.
  FitResult fit(const TripletSource& train, const std::string& out_dir, const TripletSource* val = nullptr,
                const std::function<void(const TrainState&, const LossBundle&)>& on_step = {});

  void save(const std::string& path) const;
  /// Restores parameters, optimizer moments and the training state.
  void load(const std::string& path);

  void set_learning_rate(double lr);
  double learning_rate() const;

  DepthNet& depth() { return depth_; }
  PoseNet& pose() { return pose_; }
  const RunConfig& config() const { return cfg_; }
  TrainState& state() { return state_; }
  torch::ScalarType dtype() const { return dtype_; }

 private:
  LossBundle forward_loss(const Batch& batch);
  void new_epoch_order(std::size_t n);
  Batch next_batch(const TripletSource& data);

  RunConfig cfg_;
  torch::ScalarType dtype_;
  DepthNet depth_{nullptr};
  PoseNet pose_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::mt19937_64 rng_;
  TrainState state_;
};

}  // namespace ccdepth
