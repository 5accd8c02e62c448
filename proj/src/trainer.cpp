#include "ccdepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ccdepth/errors.hpp"

namespace ccdepth {
namespace fs = std::filesystem;
namespace {

constexpr const char* kTrainHeader = "step,epoch,lr,photometric,smoothness,total,mask_coverage";

std::string format_row(std::initializer_list<double> values) {
  std::string row;
  char buf[32];
  for (double v : values) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    if (!row.empty()) row += ',';
    row += buf;
  }
  return row;
}

// Keeps the header and the rows whose first column is at most last_step.
void truncate_log(const fs::path& path, int64_t last_step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  if (std::getline(in, line)) kept.push_back(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= last_step) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << "\n";
}

void ensure_header(const fs::path& path, const char* header) {
  if (fs::exists(path) && fs::file_size(path) > 0) return;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write log '" + path.string() + "'");
  out << header << "\n";
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ull;
  return h ^ (h >> 29);
}

}  // namespace

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw DomainError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  return epoch < cfg.lr_drop_epoch ? cfg.lr_initial : cfg.lr_after_drop;
}

Batch collate(const std::vector<FrameTriplet>& triplets, torch::ScalarType dtype) {
  if (triplets.empty()) throw ShapeError("collate: empty batch");
  std::vector<torch::Tensor> target, prev, next, k;
  for (const auto& t : triplets) {
    if (t.target.sizes() != triplets.front().target.sizes())
      throw ShapeError("collate: triplet '" + t.source_id + "' has a different resolution");
    target.push_back(t.target);
    prev.push_back(t.refs[0]);
    next.push_back(t.refs[1]);
    k.push_back(t.intrinsics.matrix(torch::kFloat64));
  }
  Batch b;
  b.target = torch::stack(target).to(dtype);
  b.refs = {torch::stack(prev).to(dtype), torch::stack(next).to(dtype)};
  b.intrinsics = torch::stack(k).to(dtype);
  return b;
}

Trainer::Trainer(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  dtype_ = cfg_.train.precision == Precision::kFloat64 ? torch::kFloat64 : torch::kFloat32;
  torch::manual_seed(cfg_.train.seed);
  depth_ = DepthNet(cfg_.network);
  pose_ = PoseNet(cfg_.network);
  depth_->to(dtype_);
  pose_->to(dtype_);
  std::vector<torch::Tensor> params = depth_->parameters();
  for (auto& p : pose_->parameters()) params.push_back(p);
  optimizer_ = std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(cfg_.train.lr_initial).betas({cfg_.train.beta1, cfg_.train.beta2}));
  rng_.seed(cfg_.train.seed);
}

void Trainer::set_learning_rate(double lr) {
  for (auto& group : optimizer_->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

double Trainer::learning_rate() const {
  return static_cast<const torch::optim::AdamOptions&>(optimizer_->param_groups().front().options()).lr();
}

LossBundle Trainer::forward_loss(const Batch& batch) {
  LossInputs in;
  in.target = batch.target;
  in.refs = batch.refs;
  in.intrinsics = batch.intrinsics;
  in.disparities = depth_->forward(batch.target);
  in.poses = estimate_triplet_poses(pose_, batch.target, batch.refs);
  return compute_loss(in, cfg_.loss);
}

LossBundle Trainer::train_step(const Batch& batch) {
  depth_->train();
  pose_->train();
  optimizer_->zero_grad();
  auto bundle = forward_loss(batch);
  bundle.total.backward();
  if (cfg_.train.grad_clip > 0) {
    std::vector<torch::Tensor> params = depth_->parameters();
    for (auto& p : pose_->parameters()) params.push_back(p);
    torch::nn::utils::clip_grad_norm_(params, cfg_.train.grad_clip);
  }
  optimizer_->step();
  bundle.total = bundle.total.detach();
  return bundle;
}

LossBundle Trainer::evaluate_loss(const Batch& batch) {
  torch::NoGradGuard no_grad;
  depth_->eval();
  pose_->eval();
  return forward_loss(batch);
}

void Trainer::new_epoch_order(std::size_t n) {
  state_.order.resize(n);
  std::iota(state_.order.begin(), state_.order.end(), 0);
  std::shuffle(state_.order.begin(), state_.order.end(), rng_);
  state_.cursor = 0;
}

Batch Trainer::next_batch(const TripletSource& data) {
  std::vector<FrameTriplet> triplets;
  const auto batch_size = static_cast<int64_t>(cfg_.train.batch_size);
  while (triplets.empty() && state_.cursor < static_cast<int64_t>(state_.order.size())) {
    const int64_t end = std::min<int64_t>(state_.cursor + batch_size, static_cast<int64_t>(state_.order.size()));
    for (; state_.cursor < end; ++state_.cursor) {
      const auto index = static_cast<std::size_t>(state_.order[static_cast<std::size_t>(state_.cursor)]);
      auto load = data.get(index);
      if (!load.triplet) {
        ++state_.skipped_samples;
        std::fprintf(stderr, "skipping sample: %s\n", load.skip_reason.c_str());
        continue;
      }
      if (cfg_.data.augment)
        triplets.push_back(augment_triplet(*load.triplet, mix(cfg_.train.seed, mix(state_.step, index))));
      else
        triplets.push_back(std::move(*load.triplet));
    }
  }
  if (triplets.empty()) return {};
  return collate(triplets, dtype_);
}

FitResult Trainer::fit(const TripletSource& train, const std::string& out_dir, const TripletSource* val,
                       const std::function<void(const TrainState&, const LossBundle&)>& on_step) {
  if (train.size() == 0) throw DomainError("fit: training dataset is empty");
  const fs::path out(out_dir);
  fs::create_directories(out / "checkpoints");
  const fs::path latest = out / "checkpoints" / "latest.ckpt";
  const fs::path log_path = out / "train_log.csv";
  const fs::path val_path = out / "val_log.csv";

  if (cfg_.train.resume && fs::exists(latest)) {
    load(latest.string());
    truncate_log(log_path, state_.step);
  } else {
    fs::remove(log_path);
    fs::remove(val_path);
    new_epoch_order(train.size());
  }
  ensure_header(log_path, kTrainHeader);
  if (val) ensure_header(val_path, "epoch,photometric,smoothness,total");

  FitResult result;
  result.latest_checkpoint = latest.string();
  result.log_path = log_path.string();
  const int64_t max_steps = cfg_.train.max_steps;
  auto budget_left = [&] { return max_steps < 0 || state_.step < max_steps; };

  std::ofstream log(log_path, std::ios::app);
  while (state_.epoch < cfg_.train.epochs && budget_left()) {
    const double lr = lr_schedule(state_.epoch, cfg_.train);
    set_learning_rate(lr);
    Batch batch = next_batch(train);
    if (batch.target.defined()) {
      auto bundle = train_step(batch);
      ++state_.step;
      state_.loss_ema = state_.step == 1 ? bundle.total_value : 0.9 * state_.loss_ema + 0.1 * bundle.total_value;
      log << format_row({static_cast<double>(state_.step), static_cast<double>(state_.epoch), lr, bundle.photometric,
                         bundle.smoothness, bundle.total_value, bundle.mask_coverage})
          << "\n";
      log.flush();
      if (on_step) on_step(state_, bundle);
      result.history.push_back(std::move(bundle));
    }
    if (state_.cursor >= static_cast<int64_t>(state_.order.size())) {
      if (val && val->size() > 0) {
        double photo = 0, smooth = 0, total = 0;
        int batches = 0;
        for (std::size_t i = 0; i < val->size(); i += static_cast<std::size_t>(cfg_.train.batch_size)) {
          std::vector<FrameTriplet> ts;
          for (std::size_t j = i; j < std::min(val->size(), i + cfg_.train.batch_size); ++j)
            if (auto load = val->get(j); load.triplet) ts.push_back(std::move(*load.triplet));
          if (ts.empty()) continue;
          auto b = evaluate_loss(collate(ts, dtype_));
          photo += b.photometric;
          smooth += b.smoothness;
          total += b.total_value;
          ++batches;
        }
        if (batches > 0) {
          std::ofstream vlog(val_path, std::ios::app);
          vlog << format_row({static_cast<double>(state_.epoch), photo / batches, smooth / batches, total / batches})
               << "\n";
        }
      }
      ++state_.epoch;
      if (state_.epoch < cfg_.train.epochs) new_epoch_order(train.size());
      if (state_.epoch % cfg_.train.checkpoint_every == 0 || state_.epoch == cfg_.train.epochs) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", state_.epoch);
        save((out / "checkpoints" / name).string());
        save(latest.string());
      }
    }
  }
  save(latest.string());
  result.steps = state_.step;
  return result;
}

void Trainer::save(const std::string& path) const {
  Checkpoint ckpt = snapshot_networks(depth_, pose_);
  std::ostringstream rng;
  rng << rng_;
  ckpt.metadata = {{"step", state_.step},
                   {"epoch", state_.epoch},
                   {"cursor", state_.cursor},
                   {"order", state_.order},
                   {"loss_ema", state_.loss_ema},
                   {"skipped_samples", state_.skipped_samples},
                   {"rng_state", rng.str()},
                   {"precision", to_string(cfg_.train.precision)},
                   {"config", to_json(cfg_)}};
  std::ostringstream adam;
  torch::serialize::OutputArchive archive;
  optimizer_->save(archive);
  archive.save_to(adam);
  ckpt.blobs["optimizer"] = adam.str();
  save_checkpoint(path, ckpt);
}

void Trainer::load(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  load_networks(ckpt, depth_, pose_);
  const auto& m = ckpt.metadata;
  try {
    state_.step = m.at("step").get<int64_t>();
    state_.epoch = m.at("epoch").get<int>();
    state_.cursor = m.at("cursor").get<int64_t>();
    state_.order = m.at("order").get<std::vector<int64_t>>();
    state_.loss_ema = m.at("loss_ema").get<double>();
    state_.skipped_samples = m.value("skipped_samples", int64_t{0});
    state_.rng_state = m.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "' lacks training state: " + e.what());
  }
  std::istringstream rng(state_.rng_state);
  rng >> rng_;
  auto it = ckpt.blobs.find("optimizer");
  if (it == ckpt.blobs.end()) throw CheckpointError("checkpoint '" + path + "' has no optimizer state");
  std::istringstream adam(it->second);
  torch::serialize::InputArchive archive;
  archive.load_from(adam);
  optimizer_->load(archive);
}

}  // namespace ccdepth
