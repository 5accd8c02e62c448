#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "ccdepth/errors.hpp"
#include "ccdepth/trainer.hpp"
#include "test_util.hpp"

using namespace ccdepth;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(Precision precision = Precision::kFloat64) {
  RunConfig c = toy_run_config();
  c.network.cnn_channels = {8, 16, 32};
  c.network.crate_dims = {48, 96};
  c.network.pose_channels = {8, 8, 16, 16, 16, 16, 16};
  c.network.width = 64;
  c.network.height = 32;
  c.data.toy.width = 64;
  c.data.toy.height = 32;
  c.data.toy.scenes = 4;
  c.train.batch_size = 2;
  c.train.epochs = 10;
  c.train.lr_drop_epoch = 8;
  c.train.checkpoint_every = 1;
  c.train.precision = precision;
  return c;
}

Batch toy_batch(const RunConfig& c, torch::ScalarType dtype) {
  auto scenes = make_toy_dataset(c.data.toy);
  std::vector<FrameTriplet> ts{scenes[0].triplet, scenes[1].triplet};
  return collate(ts, dtype);
}

std::vector<torch::Tensor> snapshot(Trainer& t) {
  std::vector<torch::Tensor> out;
  for (auto& p : t.depth()->parameters()) out.push_back(p.detach().clone());
  for (auto& p : t.pose()->parameters()) out.push_back(p.detach().clone());
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule drops after fifteen epochs") {
  TrainConfig cfg;
  CHECK(lr_schedule(0, cfg) == 1e-4);
  CHECK(lr_schedule(14, cfg) == 1e-4);
  CHECK(lr_schedule(15, cfg) == 1e-5);
  CHECK(lr_schedule(19, cfg) == 1e-5);
  CHECK_THROWS_AS(lr_schedule(-1, cfg), DomainError);
  CHECK_THROWS_AS(lr_schedule(20, cfg), DomainError);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
}

TEST_CASE("collate stacks triplets and intrinsics") {
  auto c = small_config();
  auto b = toy_batch(c, torch::kFloat64);
  CHECK(b.size() == 2);
  CHECK(b.target.sizes() == torch::IntArrayRef{2, 3, 32, 64});
  CHECK((b.refs[1].scalar_type() == torch::kFloat64));
  CHECK(b.intrinsics.sizes() == torch::IntArrayRef{2, 3, 3});
}

TEST_CASE("zero learning rate leaves every parameter bitwise unchanged") {
  auto c = small_config(Precision::kFloat32);
  Trainer t(c);
  t.set_learning_rate(0.0);
  auto before = snapshot(t);
  t.train_step(toy_batch(c, t.dtype()));
  auto after = snapshot(t);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(torch::equal(before[i], after[i]));
}

TEST_CASE("a fixed batch and seed give the same step in two fresh runs") {
  auto c = small_config(Precision::kFloat32);
  auto batch = toy_batch(c, torch::kFloat32);
  Trainer a(c), b(c);
  auto la = a.train_step(batch), lb = b.train_step(batch);
  CHECK(la.total_value == lb.total_value);
  auto pa = snapshot(a), pb = snapshot(b);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(torch::equal(pa[i], pb[i]));
}

TEST_CASE("one small step decreases the loss of the same batch") {
  auto c = small_config();
  Trainer t(c);
  auto batch = toy_batch(c, t.dtype());
  t.set_learning_rate(1e-6);
  const double before = t.evaluate_loss(batch).total_value;
  t.train_step(batch);
  const double after = t.evaluate_loss(batch).total_value;
  CHECK(after < before);
}

TEST_CASE("non-finite input aborts the step naming the component") {
  auto c = small_config(Precision::kFloat32);
  Trainer t(c);
  auto batch = toy_batch(c, t.dtype());
  batch.target[0][0][3][3] = std::numeric_limits<float>::quiet_NaN();
  try {
    t.train_step(batch);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("loss") != std::string::npos);
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
  }
}

TEST_CASE("save and load reproduce the next step exactly") {
  auto c = small_config();
  testutil::TempDir dir;
  auto batch = toy_batch(c, torch::kFloat64);
  Trainer a(c);
  a.train_step(batch);
  a.train_step(batch);
  a.save(dir / "state.ckpt");

  auto reference = a.train_step(batch).total_value;
  c.train.seed = 99;  // fresh weights; everything must come from the file
  Trainer b(c);
  b.load(dir / "state.ckpt");
  CHECK(b.train_step(batch).total_value == reference);
}

TEST_CASE("max_steps 0 writes an initial checkpoint and stops") {
  auto c = small_config(Precision::kFloat32);
  c.train.max_steps = 0;
  testutil::TempDir dir;
  ToySource source(make_toy_dataset(c.data.toy));
  Trainer t(c);
  auto r = t.fit(source, dir.str());
  CHECK(r.steps == 0);
  CHECK(fs::exists(r.latest_checkpoint));
  auto lines = read_lines(r.log_path);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0] == "step,epoch,lr,photometric,smoothness,total,mask_coverage");
}

TEST_CASE("fit logs every step, checkpoints per epoch and validates") {
  auto c = small_config(Precision::kFloat32);
  c.train.max_steps = 4;
  testutil::TempDir dir;
  ToySource source(make_toy_dataset(c.data.toy));
  Trainer t(c);
  auto r = t.fit(source, dir.str(), &source);
  CHECK(r.steps == 4);
  CHECK(r.history.size() == 4);
  auto lines = read_lines(r.log_path);
  CHECK(lines.size() == 5);
  CHECK(fs::exists(dir.path() / "checkpoints" / "epoch_0001.ckpt"));
  CHECK(fs::exists(dir.path() / "checkpoints" / "epoch_0002.ckpt"));
  CHECK(read_lines(dir / "val_log.csv").size() == 3);
  for (const auto& b : r.history) {
    CHECK(std::isfinite(b.total_value));
    CHECK(b.mask_coverage >= 0.0);
    CHECK(b.mask_coverage <= 1.0);
  }
}

TEST_CASE("an interrupted fit resumes onto the uninterrupted trajectory") {
  auto c = small_config();
  ToySource source(make_toy_dataset(c.data.toy));

  testutil::TempDir straight;
  c.train.max_steps = 5;
  Trainer full(c);
  auto reference = full.fit(source, straight.str());

  testutil::TempDir split;
  c.train.max_steps = 3;
  {
    Trainer first(c);
    first.fit(source, split.str());
  }
  c.train.max_steps = 5;
  Trainer second(c);
  auto resumed = second.fit(source, split.str());
  REQUIRE(resumed.history.size() == 2);
  for (int i = 0; i < 2; ++i) {
    const double want = reference.history[3 + i].total_value;
    CHECK(resumed.history[i].total_value == doctest::Approx(want).epsilon(1e-6));
  }
  CHECK(read_lines(resumed.log_path).size() == 6);
}

struct EmptySource : TripletSource {
  std::size_t size() const override { return 0; }
  TripletLoad get(std::size_t) const override { return {}; }
  std::optional<torch::Tensor> ground_truth(std::size_t) const override { return std::nullopt; }
  int width() const override { return 64; }
  int height() const override { return 32; }
};

TEST_CASE("empty training data is rejected") {
  auto c = small_config(Precision::kFloat32);
  EmptySource empty_source;
  testutil::TempDir dir;
  Trainer t(c);
  CHECK_THROWS_AS(t.fit(empty_source, dir.str()), DomainError);
}
