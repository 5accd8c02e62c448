#include "ccdepth/cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccdepth/analysis.hpp"
#include "ccdepth/checkpoint.hpp"
#include "ccdepth/config.hpp"
#include "ccdepth/errors.hpp"
#include "ccdepth/evaluator.hpp"
#include "ccdepth/image_io.hpp"
#include "ccdepth/kitti_data.hpp"
#include "ccdepth/raw_array.hpp"
#include "ccdepth/trainer.hpp"

namespace ccdepth::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flag values collected before the config is resolved; set flags are merged
// over the config file as a JSON patch, so type errors name the config field.
struct Overrides {
  json patch = json::object();

  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& field, T default_value, const std::string& help) {
    auto holder = std::make_shared<std::optional<T>>();
    holders_.push_back([this, holder, field] {
      if (*holder) patch[json::json_pointer(field)] = **holder;
    });
    std::ostringstream def;
    def << default_value;
    app->add_option(flag, *holder, help)->default_str(def.str());
  }
  void flag(CLI::App* app, const std::string& name, const std::string& field, bool value, const std::string& help) {
    auto holder = std::make_shared<bool>(false);
    holders_.push_back([this, holder, field, value] {
      if (*holder) patch[json::json_pointer(field)] = value;
    });
    app->add_flag(name, *holder, help);
  }
  void collect() {
    for (auto& h : holders_) h();
  }

 private:
  std::vector<std::function<void()>> holders_;
};

RunConfig base_config(const std::string& name) {
  if (name == "default") return RunConfig{};
  if (name == "toy") return toy_run_config();
  return load_run_config(name);
}

RunConfig resolve_config(const std::string& name, Overrides& o) {
  o.collect();
  auto base = to_json(base_config(name));
  base.merge_patch(o.patch);
  auto cfg = run_config_from_json(base);
  cfg.validate();
  return cfg;
}

void snapshot(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  save_run_config(cfg, (fs::path(out_dir) / "effective_config.json").string());
}

void add_network_flags(CLI::App* app, Overrides& o) {
  const NetworkConfig d;
  o.add(app, "--width", "/network/width", d.width, "input width (multiple of 32)");
  o.add(app, "--height", "/network/height", d.height, "input height (multiple of 32)");
  o.add(app, "--num-scales", "/network/num_scales", d.num_scales, "disparity heads used by the loss (1..4)");
  o.add(app, "--padding", "/network/padding", std::string("reflect"), "convolution padding: reflect|zeros");
}

void add_data_flags(CLI::App* app, Overrides& o) {
  const DataConfig d;
  o.add(app, "--dataset", "/data/dataset", d.dataset, "toy|kitti");
  o.add(app, "--data-root", "/data/root", std::string("(empty)"),
        "KITTI raw root, or a toy dataset directory (toy data is generated when empty)");
  o.add(app, "--split", "/data/split", d.split, "split name under the splits directory");
  o.add(app, "--splits-dir", "/data/splits_dir", std::string("<data-root>/splits"), "directory holding split lists");
}

struct Sources {
  std::unique_ptr<TripletSource> train, val, test;
};

Sources make_sources(const RunConfig& cfg, std::ostream& err) {
  Sources s;
  const auto& d = cfg.data;
  const int w = cfg.network.width, h = cfg.network.height;
  if (d.dataset == "toy") {
    std::vector<ToyScene> train;
    if (!d.root.empty())
      train = load_toy_dataset(d.root);
    else
      train = make_toy_dataset(d.toy);
    if (!train.empty() && (train.front().triplet.intrinsics.width != w || train.front().triplet.intrinsics.height != h))
      throw ConfigError("network.width/height: toy data is " + std::to_string(train.front().triplet.intrinsics.width) +
                        "x" + std::to_string(train.front().triplet.intrinsics.height) + " but the network expects " +
                        std::to_string(w) + "x" + std::to_string(h));
    ToyConfig held_out = d.toy;
    held_out.seed = d.toy.seed + 1000003;
    held_out.width = w;
    held_out.height = h;
    s.train = std::make_unique<ToySource>(std::move(train));
    s.test = std::make_unique<ToySource>(make_toy_dataset(held_out));
    return s;
  }
  auto m = load_split(d.root, d.split, d.splits_dir);
  if (!m.missing.empty()) err << m.missing.size() << " split entries unavailable (first: " << m.missing.front() << ")\n";
  s.train = std::make_unique<KittiSource>(d.root, m.train, w, h);
  s.val = std::make_unique<KittiSource>(d.root, m.val, w, h);
  s.test = std::make_unique<KittiSource>(d.root, m.test, w, h);
  return s;
}

DepthNet load_depth(const std::string& checkpoint) {
  auto ckpt = read_checkpoint(checkpoint);
  return networks_from_checkpoint(ckpt).first;
}

RunConfig config_for_checkpoint(const std::string& checkpoint, const std::string& config_name, Overrides& o) {
  auto cfg = resolve_config(config_name, o);
  cfg.network = read_checkpoint(checkpoint).network;
  return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ccdepth: hybrid CNN and rate-reduction transformer for self-supervised monocular depth"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::function<void()> action;

  // train ------------------------------------------------------------------
  Overrides train_o;
  std::string train_config = "default", train_out = "runs/train";
  {
    auto* c = app.add_subcommand("train", "train depth and pose networks");
    c->add_option("--config", train_config, "config file, or the presets default|toy");
    c->add_option("--out", train_out, "output directory (logs, checkpoints, config snapshot)");
    add_network_flags(c, train_o);
    add_data_flags(c, train_o);
    const TrainConfig t;
    train_o.add(c, "--epochs", "/train/epochs", t.epochs, "number of epochs");
    train_o.add(c, "--batch-size", "/train/batch_size", t.batch_size, "triplets per step");
    train_o.add(c, "--lr", "/train/lr_initial", t.lr_initial, "initial learning rate");
    train_o.add(c, "--lr-after-drop", "/train/lr_after_drop", t.lr_after_drop, "learning rate after the drop");
    train_o.add(c, "--lr-drop-epoch", "/train/lr_drop_epoch", t.lr_drop_epoch, "0-based epoch of the drop");
    train_o.add(c, "--seed", "/train/seed", t.seed, "seed for initialization and data order");
    train_o.add(c, "--max-steps", "/train/max_steps", t.max_steps, "stop after this many updates (negative: no limit)");
    train_o.add(c, "--precision", "/train/precision", std::string("float32"), "float32|float64");
    train_o.add(c, "--grad-clip", "/train/grad_clip", t.grad_clip, "gradient norm clip (0 disables)");
    train_o.add(c, "--checkpoint-every", "/train/checkpoint_every", t.checkpoint_every, "epochs between checkpoints");
    train_o.flag(c, "--no-resume", "/train/resume", false, "ignore an existing latest checkpoint");
    train_o.flag(c, "--augment", "/data/augment", true, "horizontal flip and colour jitter");
    train_o.add(c, "--toy-scenes", "/data/toy/scenes", ToyConfig{}.scenes, "scenes when generating toy data");
    c->callback([&] {
      action = [&] {
        auto cfg = resolve_config(train_config, train_o);
        snapshot(cfg, train_out);
        auto src = make_sources(cfg, err);
        Trainer trainer(cfg);
        const TripletSource* val = src.val && src.val->size() > 0 ? src.val.get() : nullptr;
        auto result = trainer.fit(*src.train, train_out, val, [&](const TrainState& s, const LossBundle& b) {
          if (s.step % 10 == 0) out << "step " << s.step << " epoch " << s.epoch << " loss " << b.total_value << "\n";
        });
        out << "steps " << result.steps << "\ncheckpoint " << result.latest_checkpoint << "\nlog " << result.log_path
            << "\n";
      };
    });
  }

  // eval -------------------------------------------------------------------
  Overrides eval_o;
  std::string eval_config = "default", eval_out = "runs/eval", eval_ckpt, eval_part = "test";
  {
    auto* c = app.add_subcommand("eval", "score a checkpoint against ground-truth depth");
    c->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    c->add_option("--config", eval_config, "config file, or the presets default|toy (network comes from the checkpoint)");
    c->add_option("--out", eval_out, "output directory for metrics.json, metrics.csv, per_image.csv");
    c->add_option("--part", eval_part, "which split list to score: train|val|test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    add_data_flags(c, eval_o);
    const EvalConfig e;
    eval_o.add(c, "--max-depth", "/eval/max_depth", e.max_depth, "depth cap");
    eval_o.add(c, "--min-depth", "/eval/min_depth", e.min_depth, "minimum valid ground truth");
    eval_o.add(c, "--crop", "/eval/crop", e.crop, "eigen|none");
    eval_o.flag(c, "--no-median-scaling", "/eval/median_scaling", false, "score raw predictions");
    c->callback([&] {
      action = [&] {
        auto cfg = config_for_checkpoint(eval_ckpt, eval_config, eval_o);
        snapshot(cfg, eval_out);
        auto src = make_sources(cfg, err);
        const TripletSource* source = eval_part == "train" ? src.train.get() : eval_part == "val" ? src.val.get() : src.test.get();
        if (!source) throw ConfigError("data.dataset: split part '" + eval_part + "' is not available");
        auto net = load_depth(eval_ckpt);
        auto result = evaluate_split(net, *source, cfg.eval, cfg.loss);
        write_report(eval_out, result, cfg.eval);
        out << report_json(result, cfg.eval).at("metrics").dump() << "\n";
        out << "images " << result.aggregate.n_images << " skipped " << result.skipped.size() << "\n";
      };
    });
  }

  // infer ------------------------------------------------------------------
  std::string infer_ckpt, infer_image, infer_out = "runs/infer";
  {
    auto* c = app.add_subcommand("infer", "predict disparity and depth for one image");
    c->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
    c->add_option("--image", infer_image, "input image")->required();
    c->add_option("--out", infer_out, "output directory");
    c->callback([&] {
      action = [&] {
        auto ckpt = read_checkpoint(infer_ckpt);
        RunConfig cfg;
        cfg.network = ckpt.network;
        if (ckpt.metadata.contains("config")) cfg = run_config_from_json(ckpt.metadata.at("config"));
        snapshot(cfg, infer_out);
        auto net = networks_from_checkpoint(ckpt).first;
        net->eval();
        torch::NoGradGuard no_grad;
        auto image = resize_image(read_image_rgb(infer_image), cfg.network.width, cfg.network.height);
        const auto dtype = net->parameters().front().scalar_type();
        auto disp = net->forward(image.unsqueeze(0).to(dtype)).front()[0][0];
        auto depth = disp_to_depth_unchecked(disp, {cfg.loss.min_depth, cfg.loss.max_depth});
        const fs::path dir(infer_out);
        write_raw_array((dir / "disparity.ccdr").string(), raw_array_from_tensor(disp));
        write_raw_array((dir / "depth.ccdr").string(), raw_array_from_tensor(depth));
        write_image_gray((dir / "disparity.png").string(), disp, 16);
        const double lo = disp.min().item<double>(), hi = disp.max().item<double>();
        write_image_gray((dir / "disparity_vis.png").string(), hi > lo ? (disp - lo) / (hi - lo) : disp * 0, 8);
        out << "disparity " << (dir / "disparity.ccdr").string() << "\ndepth " << (dir / "depth.ccdr").string() << "\n";
      };
    });
  }

  // toy-make ---------------------------------------------------------------
  ToyConfig toy;
  std::string toy_out = "data/toy";
  {
    auto* c = app.add_subcommand("toy-make", "render a synthetic dataset with exact depth and poses");
    c->add_option("--scenes", toy.scenes, "number of scenes (one triplet each)");
    c->add_option("--width", toy.width, "image width");
    c->add_option("--height", toy.height, "image height");
    c->add_option("--speed", toy.camera_speed, "camera displacement between frames");
    c->add_option("--seed", toy.seed, "scene seed");
    c->add_option("--out", toy_out, "output directory");
    c->callback([&] {
      action = [&] {
        RunConfig cfg = toy_run_config();
        cfg.data.toy = toy;
        cfg.network.width = toy.width;
        cfg.network.height = toy.height;
        toy.validate();
        auto scenes = make_toy_dataset(toy);
        save_toy_dataset(toy_out, scenes, toy);
        snapshot(cfg, toy_out);
        out << "scenes " << scenes.size() << " written to " << toy_out << "\n";
      };
    });
  }

  // sparsity ---------------------------------------------------------------
  Overrides sp_o;
  std::string sp_config = "default", sp_ckpt, sp_out = "runs/sparsity";
  {
    auto* c = app.add_subcommand("sparsity", "non-zero percentages after every ISTA step, train vs test");
    c->add_option("--checkpoint", sp_ckpt, "checkpoint file")->required();
    c->add_option("--config", sp_config, "config file, or the presets default|toy");
    c->add_option("--out", sp_out, "output directory for sparsity.csv");
    add_data_flags(c, sp_o);
    const AnalysisConfig a;
    sp_o.add(c, "--samples", "/analysis/samples_per_split", a.samples_per_split, "images per split");
    sp_o.add(c, "--tolerance", "/analysis/zero_tolerance", a.zero_tolerance, "magnitudes at or below count as zero");
    c->callback([&] {
      action = [&] {
        auto cfg = config_for_checkpoint(sp_ckpt, sp_config, sp_o);
        snapshot(cfg, sp_out);
        auto src = make_sources(cfg, err);
        auto net = load_depth(sp_ckpt);
        const auto n = static_cast<std::size_t>(cfg.analysis.samples_per_split);
        auto records = count_nonzero(net, *src.train, "train", n, cfg.analysis.zero_tolerance);
        auto test = count_nonzero(net, *src.test, "test", n, cfg.analysis.zero_tolerance);
        records.insert(records.end(), test.begin(), test.end());
        write_sparsity_csv((fs::path(sp_out) / "sparsity.csv").string(), records);
        for (const auto& r : records)
          out << "layer " << r.layer_id << " module " << r.module_index << " " << r.split << " " << r.percentage
              << "%\n";
      };
    });
  }

  // features ---------------------------------------------------------------
  std::string ft_ckpt, ft_image, ft_out = "runs/features";
  std::vector<int> ft_layers{3, 8, 5, 6};
  int ft_channels = AnalysisConfig{}.max_feature_channels;
  {
    auto* c = app.add_subcommand("features", "export per-layer feature-map grids");
    c->add_option("--checkpoint", ft_ckpt, "checkpoint file")->required();
    c->add_option("--image", ft_image, "input image")->required();
    c->add_option("--layers", ft_layers, "layer ids 1..10")->delimiter(',');
    c->add_option("--max-channels", ft_channels, "channels exported per layer");
    c->add_option("--out", ft_out, "output directory");
    c->callback([&] {
      action = [&] {
        auto ckpt = read_checkpoint(ft_ckpt);
        RunConfig cfg;
        cfg.network = ckpt.network;
        cfg.analysis.max_feature_channels = ft_channels;
        cfg.analysis.validate();
        snapshot(cfg, ft_out);
        auto net = networks_from_checkpoint(ckpt).first;
        auto image = resize_image(read_image_rgb(ft_image), cfg.network.width, cfg.network.height);
        for (const auto& e : export_feature_maps(net, image, ft_layers, ft_out, ft_channels))
          out << "layer " << e.layer_id << " " << e.image_path << "\n";
      };
    });
  }

  // timing -----------------------------------------------------------------
  Overrides tm_o;
  std::string tm_config = "default", tm_ckpt, tm_out = "runs/timing";
  int tm_runs = 50;
  {
    auto* c = app.add_subcommand("timing", "single-image inference latency");
    c->add_option("--checkpoint", tm_ckpt, "checkpoint file (randomly initialized network when omitted)");
    c->add_option("--config", tm_config, "config file, or the presets default|toy");
    c->add_option("--runs", tm_runs, "timed runs (at least 10)");
    c->add_option("--out", tm_out, "output directory for timing.json");
    add_network_flags(c, tm_o);
    tm_o.add(c, "--warmup", "/analysis/warmup_runs", AnalysisConfig{}.warmup_runs, "untimed warm-up runs");
    c->callback([&] {
      action = [&] {
        auto cfg = resolve_config(tm_config, tm_o);
        if (!tm_ckpt.empty()) cfg.network = read_checkpoint(tm_ckpt).network;
        snapshot(cfg, tm_out);
        DepthNet net = tm_ckpt.empty() ? DepthNet(cfg.network) : load_depth(tm_ckpt);
        auto report = time_inference(net, tm_runs, cfg.analysis.warmup_runs);
        std::ofstream((fs::path(tm_out) / "timing.json").string()) << report.to_json().dump(2) << "\n";
        out << "mean_ms " << report.mean << " std_ms " << report.stddev << " p50_ms " << report.p50 << "\n";
      };
    });
  }

  // params -----------------------------------------------------------------
  Overrides pm_o;
  std::string pm_config = "default", pm_out = "runs/params";
  {
    auto* c = app.add_subcommand("params", "count learnable parameters");
    c->add_option("--config", pm_config, "config file, or the presets default|toy");
    c->add_option("--out", pm_out, "output directory for params.json");
    add_network_flags(c, pm_o);
    c->callback([&] {
      action = [&] {
        auto cfg = resolve_config(pm_config, pm_o);
        snapshot(cfg, pm_out);
        const auto count = count_parameters(cfg.network);
        json j{{"total", count.total()},
               {"depth_net", count.depth_net},
               {"pose_net", count.pose_net},
               {"depth_net_budget", cfg.network.param_budget}};
        std::ofstream((fs::path(pm_out) / "params.json").string()) << j.dump(2) << "\n";
        out << "total " << count.total() << "\ndepth_net " << count.depth_net << "\npose_net " << count.pose_net << "\n";
      };
    });
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }
  try {
    action();
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DomainError& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace ccdepth::cli
