#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "ccdepth/errors.hpp"
#include "ccdepth/image_io.hpp"
#include "ccdepth/kitti_data.hpp"
#include "ccdepth/raw_array.hpp"

namespace ccdepth {
namespace fs = std::filesystem;
namespace {

struct Vec3 {
  double x, y, z;
};
Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }

// Lattice value noise with quintic interpolation (C2 continuous).
class SolidNoise {
 public:
  explicit SolidNoise(std::uint64_t seed) : seed_(seed) {}

  double operator()(Vec3 p) const {
    const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy), iz = static_cast<std::int64_t>(fz);
    const double tx = fade(p.x - fx), ty = fade(p.y - fy), tz = fade(p.z - fz);
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
          acc += w * lattice(ix + dx, iy + dy, iz + dz);
        }
    return acc;
  }

 private:
  static double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

  double lattice(std::int64_t x, std::int64_t y, std::int64_t z) const {
    std::uint64_t h = seed_ ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull);
    h ^= static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ull;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
  }

  std::uint64_t seed_;
};

struct Material {
  std::array<double, 3> base;
  double feature_size;  // world units per noise cell
  std::uint64_t seed;
  // Ground texture lives in (x / z, 1 / z) so that its cells keep a roughly
  // constant size in the image instead of aliasing towards the horizon.
  double ground_height = 0.0;

  std::array<double, 3> shade(Vec3 p) const {
    std::array<double, 3> c{};
    Vec3 q = (1.0 / feature_size) * p;
    if (ground_height > 0) q = Vec3{p.x / (p.z * feature_size), ground_height / (p.z * feature_size), 0.0};
    for (int ch = 0; ch < 3; ++ch) {
      SolidNoise coarse(seed + 101 * ch), fine(seed + 977 * ch + 13);
      const double n = 0.7 * coarse(q) + 0.3 * fine(2.0 * q + Vec3{17.0, 5.0, 3.0});
      c[ch] = std::clamp(base[ch] + 0.55 * (n - 0.5), 0.0, 1.0);
    }
    return c;
  }
};

struct Box {
  Vec3 lo, hi;
  Material material;
};

struct Scene {
  double backdrop_depth;
  double ground_height;  // y of the ground plane (y points down)
  Material backdrop, ground;
  std::vector<Box> boxes;
};

struct Hit {
  double depth = std::numeric_limits<double>::infinity();
  const Material* material = nullptr;
};

// Rays have unit z component, so the ray parameter equals z-depth.
Hit trace(const Scene& s, Vec3 origin, Vec3 dir) {
  Hit best;
  auto consider = [&](double t, const Material* m) {
    if (t > 1e-6 && t < best.depth) best = {t, m};
  };
  consider(s.backdrop_depth - origin.z, &s.backdrop);
  if (dir.y > 1e-9) consider((s.ground_height - origin.y) / dir.y, &s.ground);
  for (const auto& b : s.boxes) {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    bool miss = false;
    auto slab = [&](double o, double d, double lo, double hi) {
      if (std::abs(d) < 1e-12) {
        if (o < lo || o > hi) miss = true;
        return;
      }
      double a = (lo - o) / d, c = (hi - o) / d;
      if (a > c) std::swap(a, c);
      t0 = std::max(t0, a);
      t1 = std::min(t1, c);
    };
    slab(origin.x, dir.x, b.lo.x, b.hi.x);
    slab(origin.y, dir.y, b.lo.y, b.hi.y);
    slab(origin.z, dir.z, b.lo.z, b.hi.z);
    if (!miss && t0 <= t1 && t0 > 1e-6) consider(t0, &b.material);
  }
  return best;
}

void render(const Scene& s, const CameraIntrinsics& k, Vec3 centre, torch::Tensor& image, torch::Tensor& depth) {
  image = torch::empty({3, k.height, k.width}, torch::kFloat32);
  depth = torch::empty({k.height, k.width}, torch::kFloat32);
  auto img = image.accessor<float, 3>();
  auto dep = depth.accessor<float, 2>();
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 dir{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
      const Hit hit = trace(s, centre, dir);
      const auto c = hit.material->shade(centre + hit.depth * dir);
      for (int ch = 0; ch < 3; ++ch) img[ch][v][u] = static_cast<float>(c[ch]);
      dep[v][u] = static_cast<float>(hit.depth);
    }
  }
}

// Feature sizes keep noise cells at 6 pixels or more at the farthest depth an
// object can take, so bilinear resampling of the frames stays accurate.
Scene random_scene(std::mt19937_64& rng, double focal) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto material = [&](double feature) {
    return Material{{range(0.2, 0.8), range(0.2, 0.8), range(0.2, 0.8)}, feature, rng()};
  };
  Scene s;
  s.backdrop_depth = range(14.0, 22.0);
  s.ground_height = range(1.2, 1.8);
  auto cell = [&](double depth) { return range(8.0, 12.0) * depth / focal; };
  s.backdrop = material(cell(s.backdrop_depth));
  s.ground = material(cell(1.0));
  s.ground.ground_height = s.ground_height;
  const int n_boxes = 1 + static_cast<int>(rng() % 3);
  for (int i = 0; i < n_boxes; ++i) {
    const double w = range(0.8, 2.0), h = range(0.8, 2.2), d = range(0.5, 1.5);
    const double x = range(-3.0, 3.0), z = range(5.0, 11.0);
    s.boxes.push_back({{x - w / 2, s.ground_height - h, z}, {x + w / 2, s.ground_height, z + d}, material(cell(z + d))});
  }
  return s;
}

nlohmann::json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from(const nlohmann::json& j) {
  return {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(), j.at("cy").get<double>(),
          j.at("width").get<int>(), j.at("height").get<int>()};
}

}  // namespace

CameraIntrinsics toy_intrinsics(int width, int height) {
  const double f = 0.6 * width;
  return {f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height};
}

std::vector<ToyScene> make_toy_dataset(const ToyConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> heading(-0.6, 0.6);
  const auto k = toy_intrinsics(cfg.width, cfg.height);
  std::vector<ToyScene> out;
  for (int i = 0; i < cfg.scenes; ++i) {
    const Scene scene = random_scene(rng, k.fx);
    const double phi = heading(rng);
    const Vec3 step{cfg.camera_speed * std::sin(phi), 0.0, cfg.camera_speed * std::cos(phi)};
    const std::array<Vec3, 3> centres{-1.0 * step, Vec3{0, 0, 0}, step};

    ToyScene ts;
    std::array<torch::Tensor, 3> images, depths;
    for (int f = 0; f < 3; ++f) render(scene, k, centres[f], images[f], depths[f]);
    ts.triplet.target = images[1];
    ts.triplet.refs = {images[0], images[2]};
    ts.triplet.intrinsics = k;
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04d", i);
    ts.triplet.source_id = id;
    ts.depth = depths[1];
    ts.ref_depth = {depths[0], depths[2]};
    for (int r = 0; r < 2; ++r) {
      const Vec3 c = centres[r == 0 ? 0 : 2];
      // No rotation; a target-frame point maps to X - c_ref in the reference.
      ts.poses[r] = {0.0, 0.0, 0.0, -c.x, -c.y, -c.z};
    }
    out.push_back(std::move(ts));
  }
  return out;
}

void save_toy_dataset(const std::string& dir, const std::vector<ToyScene>& scenes, const ToyConfig& cfg) {
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["generator"] = {{"scenes", cfg.scenes},
                       {"width", cfg.width},
                       {"height", cfg.height},
                       {"camera_speed", cfg.camera_speed},
                       {"seed", cfg.seed}};
  meta["scenes"] = nlohmann::json::array();
  for (const auto& s : scenes) {
    const auto& id = s.triplet.source_id;
    const std::array<std::string, 3> names{id + "_prev.png", id + "_target.png", id + "_next.png"};
    const std::array<torch::Tensor, 3> frames{s.triplet.refs[0], s.triplet.target, s.triplet.refs[1]};
    for (int f = 0; f < 3; ++f) {
      // 16-bit PNG keeps the rendered values to within 1/65535.
      write_image_rgb((fs::path(dir) / names[f]).string(), frames[f], 16);
    }
    const std::array<std::string, 3> depth_names{id + "_depth_prev.ccdr", id + "_depth.ccdr", id + "_depth_next.ccdr"};
    const std::array<torch::Tensor, 3> depth{s.ref_depth[0], s.depth, s.ref_depth[1]};
    for (int f = 0; f < 3; ++f) write_raw_array((fs::path(dir) / depth_names[f]).string(), raw_array_from_tensor(depth[f]));
    meta["scenes"].push_back({{"id", id},
                              {"frames", names},
                              {"depth", depth_names},
                              {"intrinsics", intrinsics_json(s.triplet.intrinsics)},
                              {"poses", s.poses}});
  }
  std::ofstream out(fs::path(dir) / "metadata.json");
  if (!out) throw IoError("cannot write toy metadata in '" + dir + "'");
  out << meta.dump(2) << "\n";
}

std::vector<ToyScene> load_toy_dataset(const std::string& dir) {
  const auto meta_path = fs::path(dir) / "metadata.json";
  std::ifstream in(meta_path);
  if (!in) throw IoError("no toy dataset at '" + dir + "' (missing metadata.json)");
  const auto meta = nlohmann::json::parse(in);
  std::vector<ToyScene> out;
  for (const auto& e : meta.at("scenes")) {
    ToyScene s;
    const auto frames = e.at("frames").get<std::vector<std::string>>();
    const auto depth = e.at("depth").get<std::vector<std::string>>();
    s.triplet.refs[0] = read_image_rgb((fs::path(dir) / frames.at(0)).string());
    s.triplet.target = read_image_rgb((fs::path(dir) / frames.at(1)).string());
    s.triplet.refs[1] = read_image_rgb((fs::path(dir) / frames.at(2)).string());
    s.triplet.intrinsics = intrinsics_from(e.at("intrinsics"));
    s.triplet.source_id = e.at("id").get<std::string>();
    s.ref_depth[0] = tensor_from_raw_array(read_raw_array((fs::path(dir) / depth.at(0)).string()));
    s.depth = tensor_from_raw_array(read_raw_array((fs::path(dir) / depth.at(1)).string()));
    s.ref_depth[1] = tensor_from_raw_array(read_raw_array((fs::path(dir) / depth.at(2)).string()));
    s.poses = e.at("poses").get<std::array<std::array<double, 6>, 2>>();
    out.push_back(std::move(s));
  }
  return out;
}

ToySource::ToySource(std::vector<ToyScene> scenes) : scenes_(std::move(scenes)) {
  if (scenes_.empty()) throw DomainError("toy dataset is empty");
}

TripletLoad ToySource::get(std::size_t index) const { return {scenes_.at(index).triplet, {}}; }

std::optional<torch::Tensor> ToySource::ground_truth(std::size_t index) const { return scenes_.at(index).depth; }

int ToySource::width() const { return scenes_.front().triplet.intrinsics.width; }
int ToySource::height() const { return scenes_.front().triplet.intrinsics.height; }

}  // namespace ccdepth
