#include "ccdepth/raw_array.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "ccdepth/errors.hpp"

namespace ccdepth {
namespace {

static_assert(std::endian::native == std::endian::little, "raw array I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'C', 'D', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated raw array '" + path + "'");
  return v;
}

}  // namespace

int64_t RawArray::numel() const {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
}

void write_raw_array(const std::string& path, const RawArray& array) {
  if (array.numel() != static_cast<int64_t>(array.values.size()))
    throw ShapeError("raw array: shape does not match value count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write raw array '" + path + "'");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(array.shape.size()));
  for (auto d : array.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  out.write(reinterpret_cast<const char*>(array.values.data()),
            static_cast<std::streamsize>(array.values.size() * sizeof(float)));
  if (!out) throw IoError("failed writing raw array '" + path + "'");
}

RawArray read_raw_array(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open raw array '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("'" + path + "' is not a raw array file");
  const auto version = take<std::uint32_t>(in, path);
  if (version != kVersion) throw IoError("'" + path + "': unsupported raw array version " + std::to_string(version));
  const auto ndim = take<std::uint32_t>(in, path);
  RawArray a;
  for (std::uint32_t i = 0; i < ndim; ++i) a.shape.push_back(static_cast<int64_t>(take<std::uint64_t>(in, path)));
  a.values.resize(static_cast<std::size_t>(a.numel()));
  if (!in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(float))))
    throw IoError("truncated raw array '" + path + "'");
  return a;
}

RawArray raw_array_from_tensor(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  RawArray a;
  a.shape.assign(c.sizes().begin(), c.sizes().end());
  a.values.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  return a;
}

torch::Tensor tensor_from_raw_array(const RawArray& a) {
  return torch::from_blob(const_cast<float*>(a.values.data()), a.shape, torch::kFloat32).clone();
}

}  // namespace ccdepth
