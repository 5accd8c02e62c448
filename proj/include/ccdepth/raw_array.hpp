#pragma once

// Self-describing float array container used for predictions and
// ground-truth depth. Byte layout, all integers little-endian:
//
//   offset 0   char[4]   magic "CCDR"
//   offset 4   uint32    format version (1)
//   offset 8   uint32    ndim
//   offset 12  uint64[ndim] dimensions, outermost first
//   then       float32[prod(dims)] values in row-major order

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace ccdepth {

struct RawArray {
  std::vector<int64_t> shape;
  std::vector<float> values;

  int64_t numel() const;
};

void write_raw_array(const std::string& path, const RawArray& array);
RawArray read_raw_array(const std::string& path);

RawArray raw_array_from_tensor(const torch::Tensor& t);
torch::Tensor tensor_from_raw_array(const RawArray& a);

}  // namespace ccdepth
