#pragma once

#include <string>

#include <torch/torch.h>

namespace ccdepth {

/// Decodes an 8- or 16-bit image to an RGB (3, H, W) float tensor in [0, 1].
torch::Tensor read_image_rgb(const std::string& path);

/// Writes an RGB (3, H, W) tensor in [0, 1] with 8 or 16 bits per channel;
/// the format follows the file extension.
void write_image_rgb(const std::string& path, const torch::Tensor& image, int bits = 8);

/// Writes a single-channel (H, W) tensor in [0, 1] with 8 or 16 bits.
void write_image_gray(const std::string& path, const torch::Tensor& image, int bits = 8);

/// Reads a single-channel image as (H, W) values in [0, 1].
torch::Tensor read_image_gray(const std::string& path);

/// Resizes a (C, H, W) image; area averaging when shrinking, bilinear otherwise.
torch::Tensor resize_image(const torch::Tensor& image, int width, int height);

}  // namespace ccdepth
