#include "ccdepth/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ccdepth/errors.hpp"

namespace ccdepth {
namespace {

torch::Tensor mat_to_tensor(const cv::Mat& m) {
  cv::Mat f;
  m.convertTo(f, CV_32F);
  auto t = torch::from_blob(f.data, {f.rows, f.cols, f.channels()}, torch::kFloat32).clone();
  return t.permute({2, 0, 1}).contiguous();
}

cv::Mat tensor_to_mat(const torch::Tensor& chw, int depth) {
  auto t = chw.detach().to(torch::kCPU, torch::kFloat32).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(t.size(0)), w = static_cast<int>(t.size(1)), c = static_cast<int>(t.size(2));
  cv::Mat f(h, w, CV_32FC(c), t.data_ptr<float>());
  cv::Mat out;
  const double scale = depth == CV_16U ? 65535.0 : 255.0;
  f.convertTo(out, CV_MAKETYPE(depth, c), scale);  // rounds to nearest
  return out;
}

}  // namespace

torch::Tensor read_image_rgb(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot decode image '" + path + "'");
  cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  const double scale = m.depth() == CV_16U ? 65535.0 : 255.0;
  return mat_to_tensor(m) / scale;
}

torch::Tensor read_image_gray(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot decode image '" + path + "'");
  const double scale = m.depth() == CV_16U ? 65535.0 : 255.0;
  return mat_to_tensor(m).squeeze(0) / scale;
}

void write_image_rgb(const std::string& path, const torch::Tensor& image, int bits) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("write_image_rgb: expected (3, H, W)");
  if (bits != 8 && bits != 16) throw DomainError("write_image_rgb: bits must be 8 or 16");
  cv::Mat m = tensor_to_mat(image, bits == 16 ? CV_16U : CV_8U);
  cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path, m)) throw IoError("cannot write image '" + path + "'");
}

void write_image_gray(const std::string& path, const torch::Tensor& image, int bits) {
  if (image.dim() != 2) throw ShapeError("write_image_gray: expected (H, W)");
  if (bits != 8 && bits != 16) throw DomainError("write_image_gray: bits must be 8 or 16");
  cv::Mat m = tensor_to_mat(image.unsqueeze(0), bits == 16 ? CV_16U : CV_8U);
  if (!cv::imwrite(path, m)) throw IoError("cannot write image '" + path + "'");
}

torch::Tensor resize_image(const torch::Tensor& image, int width, int height) {
  if (image.dim() != 3) throw ShapeError("resize_image: expected (C, H, W)");
  if (image.size(1) == height && image.size(2) == width) return image.clone();
  auto t = image.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
  cv::Mat src(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32FC(static_cast<int>(t.size(2))),
              t.data_ptr<float>());
  const bool shrinking = width < src.cols && height < src.rows;
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  if (dst.channels() == 1) dst = dst.reshape(1, height);
  return torch::from_blob(dst.data, {height, width, dst.channels()}, torch::kFloat32).clone().permute({2, 0, 1}).contiguous();
}

}  // namespace ccdepth
