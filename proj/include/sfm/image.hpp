#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "sfm/tensor.hpp"

namespace sfm {

// Planar (channel-major) floating-point raster. Pixel-domain images live in
// [0,1]; band rasters produced by decomposition may leave that range.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0);
  Image(int channels, int height, int width, std::vector<double> values);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  Storage& values() noexcept { return data_; }
  const Storage& values() const noexcept { return data_; }

  bool same_geometry(const Image& o) const noexcept {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  bool all_finite() const;
  bool in_unit_range() const;

  bool operator==(const Image& o) const = default;

 private:
  int channels_ = 0, height_ = 0, width_ = 0;
  Storage data_;
};

Image clamp01(Image img);

// Loads any OpenCV-readable file as 3-channel RGB in [0,1]. Grey images are
// replicated, alpha is dropped.
Image load_image(const std::filesystem::path& path);
// Writes an 8-bit RGB PNG (values clamped and rounded).
void save_png(const Image& img, const std::filesystem::path& path);
// 8-bit quantisation used wherever an image crosses a lossless file boundary.
Image quantize8(const Image& img);
Image resize_bilinear(const Image& img, int height, int width);

// NCHW batch <-> images.
Tensor to_batch(std::span<const Image> images);
Tensor to_batch(const Image& image);
Image from_batch(const Tensor& batch, int index);

double rms_difference(const Image& a, const Image& b);
// Zero MSE is reported as `cap_db` rather than infinity.
double psnr(const Image& a, const Image& b, double cap_db = 99.0);

}  // namespace sfm
