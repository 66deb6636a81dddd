#include "sfm/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sfm/errors.hpp"

namespace sfm {

Image::Image(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels <= 0 || height <= 0 || width <= 0) throw InvalidArgument("image dimensions must be positive");
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Image::Image(int channels, int height, int width, std::vector<double> values)
    : channels_(channels), height_(height), width_(width), data_(values.begin(), values.end()) {
  if (channels <= 0 || height <= 0 || width <= 0) throw InvalidArgument("image dimensions must be positive");
  if (data_.size() != static_cast<std::size_t>(channels) * height * width) {
    throw InvalidArgument("image value count does not match dimensions");
  }
}

bool Image::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Image::in_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

Image clamp01(Image img) {
  for (auto& v : img.values()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

namespace {

Image from_mat_rgb8(const cv::Mat& rgb) {
  Image img(3, rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][c] / 255.0;
    }
  }
  return img;
}

cv::Mat to_mat_bgr8(const Image& img) {
  if (img.channels() != 3) throw InvalidArgument("expected a 3-channel image");
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  return bgr;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw LoadError("cannot read image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  return from_mat_rgb8(rgb);
}

void save_png(const Image& img, const std::filesystem::path& path) {
  cv::Mat bgr = to_mat_bgr8(img);
  if (!cv::imwrite(path.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw std::runtime_error("cannot write image: " + path.string());
  }
}

Image quantize8(const Image& img) {
  Image out = img;
  for (auto& v : out.values()) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (height <= 0 || width <= 0) throw InvalidArgument("resize target must be positive");
  if (img.height() == height && img.width() == width) return img;
  Image out(img.channels(), height, width);
  for (int c = 0; c < img.channels(); ++c) {
    cv::Mat src(img.height(), img.width(), CV_64F, const_cast<double*>(img.plane(c).data()));
    cv::Mat dst(height, width, CV_64F, out.plane(c).data());
    cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  }
  return out;
}

Tensor to_batch(std::span<const Image> images) {
  if (images.empty()) throw InvalidArgument("to_batch: no images");
  const Image& first = images.front();
  Tensor t({static_cast<int>(images.size()), first.channels(), first.height(), first.width()});
  std::size_t off = 0;
  for (const auto& img : images) {
    if (!img.same_geometry(first)) throw InvalidArgument("to_batch: images differ in geometry");
    std::copy(img.values().begin(), img.values().end(), t.data() + off);
    off += img.size();
  }
  return t;
}

Tensor to_batch(const Image& image) { return to_batch(std::span<const Image>(&image, 1)); }

Image from_batch(const Tensor& batch, int index) {
  if (batch.rank() != 4 || index < 0 || index >= batch.dim(0)) throw InvalidArgument("from_batch: bad index/shape");
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  std::vector<double> values(batch.data() + n * index, batch.data() + n * (index + 1));
  return Image(c, h, w, std::move(values));
}

double rms_difference(const Image& a, const Image& b) {
  if (!a.same_geometry(b)) throw InvalidArgument("rms_difference: geometry mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double psnr(const Image& a, const Image& b, double cap_db) {
  const double rms = rms_difference(a, b);
  if (rms == 0.0) return cap_db;
  return std::min(cap_db, 20.0 * std::log10(1.0 / rms));
}

}  // namespace sfm
