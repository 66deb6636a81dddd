#include "sfm/freq.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <opencv2/core.hpp>

#include "sfm/errors.hpp"
#include "sfm/filters.hpp"

namespace sfm {

std::string to_string(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::FFT: return "FFT";
    case ExtractorKind::DCT: return "DCT";
    case ExtractorKind::GAU: return "GAU";
  }
  return "?";
}

ExtractorKind parse_extractor_kind(const std::string& name) {
  std::string up = name;
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (up == "FFT") return ExtractorKind::FFT;
  if (up == "DCT") return ExtractorKind::DCT;
  if (up == "GAU") return ExtractorKind::GAU;
  throw InvalidArgument("unknown extractor kind '" + name + "'");
}

void ExtractorSettings::validate() const {
  switch (kind) {
    case ExtractorKind::FFT:
      if (!(radius_fraction > 0.0 && radius_fraction <= 1.0)) throw InvalidArgument("radius_fraction must be in (0,1]");
      break;
    case ExtractorKind::DCT:
      if (!(coefficient_fraction > 0.0 && coefficient_fraction <= 1.0)) {
        throw InvalidArgument("coefficient_fraction must be in (0,1]");
      }
      break;
    case ExtractorKind::GAU:
      if (kernel_size < 1 || kernel_size % 2 == 0) throw InvalidArgument("kernel_size must be odd");
      if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
      break;
  }
}

FrequencyMask::FrequencyMask(int height, int width, double radius_fraction, std::vector<unsigned char> grid)
    : height_(height), width_(width), radius_fraction_(radius_fraction), grid_(std::move(grid)) {}

double FrequencyMask::radius() const noexcept { return radius_fraction_ * (std::min(height_, width_) / 2.0); }

std::size_t FrequencyMask::pass_count() const {
  return static_cast<std::size_t>(std::count(grid_.begin(), grid_.end(), 1));
}

FrequencyMask build_mask(int height, int width, double radius_fraction) {
  if (height < 8 || width < 8) throw InvalidArgument("mask dimensions must be at least 8");
  if (!(radius_fraction > 0.0 && radius_fraction <= 1.0)) throw InvalidArgument("radius_fraction must be in (0,1]");
  const double r = radius_fraction * (std::min(height, width) / 2.0);
  const int cy = height / 2, cx = width / 2;
  std::vector<unsigned char> grid(static_cast<std::size_t>(height) * width, 0);
  for (int u = 0; u < height; ++u) {
    for (int v = 0; v < width; ++v) {
      const double dy = u - cy, dx = v - cx;
      grid[static_cast<std::size_t>(u) * width + v] = (dy * dy + dx * dx <= r * r) ? 1 : 0;
    }
  }
  return FrequencyMask(height, width, radius_fraction, std::move(grid));
}

namespace {

void check_finite(const Image& image) {
  if (!image.all_finite()) throw InvalidInput("image contains non-finite pixels");
}

cv::Mat plane_dft(const double* in, int h, int w) {
  cv::Mat src(h, w, CV_64F, const_cast<double*>(in));
  cv::Mat spec;
  cv::dft(src, spec, cv::DFT_COMPLEX_OUTPUT);
  return spec;
}

void fft_low_pass_plane(const double* in, double* out, int h, int w, double radius_fraction) {
  const FrequencyMask mask = build_mask(h, w, radius_fraction);
  cv::Mat spec = plane_dft(in, h, w);
  for (int i = 0; i < h; ++i) {
    auto* row = spec.ptr<cv::Vec2d>(i);
    for (int j = 0; j < w; ++j) {
      if (!mask.pass_unshifted(i, j)) row[j] = cv::Vec2d(0.0, 0.0);
    }
  }
  cv::Mat back;
  cv::dft(spec, back, cv::DFT_INVERSE | cv::DFT_SCALE | cv::DFT_COMPLEX_OUTPUT);
  double max_imag = 0.0;
  for (int i = 0; i < h; ++i) {
    const auto* row = back.ptr<cv::Vec2d>(i);
    for (int j = 0; j < w; ++j) {
      out[static_cast<std::size_t>(i) * w + j] = row[j][0];
      max_imag = std::max(max_imag, std::fabs(row[j][1]));
    }
  }
  if (max_imag >= 1e-6) {
    throw InternalConsistencyError("low-pass mask is not conjugate-symmetric (imaginary residue " +
                                   std::to_string(max_imag) + ")");
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Orthonormal DCT-II matrix, rows are basis functions.
RowMat dct_matrix(int n) {
  RowMat c(n, n);
  for (int k = 0; k < n; ++k) {
    const double a = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) c(k, i) = a * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * n));
  }
  return c;
}

// C_h^T (M * (C_h X C_w^T)) C_w with M keeping u < ceil(f H), v < ceil(f W).
// Symmetric in X, so it is its own adjoint.
void dct_low_pass_plane(const double* in, double* out, int h, int w, double fraction) {
  const RowMat ch = dct_matrix(h);
  const RowMat cw = dct_matrix(w);
  Eigen::Map<const RowMat> x(in, h, w);
  RowMat coeff = ch * x * cw.transpose();
  const int keep_h = static_cast<int>(std::ceil(fraction * h - 1e-12));
  const int keep_w = static_cast<int>(std::ceil(fraction * w - 1e-12));
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      if (u >= keep_h || v >= keep_w) coeff(u, v) = 0.0;
    }
  }
  Eigen::Map<RowMat>(out, h, w) = ch.transpose() * coeff * cw;
}

ag::PlaneOp forward_op(const ExtractorSettings& e) {
  switch (e.kind) {
    case ExtractorKind::FFT:
      return [r = e.radius_fraction](const double* in, double* out, int h, int w) {
        fft_low_pass_plane(in, out, h, w, r);
      };
    case ExtractorKind::DCT:
      return [f = e.coefficient_fraction](const double* in, double* out, int h, int w) {
        dct_low_pass_plane(in, out, h, w, f);
      };
    case ExtractorKind::GAU:
      return [taps = filters::gaussian_kernel(e.kernel_size, e.sigma)](const double* in, double* out, int h, int w) {
        filters::separable_replicate(in, out, h, w, taps);
      };
  }
  throw InvalidArgument("unknown extractor kind");
}

ag::PlaneOp adjoint_op(const ExtractorSettings& e) {
  if (e.kind == ExtractorKind::GAU) {
    return [taps = filters::gaussian_kernel(e.kernel_size, e.sigma)](const double* in, double* out, int h, int w) {
      filters::separable_replicate_adjoint(in, out, h, w, taps);
    };
  }
  return forward_op(e);
}

}  // namespace

std::vector<ComplexGrid> centered_spectrum(const Image& image) {
  check_finite(image);
  const int h = image.height(), w = image.width();
  std::vector<ComplexGrid> out;
  out.reserve(image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    cv::Mat spec = plane_dft(image.plane(c).data(), h, w);
    ComplexGrid g{h, w, std::vector<std::complex<double>>(static_cast<std::size_t>(h) * w)};
    for (int i = 0; i < h; ++i) {
      const auto* row = spec.ptr<cv::Vec2d>(i);
      for (int j = 0; j < w; ++j) g.at((i + h / 2) % h, (j + w / 2) % w) = {row[j][0], row[j][1]};
    }
    out.push_back(std::move(g));
  }
  return out;
}

SpectrumPair split_spectrum(const std::vector<ComplexGrid>& full, const FrequencyMask& mask) {
  SpectrumPair pair;
  for (const auto& g : full) {
    if (g.height != mask.height() || g.width != mask.width()) throw InvalidArgument("spectrum/mask size mismatch");
    ComplexGrid low = g, high = g;
    for (int u = 0; u < g.height; ++u) {
      for (int v = 0; v < g.width; ++v) {
        if (mask.pass(u, v)) {
          high.at(u, v) = 0.0;
        } else {
          low.at(u, v) = 0.0;
        }
      }
    }
    pair.low.push_back(std::move(low));
    pair.high.push_back(std::move(high));
  }
  return pair;
}

Image low_pass(const Image& raster, const ExtractorSettings& extractor) {
  extractor.validate();
  check_finite(raster);
  if (extractor.kind == ExtractorKind::FFT && (raster.height() < 8 || raster.width() < 8)) {
    throw InvalidArgument("FFT extractor needs at least 8x8 input");
  }
  const auto op = forward_op(extractor);
  Image out(raster.channels(), raster.height(), raster.width());
  for (int c = 0; c < raster.channels(); ++c) {
    op(raster.plane(c).data(), out.plane(c).data(), raster.height(), raster.width());
  }
  return out;
}

BandPair decompose(const Image& image, const ExtractorSettings& extractor) {
  check_finite(image);
  if (!image.in_unit_range()) throw InvalidArgument("decompose expects pixel values in [0,1]");
  BandPair band;
  band.low_image = low_pass(image, extractor);
  band.high_image = image;
  auto& hv = band.high_image.values();
  const auto& lv = band.low_image.values();
  for (std::size_t i = 0; i < hv.size(); ++i) hv[i] -= lv[i];
  return band;
}

Image recompose(const BandPair& band) {
  if (!band.low_image.same_geometry(band.high_image)) throw InvalidArgument("recompose: band shape mismatch");
  Image out = band.low_image;
  auto& ov = out.values();
  const auto& hv = band.high_image.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::clamp(ov[i] + hv[i], 0.0, 1.0);
  return out;
}

ag::Var low_pass(const ag::Var& batch, const ExtractorSettings& extractor) {
  extractor.validate();
  if (!batch.value().all_finite()) throw InvalidInput("low_pass: non-finite input");
  return ag::plane_linear(batch, forward_op(extractor), adjoint_op(extractor));
}

}  // namespace sfm
