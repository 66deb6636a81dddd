#pragma once

#include <complex>
#include <string>
#include <vector>

#include "sfm/autograd.hpp"
#include "sfm/image.hpp"

namespace sfm {

enum class ExtractorKind { FFT, DCT, GAU };

std::string to_string(ExtractorKind kind);
ExtractorKind parse_extractor_kind(const std::string& name);

// Low-frequency extractor choice. Only the parameters of the selected kind
// are consulted.
struct ExtractorSettings {
  ExtractorKind kind = ExtractorKind::FFT;
  double radius_fraction = 0.20;       // FFT: pass-band radius as a fraction of min(H,W)/2
  double coefficient_fraction = 0.15;  // DCT: fraction of the lowest coefficients kept per axis
  int kernel_size = 15;                // GAU
  double sigma = 2.5;                  // GAU

  void validate() const;
  bool operator==(const ExtractorSettings&) const = default;
};

// Circular low-pass mask laid out on the centre-shifted spectrum; the centre
// bin is (floor(H/2), floor(W/2)).
class FrequencyMask {
 public:
  FrequencyMask(int height, int width, double radius_fraction, std::vector<unsigned char> grid);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  double radius_fraction() const noexcept { return radius_fraction_; }
  double radius() const noexcept;

  bool pass(int u, int v) const { return grid_[static_cast<std::size_t>(u) * width_ + v] != 0; }
  // Same mask addressed in the natural (unshifted) DFT layout.
  bool pass_unshifted(int i, int j) const {
    return pass((i + height_ / 2) % height_, (j + width_ / 2) % width_);
  }
  std::size_t pass_count() const;
  const std::vector<unsigned char>& grid() const noexcept { return grid_; }

 private:
  int height_, width_;
  double radius_fraction_;
  std::vector<unsigned char> grid_;
};

FrequencyMask build_mask(int height, int width, double radius_fraction);

struct ComplexGrid {
  int height = 0, width = 0;
  std::vector<std::complex<double>> values;

  std::complex<double>& at(int u, int v) { return values[static_cast<std::size_t>(u) * width + v]; }
  const std::complex<double>& at(int u, int v) const { return values[static_cast<std::size_t>(u) * width + v]; }
};

// Per-channel, centre-shifted, unnormalised 2-D DFT.
std::vector<ComplexGrid> centered_spectrum(const Image& image);

// low = F * M and high = F * (1 - M), per channel.
struct SpectrumPair {
  std::vector<ComplexGrid> low;
  std::vector<ComplexGrid> high;
};

SpectrumPair split_spectrum(const std::vector<ComplexGrid>& full, const FrequencyMask& mask);

struct BandPair {
  Image low_image;
  Image high_image;
};

BandPair decompose(const Image& image, const ExtractorSettings& extractor);
// clamp(low + high, 0, 1)
Image recompose(const BandPair& band);

// Low band alone; accepts any finite raster.
Image low_pass(const Image& raster, const ExtractorSettings& extractor);
// Differentiable low band of an NCHW batch. Every extractor is linear, so the
// backward pass applies the operator's transpose.
ag::Var low_pass(const ag::Var& batch, const ExtractorSettings& extractor);

}  // namespace sfm
