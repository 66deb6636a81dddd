#pragma once

#include <span>

#include "sfm/autograd.hpp"
#include "sfm/image.hpp"
#include "sfm/watermark.hpp"

namespace sfm {

// Weights of the compound objective
//   watermark * L_w + l2 * L_L2 + ssim * L_SSIM + jnd * L_JND.
struct LossWeights {
  double watermark = 0.0, l2 = 0.0, ssim = 0.0, jnd = 0.0;

  static constexpr LossWeights stage1() { return {5.0, 0.1, 5.0, 10.0}; }
  static constexpr LossWeights stage2() { return {5.0, 1.0, 10.0, 50.0}; }

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossTerms {
  double watermark = 0.0, l2 = 0.0, ssim = 0.0, jnd = 0.0;
};

// Throws TrainingDivergence naming the first non-finite term.
double total_loss(const LossTerms& terms, const LossWeights& weights);

struct LossTermVars {
  ag::Var watermark, l2, ssim, jnd;
};

ag::Var total_loss(const LossTermVars& terms, const LossWeights& weights);

// Mean BCE over the L bits, probabilities clamped to [1e-7, 1 - 1e-7].
double watermark_loss(const WatermarkBits& truth, std::span<const double> probabilities);
ag::Var watermark_loss(const Tensor& targets, const ag::Var& probabilities);

struct FidelityLosses {
  double l2 = 0.0;
  double ssim_loss = 0.0;
};

FidelityLosses fidelity_losses(const Image& original, const Image& watermarked);

ag::Var l2_loss(const ag::Var& original, const ag::Var& watermarked);
// Mean SSIM of two NCHW batches: 11x11 Gaussian window with sigma 1.5,
// C1 = 0.01^2, C2 = 0.03^2 for unit dynamic range, replicate padding.
ag::Var ssim_index(const ag::Var& a, const ag::Var& b);
ag::Var ssim_loss(const ag::Var& original, const ag::Var& watermarked);
double ssim(const Image& a, const Image& b);

// Single-channel per-pixel visibility threshold in [0, 0.5].
class JndMap {
 public:
  JndMap() = default;
  JndMap(int height, int width, std::vector<double> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  double at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<double>& values() const noexcept { return values_; }

 private:
  int height_ = 0, width_ = 0;
  std::vector<double> values_;
};

// Luminance adaptation (5x5 weighted background) plus contrast masking
// (maximum of four 5x5 directional gradients), combined with the
// nonlinear-additivity overlap term and mapped from 8-bit units into [0, 0.5].
JndMap compute_jnd(const Image& original);

// mean over pixels and channels of (1 - 2 jnd) |original - watermarked|
double jnd_loss(const Image& original, const Image& watermarked, const JndMap& jnd);
// `weight` holds (1 - 2 jnd) already broadcast to the batch shape.
ag::Var jnd_loss(const ag::Var& original, const ag::Var& watermarked, const Tensor& weight);
Tensor jnd_weight(const JndMap& jnd, int channels);

}  // namespace sfm
