#include "sfm/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "sfm/errors.hpp"
#include "sfm/filters.hpp"

namespace sfm {

void LossWeights::validate() const {
  for (double w : {watermark, l2, ssim, jnd}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("loss weights must be finite and non-negative");
  }
}

namespace {

void check_terms(double watermark, double l2, double ssim, double jnd) {
  const std::array<std::pair<const char*, double>, 4> named{
      {{"watermark", watermark}, {"l2", l2}, {"ssim", ssim}, {"jnd", jnd}}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) throw TrainingDivergence(name, std::string("non-finite loss term: ") + name);
  }
}

}  // namespace

double total_loss(const LossTerms& t, const LossWeights& w) {
  check_terms(t.watermark, t.l2, t.ssim, t.jnd);
  return w.watermark * t.watermark + w.l2 * t.l2 + w.ssim * t.ssim + w.jnd * t.jnd;
}

ag::Var total_loss(const LossTermVars& t, const LossWeights& w) {
  check_terms(t.watermark.item(), t.l2.item(), t.ssim.item(), t.jnd.item());
  ag::Var acc = ag::scale(t.watermark, w.watermark);
  acc = ag::add(acc, ag::scale(t.l2, w.l2));
  acc = ag::add(acc, ag::scale(t.ssim, w.ssim));
  return ag::add(acc, ag::scale(t.jnd, w.jnd));
}

double watermark_loss(const WatermarkBits& truth, std::span<const double> probabilities) {
  if (static_cast<int>(probabilities.size()) != truth.length()) {
    throw InvalidArgument("watermark_loss: length mismatch");
  }
  Tensor target({1, truth.length()});
  for (int i = 0; i < truth.length(); ++i) target[i] = truth[i];
  Tensor p({1, truth.length()}, std::vector<double>(probabilities.begin(), probabilities.end()));
  return ag::binary_cross_entropy(ag::constant(std::move(p)), target).item();
}

ag::Var watermark_loss(const Tensor& targets, const ag::Var& probabilities) {
  if (targets.shape() != probabilities.shape()) throw InvalidArgument("watermark_loss: shape mismatch");
  return ag::binary_cross_entropy(probabilities, targets);
}

ag::Var l2_loss(const ag::Var& original, const ag::Var& watermarked) {
  return ag::mean(ag::square(ag::sub(original, watermarked)));
}

ag::Var ssim_index(const ag::Var& a, const ag::Var& b) {
  if (a.shape() != b.shape()) throw InvalidArgument("ssim: shape mismatch");
  static const std::vector<double> taps = filters::gaussian_kernel(11, 1.5);
  auto blur = [](const ag::Var& x) {
    return ag::plane_linear(
        x, [](const double* in, double* out, int h, int w) { filters::separable_replicate(in, out, h, w, taps); },
        [](const double* in, double* out, int h, int w) {
          filters::separable_replicate_adjoint(in, out, h, w, taps);
        });
  };
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const ag::Var mu_a = blur(a);
  const ag::Var mu_b = blur(b);
  const ag::Var mu_aa = ag::square(mu_a);
  const ag::Var mu_bb = ag::square(mu_b);
  const ag::Var mu_ab = ag::mul(mu_a, mu_b);
  const ag::Var var_a = ag::sub(blur(ag::square(a)), mu_aa);
  const ag::Var var_b = ag::sub(blur(ag::square(b)), mu_bb);
  const ag::Var cov = ag::sub(blur(ag::mul(a, b)), mu_ab);
  const ag::Var num = ag::mul(ag::add_scalar(ag::scale(mu_ab, 2.0), c1), ag::add_scalar(ag::scale(cov, 2.0), c2));
  const ag::Var den = ag::mul(ag::add_scalar(ag::add(mu_aa, mu_bb), c1), ag::add_scalar(ag::add(var_a, var_b), c2));
  return ag::mean(ag::div(num, den));
}

ag::Var ssim_loss(const ag::Var& original, const ag::Var& watermarked) {
  return ag::add_scalar(ag::scale(ssim_index(original, watermarked), -1.0), 1.0);
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_geometry(b)) throw InvalidArgument("ssim: geometry mismatch");
  return ssim_index(ag::constant(to_batch(a)), ag::constant(to_batch(b))).item();
}

FidelityLosses fidelity_losses(const Image& original, const Image& watermarked) {
  if (!original.same_geometry(watermarked)) throw InvalidArgument("fidelity_losses: geometry mismatch");
  const ag::Var a = ag::constant(to_batch(original));
  const ag::Var b = ag::constant(to_batch(watermarked));
  return {l2_loss(a, b).item(), ssim_loss(a, b).item()};
}

JndMap::JndMap(int height, int width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(height) * width) throw InvalidArgument("JND map size mismatch");
}

namespace {

using Kernel5 = std::array<std::array<int, 5>, 5>;

constexpr Kernel5 kBackground{{{1, 1, 1, 1, 1}, {1, 2, 2, 2, 1}, {1, 2, 0, 2, 1}, {1, 2, 2, 2, 1}, {1, 1, 1, 1, 1}}};

constexpr std::array<Kernel5, 4> kGradients{{
    {{{0, 0, 0, 0, 0}, {1, 3, 8, 3, 1}, {0, 0, 0, 0, 0}, {-1, -3, -8, -3, -1}, {0, 0, 0, 0, 0}}},
    {{{0, 0, 1, 0, 0}, {0, 8, 3, 0, 0}, {1, 3, 0, -3, -1}, {0, 0, -3, -8, 0}, {0, 0, -1, 0, 0}}},
    {{{0, 0, 1, 0, 0}, {0, 0, 3, 8, 0}, {-1, -3, 0, 3, 1}, {0, -8, -3, 0, 0}, {0, 0, -1, 0, 0}}},
    {{{0, 1, 0, -1, 0}, {0, 3, 0, -3, 0}, {0, 8, 0, -8, 0}, {0, 3, 0, -3, 0}, {0, 1, 0, -1, 0}}},
}};

double correlate5(const std::vector<double>& lum, int h, int w, int y, int x, const Kernel5& k) {
  double acc = 0.0;
  for (int dy = 0; dy < 5; ++dy) {
    const int yy = std::clamp(y + dy - 2, 0, h - 1);
    for (int dx = 0; dx < 5; ++dx) {
      const int xx = std::clamp(x + dx - 2, 0, w - 1);
      acc += k[dy][dx] * lum[static_cast<std::size_t>(yy) * w + xx];
    }
  }
  return acc;
}

}  // namespace

JndMap compute_jnd(const Image& original) {
  if (original.channels() != 3) throw InvalidArgument("compute_jnd expects a 3-channel image");
  if (!original.all_finite()) throw InvalidInput("compute_jnd: non-finite pixels");
  const int h = original.height(), w = original.width();
  std::vector<double> lum(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      lum[static_cast<std::size_t>(y) * w + x] =
          255.0 * (0.299 * original.at(0, y, x) + 0.587 * original.at(1, y, x) + 0.114 * original.at(2, y, x));
    }
  }
  std::vector<double> out(lum.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double bg = correlate5(lum, h, w, y, x, kBackground) / 32.0;
      double mg = 0.0;
      for (const auto& g : kGradients) mg = std::max(mg, std::fabs(correlate5(lum, h, w, y, x, g)) / 16.0);
      const double la = bg <= 127.0 ? 17.0 * (1.0 - std::sqrt(bg / 127.0)) + 3.0 : 3.0 / 128.0 * (bg - 127.0) + 3.0;
      const double cm = std::max(0.0, mg * (0.0001 * bg + 0.115) + (0.5 - 0.01 * bg));
      const double jnd = la + cm - 0.3 * std::min(la, cm);
      out[static_cast<std::size_t>(y) * w + x] = std::clamp(jnd / 255.0, 0.0, 0.5);
    }
  }
  return JndMap(h, w, std::move(out));
}

Tensor jnd_weight(const JndMap& jnd, int channels) {
  Tensor t({1, channels, jnd.height(), jnd.width()});
  const std::size_t plane = jnd.values().size();
  for (int c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) t[c * plane + i] = 1.0 - 2.0 * jnd.values()[i];
  }
  return t;
}

ag::Var jnd_loss(const ag::Var& original, const ag::Var& watermarked, const Tensor& weight) {
  if (weight.shape() != original.shape()) throw InvalidArgument("jnd_loss: weight shape mismatch");
  return ag::mean(ag::mul(ag::constant(weight), ag::abs(ag::sub(original, watermarked))));
}

double jnd_loss(const Image& original, const Image& watermarked, const JndMap& jnd) {
  if (!original.same_geometry(watermarked) || jnd.height() != original.height() || jnd.width() != original.width()) {
    throw InvalidArgument("jnd_loss: shape mismatch");
  }
  double acc = 0.0;
  for (int c = 0; c < original.channels(); ++c) {
    for (int y = 0; y < original.height(); ++y) {
      for (int x = 0; x < original.width(); ++x) {
        acc += (1.0 - 2.0 * jnd.at(y, x)) * std::fabs(original.at(c, y, x) - watermarked.at(c, y, x));
      }
    }
  }
  return acc / static_cast<double>(original.size());
}

}  // namespace sfm
