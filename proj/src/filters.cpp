#include "sfm/filters.hpp"

#include <algorithm>
#include <cmath>

#include "sfm/errors.hpp"

namespace sfm::filters {

std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw InvalidArgument("gaussian kernel size must be odd and positive");
  if (sigma <= 0.0) sigma = 0.3 * ((size - 1) * 0.5 - 1.0) + 0.8;
  std::vector<double> k(size);
  const int r = size / 2;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

namespace {

inline int clampi(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

}  // namespace

void separable_replicate(const double* in, double* out, int h, int w, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size()) / 2;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    const double* row = in + static_cast<std::size_t>(y) * w;
    double* dst = tmp.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += taps[k + r] * row[clampi(x + k, w - 1)];
      dst[x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    double* dst = out + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += taps[k + r] * tmp[static_cast<std::size_t>(clampi(y + k, h - 1)) * w + x];
      dst[x] = acc;
    }
  }
}

void separable_replicate_adjoint(const double* in, double* out, int h, int w, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size()) / 2;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w, 0.0);
  // Transpose of the vertical pass.
  for (int y = 0; y < h; ++y) {
    const double* src = in + static_cast<std::size_t>(y) * w;
    for (int k = -r; k <= r; ++k) {
      double* dst = tmp.data() + static_cast<std::size_t>(clampi(y + k, h - 1)) * w;
      const double t = taps[k + r];
      for (int x = 0; x < w; ++x) dst[x] += t * src[x];
    }
  }
  // Transpose of the horizontal pass.
  std::fill(out, out + static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    const double* src = tmp.data() + static_cast<std::size_t>(y) * w;
    double* dst = out + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      for (int k = -r; k <= r; ++k) dst[clampi(x + k, w - 1)] += taps[k + r] * src[x];
    }
  }
}

void median_replicate(const double* in, double* out, int h, int w, int k) {
  if (k < 1 || k % 2 == 0) throw InvalidArgument("median kernel must be odd");
  const int r = k / 2;
  std::vector<double> window(static_cast<std::size_t>(k) * k);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::size_t n = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const double* row = in + static_cast<std::size_t>(clampi(y + dy, h - 1)) * w;
        for (int dx = -r; dx <= r; ++dx) window[n++] = row[clampi(x + dx, w - 1)];
      }
      auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
      std::nth_element(window.begin(), mid, window.end());
      out[static_cast<std::size_t>(y) * w + x] = *mid;
    }
  }
}

}  // namespace sfm::filters
