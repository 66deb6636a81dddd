#pragma once

#include <vector>

namespace sfm::filters {

// Normalised 1-D Gaussian taps. sigma <= 0 picks the OpenCV default
// 0.3*((size-1)*0.5 - 1) + 0.8.
std::vector<double> gaussian_kernel(int size, double sigma);

// Separable correlation of an h x w plane with `taps` along both axes,
// replicate-padded so the output keeps the input size.
void separable_replicate(const double* in, double* out, int h, int w, const std::vector<double>& taps);
// Exact transpose of separable_replicate (border taps fold back onto the edge pixels).
void separable_replicate_adjoint(const double* in, double* out, int h, int w, const std::vector<double>& taps);

// k x k median with replicate padding.
void median_replicate(const double* in, double* out, int h, int w, int k);

}  // namespace sfm::filters
