#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "sfm/autograd.hpp"
#include "sfm/rng.hpp"

namespace sfm::fixtures {

struct GradCheck {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst = 0.0;

  double pass_rate() const { return checked ? static_cast<double>(passed) / checked : 0.0; }
};

// Compares the analytic gradient of f with respect to `input` against central
// differences on up to `samples` coordinates. A coordinate passes when
// |a - n| <= rel_tol * max(|a|, |n|) or both are below abs_floor.
inline GradCheck gradcheck(const std::function<ag::Var(const ag::Var&)>& f, const Tensor& input,
                           std::size_t samples = 64, double h = 1e-6, double rel_tol = 1e-3,
                           double abs_floor = 1e-8, std::uint64_t seed = 0) {
  ag::Var x(input, true);
  ag::Var y = f(x);
  ag::backward(y);
  const Tensor analytic = x.grad().empty() ? Tensor(input.shape(), 0.0) : x.grad();

  std::vector<std::size_t> idx(input.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (idx.size() > samples) {
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(samples);
  }

  GradCheck out;
  for (std::size_t i : idx) {
    Tensor plus = input, minus = input;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(ag::constant(plus)).item();
    const double fm = f(ag::constant(minus)).item();
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double scale = std::max(std::fabs(a), std::fabs(numeric));
    const double err = scale > 0.0 ? std::fabs(a - numeric) / scale : 0.0;
    ++out.checked;
    if (scale < abs_floor || err <= rel_tol) {
      ++out.passed;
    } else {
      out.worst = std::max(out.worst, err);
    }
  }
  return out;
}

}  // namespace sfm::fixtures
