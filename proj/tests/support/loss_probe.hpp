#pragma once

#include <cstdint>

#include "sfm/autograd.hpp"
#include "sfm/image.hpp"
#include "sfm/losses.hpp"
#include "sfm/rng.hpp"
#include "sfm/watermark.hpp"

namespace sfm::fixtures {

// A small fixed setup in which all four loss terms depend on the watermarked
// image: the watermark probabilities come from a fixed linear read-out of it.
struct LossProbe {
  Image original;
  Tensor watermarked;  // NCHW, batch of one
  Tensor readout_w, readout_b;
  Tensor targets;
  Tensor jnd_w;
  LossWeights weights = LossWeights::stage1();

  LossProbe(int size, int bits, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    std::uniform_real_distribution<double> off(0.01, 0.05);
    std::normal_distribution<double> n(0.0, 0.05);
    original = Image(3, size, size);
    for (auto& v : original.values()) v = u(rng);
    watermarked = to_batch(original);
    // Offsets stay well clear of zero so |orig - wm| is differentiable at the probe.
    for (auto& v : watermarked.storage()) v += (rng() & 1 ? 1.0 : -1.0) * off(rng);
    const int f = 3 * size * size;
    readout_w = Tensor({bits, f});
    for (auto& v : readout_w.storage()) v = n(rng);
    readout_b = Tensor({bits}, 0.0);
    targets = Tensor({1, bits});
    for (auto& v : targets.storage()) v = static_cast<double>(rng() & 1);
    jnd_w = jnd_weight(compute_jnd(original), 3);
  }

  LossTermVars terms(const ag::Var& wm) const {
    const ag::Var orig = ag::constant(to_batch(original));
    const int f = static_cast<int>(wm.value().size());
    const ag::Var logits = ag::linear(ag::reshape(wm, {1, f}), ag::constant(readout_w), ag::constant(readout_b));
    return {watermark_loss(targets, ag::sigmoid(logits)), l2_loss(orig, wm), ssim_loss(orig, wm),
            jnd_loss(orig, wm, jnd_w)};
  }

  ag::Var total(const ag::Var& wm) const { return total_loss(terms(wm), weights); }
};

}  // namespace sfm::fixtures
