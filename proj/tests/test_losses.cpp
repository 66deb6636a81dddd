#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "loss_probe.hpp"
#include "sfm/errors.hpp"
#include "sfm/losses.hpp"
#include "test_data.hpp"

using namespace sfm;

namespace {

// Single-scale SSIM written out directly: 11x11 Gaussian (sigma 1.5),
// replicate padding, mean of the per-pixel map over channels and pixels.
double naive_ssim(const Image& a, const Image& b) {
  const int r = 5;
  double g[11], total = 0.0;
  for (int i = 0; i < 11; ++i) total += g[i] = std::exp(-(i - r) * (i - r) / (2 * 1.5 * 1.5));
  for (double& v : g) v /= total;
  const double c1 = 1e-4, c2 = 9e-4;
  const int h = a.height(), w = a.width();
  double acc = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
            const double wt = g[dy + r] * g[dx + r];
            const double pa = a.at(c, yy, xx), pb = b.at(c, yy, xx);
            ma += wt * pa, mb += wt * pb, saa += wt * pa * pa, sbb += wt * pb * pb, sab += wt * pa * pb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        acc += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
  return acc / a.size();
}

}  // namespace

TEST(LossWeights, StagePresets) {
  EXPECT_EQ(LossWeights::stage1(), (LossWeights{5.0, 0.1, 5.0, 10.0}));
  EXPECT_EQ(LossWeights::stage2(), (LossWeights{5.0, 1.0, 10.0, 50.0}));
  EXPECT_THROW((LossWeights{-1.0, 0, 0, 0}).validate(), InvalidArgument);
}

TEST(TotalLoss, HandArithmetic) {
  const LossTerms t{0.1, 0.01, 0.02, 0.005};
  EXPECT_NEAR(total_loss(t, LossWeights::stage1()), 0.651, 1e-12);
  EXPECT_NEAR(total_loss(t, LossWeights::stage2()), 0.96, 1e-12);
  EXPECT_EQ(total_loss(LossTerms{}, LossWeights::stage2()), 0.0);
}

TEST(TotalLoss, NonFiniteTermIsAttributed) {
  try {
    total_loss(LossTerms{0.1, 0.2, std::numeric_limits<double>::quiet_NaN(), 0.1}, LossWeights::stage1());
    FAIL() << "no divergence error";
  } catch (const TrainingDivergence& e) {
    EXPECT_EQ(e.term(), "ssim");
  }
  const ag::Var ok = ag::constant(Tensor({1}, 0.1));
  const ag::Var inf = ag::constant(Tensor({1}, INFINITY));
  try {
    total_loss(LossTermVars{ok, ok, ok, inf}, LossWeights::stage1());
    FAIL() << "no divergence error";
  } catch (const TrainingDivergence& e) {
    EXPECT_EQ(e.term(), "jnd");
  }
}

TEST(TotalLoss, VarPathMatchesScalarPath) {
  auto v = [](double x) { return ag::constant(Tensor({1}, x)); };
  const ag::Var t = total_loss(LossTermVars{v(0.3), v(0.02), v(0.1), v(0.04)}, LossWeights::stage2());
  EXPECT_NEAR(t.item(), total_loss(LossTerms{0.3, 0.02, 0.1, 0.04}, LossWeights::stage2()), 1e-15);
}

TEST(WatermarkLoss, AnalyticValues) {
  const WatermarkBits bits = WatermarkBits::from_bitstring("1011001110001111");
  EXPECT_NEAR(watermark_loss(bits, std::vector<double>(16, 0.5)), std::log(2.0), 1e-15);
  std::vector<double> exact(16);
  for (int i = 0; i < 16; ++i) exact[i] = bits[i];
  EXPECT_LE(watermark_loss(bits, exact), 1e-6);
  EXPECT_THROW(watermark_loss(bits, std::vector<double>(8, 0.5)), InvalidArgument);
}

TEST(WatermarkLoss, DirectSummation) {
  Rng rng(1);
  const WatermarkBits bits = WatermarkBits::random(32, rng);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<double> p(32);
  double want = 0.0;
  for (int i = 0; i < 32; ++i) {
    p[i] = u(rng);
    want -= bits[i] ? std::log(p[i]) : std::log(1.0 - p[i]);
  }
  EXPECT_NEAR(watermark_loss(bits, p), want / 32.0, 1e-10);
}

TEST(Fidelity, TrivialCases) {
  const Image a = fixtures::natural_crops(1, 32, 2)[0];
  const auto same = fidelity_losses(a, a);
  EXPECT_EQ(same.l2, 0.0);
  EXPECT_NEAR(same.ssim_loss, 0.0, 1e-12);
  EXPECT_NEAR(fidelity_losses(Image(3, 16, 16, 0.0), Image(3, 16, 16, 1.0)).l2, 1.0, 1e-15);
  EXPECT_THROW(fidelity_losses(Image(3, 16, 16), Image(3, 16, 17)), InvalidArgument);
}

TEST(Fidelity, SsimMatchesDirectComputation) {
  Rng rng(3);
  for (int t = 0; t < 3; ++t) {
    const Image a = fixtures::random_image(3, 14, 19, rng);
    Image b = a;
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto& v : b.values()) v = std::clamp(v + n(rng), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, b), naive_ssim(a, b), 1e-12);
  }
}

TEST(Jnd, TrivialLossCases) {
  const Image a(3, 8, 8, 0.4), b(3, 8, 8, 0.5);
  EXPECT_EQ(jnd_loss(a, a, compute_jnd(a)), 0.0);
  EXPECT_EQ(jnd_loss(a, b, JndMap(8, 8, std::vector<double>(64, 0.5))), 0.0);
  EXPECT_NEAR(jnd_loss(a, b, JndMap(8, 8, std::vector<double>(64, 0.25))), 0.05, 1e-15);
  EXPECT_THROW(jnd_loss(a, b, JndMap(4, 4, std::vector<double>(16, 0.1))), InvalidArgument);
}

TEST(Jnd, FlatMidGreyIsUniformAndLow) {
  const auto j = compute_jnd(Image(3, 16, 16, 0.5));
  for (double v : j.values()) EXPECT_NEAR(v, j.values()[0], 1e-15);
  Rng rng(4);
  const auto textured = compute_jnd(fixtures::random_image(3, 16, 16, rng));
  double mean = 0.0;
  for (double v : textured.values()) mean += v / 256.0;
  EXPECT_LT(j.values()[0], mean);
}

TEST(Jnd, EdgeBandIsElevated) {
  Image img(3, 32, 32, 0.3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 16; x < 32; ++x) img.at(c, y, x) = 0.7;
  const auto j = compute_jnd(img);
  double edge = 0.0, flat = 0.0;
  for (int y = 0; y < 32; ++y) {
    edge += j.at(y, 15) + j.at(y, 16);
    flat += j.at(y, 3) + j.at(y, 28);
  }
  EXPECT_GT(edge, flat);
}

TEST(Jnd, RangeOnNaturalImages) {
  for (const auto& img : fixtures::natural_crops(100, 32, 5)) {
    const auto j = compute_jnd(img);
    for (double v : j.values()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 0.5);
    }
  }
}

TEST(TotalLoss, GradientMatchesFiniteDifferencesOn8x8) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const fixtures::LossProbe probe(8, 16, seed);
    const auto r = fixtures::gradcheck([&](const ag::Var& wm) { return probe.total(wm); }, probe.watermarked, 192,
                                      1e-6, 1e-3, 1e-10, seed);
    EXPECT_GE(r.pass_rate(), 0.99) << "worst " << r.worst;
  }
}

TEST(TotalLoss, EachTermGradientMatchesFiniteDifferences) {
  const fixtures::LossProbe probe(8, 16, 4);
  using Pick = ag::Var (*)(const LossTermVars&);
  const Pick picks[] = {[](const LossTermVars& t) { return t.watermark; }, [](const LossTermVars& t) { return t.l2; },
                        [](const LossTermVars& t) { return t.ssim; }, [](const LossTermVars& t) { return t.jnd; }};
  for (Pick pick : picks) {
    const auto r = fixtures::gradcheck([&](const ag::Var& wm) { return pick(probe.terms(wm)); }, probe.watermarked,
                                      192, 1e-6, 1e-3, 1e-10);
    EXPECT_GE(r.pass_rate(), 0.99) << "worst " << r.worst;
  }
}
