#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "sfm/codec.hpp"
#include "sfm/errors.hpp"
#include "test_data.hpp"

using namespace sfm;

namespace {

std::vector<Image> constant_images(int count, int size) {
  std::vector<Image> out;
  for (int i = 0; i < count; ++i) {
    Image img(3, size, size);
    for (int c = 0; c < 3; ++c)
      for (double& v : img.plane(c)) v = 0.1 + 0.8 * ((i * 7 + c * 3) % count) / count;
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace

TEST(Codec, IdentityLiftAndExactRoundTrip) {
  Rng rng(1);
  const Image img = fixtures::random_image(3, 64, 64, rng);
  const Codec id = Codec::identity();
  const LatentMap z = id.encode(img);
  ASSERT_EQ(z.values().shape(), (Shape{4, 64, 64}));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 64 * 64; ++i) EXPECT_EQ(z.values()[c * 4096 + i], img.values()[c * 4096 + i]);
  for (int i = 0; i < 64 * 64; ++i) EXPECT_EQ(z.values()[3 * 4096 + i], 0.0);
  EXPECT_EQ(id.decode(z), img);
}

TEST(Codec, TinyAeShapesAndTotality) {
  const Codec codec(CodecArchitecture{CodecKind::TinyAE, 4, 16}, 3);
  Rng rng(2);
  const LatentMap z = codec.encode(fixtures::random_image(3, 64, 64, rng));
  EXPECT_EQ(z.values().shape(), (Shape{4, 16, 16}));
  const Image out = codec.decode(LatentMap(Tensor({4, 16, 16}, 0.0)));
  EXPECT_EQ(out.channels(), 3);
  EXPECT_EQ(out.height(), 64);
  EXPECT_TRUE(out.all_finite());
}

TEST(Codec, EncodeIsDeterministic) {
  const Codec codec(CodecArchitecture{CodecKind::TinyAE, 4, 8}, 4);
  const Image img = fixtures::natural_crops(1, 32, 1)[0];
  EXPECT_EQ(codec.encode(img), codec.encode(img));
  EXPECT_EQ(Codec(CodecArchitecture{CodecKind::TinyAE, 4, 8}, 4).parameter_hash(), codec.parameter_hash());
}

TEST(Codec, ExternalVaeUsesMeanChannels) {
  const Codec vae(CodecArchitecture{CodecKind::ExternalVAE, 8, 8}, 5);
  Rng rng(3);
  const LatentMap z = vae.encode(fixtures::random_image(3, 64, 64, rng));
  EXPECT_EQ(z.values().shape(), (Shape{4, 8, 8}));
}

TEST(Codec, GeometryAndArchitectureChecks) {
  const Codec codec(CodecArchitecture{CodecKind::TinyAE, 4, 8}, 6);
  EXPECT_THROW(codec.encode(Image(3, 30, 32)), InvalidArgument);
  EXPECT_THROW(codec.decode(LatentMap(Tensor({3, 8, 8}))), InvalidArgument);
  EXPECT_THROW((CodecArchitecture{CodecKind::TinyAE, 3, 8}).validate(), InvalidArgument);
  EXPECT_THROW((CodecArchitecture{CodecKind::Identity, 4, 8}).validate(), InvalidArgument);
}

TEST(Codec, FrozenCodecGetsNoParameterGradients) {
  const Codec codec(CodecArchitecture{CodecKind::TinyAE, 4, 8}, 7);
  ASSERT_TRUE(codec.frozen());
  ag::Var x(Tensor({1, 3, 16, 16}, 0.5), true);
  ag::backward(ag::sum(codec.decode(codec.encode(x))));
  for (const auto& [name, p] : codec.params().params()) EXPECT_TRUE(p.grad().empty()) << name;
  EXPECT_FALSE(x.grad().empty());
}

TEST(Codec, SaveLoadRoundTripAndHashCheck) {
  const auto dir = fixtures::fresh_dir("codec");
  Codec codec(CodecArchitecture{CodecKind::ExternalVAE, 8, 8}, 8);
  codec.provenance() = {{"note", "unit"}};
  codec.save(dir / "vae.sfm");
  const Codec back = Codec::load(dir / "vae.sfm");
  EXPECT_EQ(back.parameter_hash(), codec.parameter_hash());
  EXPECT_EQ(back.kind(), CodecKind::ExternalVAE);
  EXPECT_TRUE(back.frozen());
  EXPECT_EQ(back.provenance(), codec.provenance());
  EXPECT_EQ(back.parameter_source(), (dir / "vae.sfm").string());

  EXPECT_THROW(Codec::load(dir / "missing.sfm"), CodecLoadError);
  {
    std::ofstream(dir / "junk.sfm") << "not a checkpoint";
  }
  EXPECT_THROW(Codec::load(dir / "junk.sfm"), CodecLoadError);

  // Flip one parameter value: the stored hash no longer matches.
  Checkpoint ckpt = read_checkpoint(dir / "vae.sfm");
  ckpt.arrays.begin()->second[0] += 1.0;
  write_checkpoint(dir / "tampered.sfm", ckpt);
  EXPECT_THROW(Codec::load(dir / "tampered.sfm"), CodecLoadError);
}

TEST(Pretrain, ConstantImagesReachNearZeroLoss) {
  const auto images = constant_images(100, 16);
  PretrainSettings s;
  s.max_iterations = 2000;
  s.eval_every = 50;
  s.seed = 1;
  PretrainResult r;
  const Codec codec = pretrain_tiny_autoencoder(images, CodecArchitecture{CodecKind::TinyAE, 4, 8}, s, &r);
  EXPECT_TRUE(codec.frozen());
  EXPECT_LT(r.final_rms, 0.02);
  EXPECT_LT(r.final_rms, r.eval_rms.front() * 0.2);
}

TEST(Pretrain, CurveIsMonotoneAndRecordedRmsIsTheOracle) {
  const auto images = fixtures::natural_crops(100, 32, 2);
  PretrainSettings s;
  s.max_iterations = 300;
  s.eval_every = 50;
  s.seed = 2;
  PretrainResult r;
  const Codec codec = pretrain_tiny_autoencoder(images, CodecArchitecture{CodecKind::TinyAE, 4, 8}, s, &r);
  ASSERT_GE(r.eval_rms.size(), 2u);
  for (std::size_t i = 1; i < r.eval_rms.size(); ++i) EXPECT_LE(r.eval_rms[i], r.eval_rms[i - 1]);
  EXPECT_EQ(r.final_rms, r.eval_rms.back());
  EXPECT_DOUBLE_EQ(codec.provenance().at("final_rms").get<double>(), r.final_rms);

  std::vector<Image> lows;
  for (const auto& img : images) lows.push_back(low_pass(img, s.extractor));
  EXPECT_LE(reconstruction_rms(codec, lows), r.final_rms + 1e-12);
}

TEST(Pretrain, PreconditionsAndDeterminism) {
  const auto few = constant_images(50, 16);
  EXPECT_THROW(pretrain_tiny_autoencoder(few, CodecArchitecture{CodecKind::TinyAE, 4, 8}, {}), InvalidArgument);
  EXPECT_THROW(pretrain_tiny_autoencoder(constant_images(100, 16), CodecArchitecture{CodecKind::Identity, 1, 1}, {}),
               InvalidArgument);
  const auto images = constant_images(100, 16);
  PretrainSettings s;
  s.max_iterations = 20;
  s.eval_every = 10;
  const auto a = pretrain_tiny_autoencoder(images, CodecArchitecture{CodecKind::TinyAE, 4, 8}, s);
  const auto b = pretrain_tiny_autoencoder(images, CodecArchitecture{CodecKind::TinyAE, 4, 8}, s);
  EXPECT_EQ(a.parameter_hash(), b.parameter_hash());
}

TEST(Pretrain, ExplodingLearningRateIsReportedAsDivergence) {
  const auto images = constant_images(100, 16);
  PretrainSettings s;
  s.max_iterations = 100;
  s.eval_every = 5;
  s.patience = 3;
  s.learning_rate = 50.0;
  EXPECT_THROW(pretrain_tiny_autoencoder(images, CodecArchitecture{CodecKind::TinyAE, 4, 8}, s), TrainingDivergence);
}
