#include "sfm/extractnet.hpp"

#include "sfm/errors.hpp"
#include "sfm/log.hpp"

namespace sfm {

void ExtractorArchitecture::validate() const {
  auto fail = [](const std::string& m) { throw InternalConsistencyError("extractor architecture: " + m); };
  if (message_length < 1) fail("message_length must be positive");
  if (feature_widths.size() != 2) fail("exactly two feature blocks are required");
  if (pool_size < 1) fail("pool_size must be positive");
  if (decode_widths.empty()) fail("at least one decoding block is required");
  if (fc_widths.size() != 2) fail("exactly two hidden fully connected layers are required");
  for (const auto* v : {&feature_widths, &decode_widths, &fc_widths}) {
    for (int w : *v) if (w < 1) fail("widths must be positive");
  }
}

nlohmann::json ExtractorArchitecture::to_json() const {
  return {{"message_length", message_length}, {"feature_widths", feature_widths}, {"pool_size", pool_size},
          {"decode_widths", decode_widths},   {"fc_widths", fc_widths}};
}

ExtractorArchitecture ExtractorArchitecture::from_json(const nlohmann::json& j) {
  ExtractorArchitecture a;
  a.message_length = j.at("message_length").get<int>();
  a.feature_widths = j.at("feature_widths").get<std::vector<int>>();
  a.pool_size = j.at("pool_size").get<int>();
  a.decode_widths = j.at("decode_widths").get<std::vector<int>>();
  a.fc_widths = j.at("fc_widths").get<std::vector<int>>();
  a.validate();
  return a;
}

ExtractNet::ExtractNet(const ExtractorArchitecture& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  Rng rng = make_rng(seed, {stable_hash("extractnet")});
  features_.emplace_back(store_, "feat0", 3, arch_.feature_widths[0], rng);
  features_.emplace_back(store_, "feat1", arch_.feature_widths[0], arch_.feature_widths[1], rng);
  int in = arch_.feature_widths[1];
  for (std::size_t i = 0; i < arch_.decode_widths.size(); ++i) {
    decode_.emplace_back(store_, "dec" + std::to_string(i), in, arch_.decode_widths[i], rng);
    in = arch_.decode_widths[i];
  }
  squeeze_ = nn::Conv2d(store_, "squeeze", in, 1, 1, 1, rng);
  int width = arch_.pool_size * arch_.pool_size;
  for (std::size_t i = 0; i < arch_.fc_widths.size(); ++i) {
    fc_.emplace_back(store_, "fc" + std::to_string(i), width, arch_.fc_widths[i], rng);
    width = arch_.fc_widths[i];
  }
  fc_.emplace_back(store_, "fc" + std::to_string(arch_.fc_widths.size()), width, arch_.message_length, rng);
}

ag::Var ExtractNet::forward(const ag::Var& low_batch, bool training) {
  const auto& s = low_batch.shape();
  if (s.size() != 4 || s[1] != 3) throw InvalidArgument("extractor expects N x 3 x H x W, got " + shape_str(s));
  if (s[2] < 8 || s[3] < 8) throw InvalidArgument("extractor input must be at least 8x8");
  if (!low_batch.value().all_finite()) throw InvalidInput("extractor: non-finite input");
  if (s[2] < kRecommendedMinSide || s[3] < kRecommendedMinSide) {
    warn_once("extractnet.small_input", "extraction input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                                            " is below the recommended 128x128");
  }
  ag::Var h = features_[0].forward(low_batch, training);
  h = ag::avg_pool2(h);
  h = features_[1].forward(h, training);
  h = ag::adaptive_avg_pool(h, arch_.pool_size, arch_.pool_size);
  for (auto& block : decode_) h = block.forward(h, training);
  h = squeeze_.forward(h);
  h = ag::reshape(h, {s[0], arch_.pool_size * arch_.pool_size});
  for (std::size_t i = 0; i + 1 < fc_.size(); ++i) h = ag::selu(fc_[i].forward(h));
  return ag::sigmoid(fc_.back().forward(h));
}

WatermarkBits threshold_bits(std::span<const double> probabilities) {
  std::vector<std::uint8_t> bits;
  bits.reserve(probabilities.size());
  for (double p : probabilities) bits.push_back(p >= 0.5 ? 1 : 0);
  return WatermarkBits(std::move(bits));
}

Extraction ExtractNet::extract(const Image& low_image) {
  if (!low_image.all_finite()) throw InvalidInput("extractor: non-finite input");
  const Tensor p = forward(ag::constant(to_batch(low_image)), false).value();
  Extraction out;
  out.probabilities.assign(p.data(), p.data() + p.size());
  out.bits = threshold_bits(out.probabilities);
  return out;
}

}  // namespace sfm
