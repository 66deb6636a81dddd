#include "sfm/embednet.hpp"

#include "sfm/codec.hpp"
#include "sfm/errors.hpp"

namespace sfm {

void EmbedderArchitecture::validate() const {
  auto fail = [](const std::string& m) { throw InternalConsistencyError("embedder architecture: " + m); };
  if (message_length < 1) fail("message_length must be positive");
  if (hidden_width < 1 || grid < 1 || channels < 1) fail("widths must be positive");
  if (fused_widths.size() != 4 || watermark_widths.size() != 4) fail("exactly four fusion stages are required");
  if (aux_widths.size() != fused_widths.size() - 1) fail("one auxiliary watermark block per fusion stage after the first");
  for (int w : fused_widths) if (w < 1) fail("fused widths must be positive");
  for (int w : watermark_widths) if (w < 1) fail("watermark widths must be positive");
  for (int w : aux_widths) if (w < 1) fail("auxiliary widths must be positive");
  if (fused_widths.back() != 4 || watermark_widths.back() != 4) fail("both streams must end with 4 channels");
}

nlohmann::json EmbedderArchitecture::to_json() const {
  return {{"message_length", message_length}, {"hidden_width", hidden_width}, {"grid", grid},
          {"channels", channels},             {"aux_widths", aux_widths},     {"fused_widths", fused_widths},
          {"watermark_widths", watermark_widths}};
}

EmbedderArchitecture EmbedderArchitecture::from_json(const nlohmann::json& j) {
  EmbedderArchitecture a;
  a.message_length = j.at("message_length").get<int>();
  a.hidden_width = j.at("hidden_width").get<int>();
  a.grid = j.at("grid").get<int>();
  a.channels = j.at("channels").get<int>();
  a.aux_widths = j.at("aux_widths").get<std::vector<int>>();
  a.fused_widths = j.at("fused_widths").get<std::vector<int>>();
  a.watermark_widths = j.at("watermark_widths").get<std::vector<int>>();
  a.validate();
  return a;
}

EmbedNet::EmbedNet(const EmbedderArchitecture& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  Rng rng = make_rng(seed, {stable_hash("embednet")});
  const int c = arch_.channels;
  fc1_ = nn::Linear(store_, "wm.fc1", arch_.message_length, arch_.hidden_width, rng);
  fc2_ = nn::Linear(store_, "wm.fc2", arch_.hidden_width, arch_.grid * arch_.grid, rng);
  lift_ = nn::Conv2d(store_, "wm.lift", 1, c, 1, 1, rng);
  primary_ = nn::ConvBnSelu(store_, "wm.block0", c, c, rng);
  int in = c;
  for (std::size_t i = 0; i < arch_.aux_widths.size(); ++i) {
    const int w = arch_.aux_widths[i];
    aux_.emplace_back(store_, "wm.block" + std::to_string(i + 1), in, w, rng);
    aux_adapt_.emplace_back(store_, "fuse.adapt" + std::to_string(i + 1), w, arch_.watermark_widths[i], 1, 1, rng);
    in = w;
  }
  latent_block_ = nn::ConvBnSelu(store_, "latent.block", kLatentChannels, c, rng);
  int fused_in = 2 * c, wm_in = c;
  for (std::size_t k = 0; k < arch_.fused_widths.size(); ++k) {
    fused_blocks_.emplace_back(store_, "fuse.stage" + std::to_string(k) + ".fused", fused_in, arch_.fused_widths[k], rng);
    watermark_blocks_.emplace_back(store_, "fuse.stage" + std::to_string(k) + ".wm", wm_in, arch_.watermark_widths[k], rng);
    fused_in = arch_.fused_widths[k] + arch_.watermark_widths[k];
    wm_in = arch_.watermark_widths[k];
  }
  if (fused_in != 2 * kLatentChannels) throw InternalConsistencyError("embedder: final concat must have 8 channels");
  out_ = nn::Conv2d(store_, "fuse.out", fused_in, kLatentChannels, 1, 1, rng, /*zero_init=*/true);
}

void EmbedNet::zero_residual() {
  for (auto& [name, p] : store_.params()) {
    if (name.rfind("fuse.out.", 0) == 0) p.mutable_value().fill(0.0);
  }
}

void EmbedNet::check_inputs(const ag::Var& latent, const ag::Var& message) const {
  const auto& ls = latent.shape();
  const auto& ms = message.shape();
  if (ls.size() != 4 || ls[1] != kLatentChannels) throw InvalidArgument("embed: latent must be N x 4 x H' x W', got " + shape_str(ls));
  if (ms.size() != 2 || ms[1] != arch_.message_length) {
    throw InvalidArgument("embed: watermark must be N x " + std::to_string(arch_.message_length) + ", got " + shape_str(ms));
  }
  if (ms[0] != ls[0]) throw InvalidArgument("embed: latent and watermark batch sizes differ");
}

WatermarkFeatures EmbedNet::watermark_branch(const ag::Var& message, bool training) {
  const auto& ms = message.shape();
  if (ms.size() != 2 || ms[1] != arch_.message_length) {
    throw InvalidArgument("watermark length " + (ms.size() == 2 ? std::to_string(ms[1]) : shape_str(ms)) +
                          " does not match the embedder (" + std::to_string(arch_.message_length) + ")");
  }
  ag::Var h = ag::selu(fc1_.forward(message));
  h = ag::selu(fc2_.forward(h));
  h = ag::reshape(h, {ms[0], 1, arch_.grid, arch_.grid});
  WatermarkFeatures f;
  f.primary = primary_.forward(lift_.forward(h), training);
  ag::Var a = f.primary;
  for (auto& block : aux_) {
    a = block.forward(a, training);
    f.aux.push_back(a);
  }
  return f;
}

ag::Var EmbedNet::latent_branch(const ag::Var& latent, bool training) {
  return latent_block_.forward(ag::resize_bilinear(latent, arch_.grid, arch_.grid), training);
}

ag::Var EmbedNet::fuse(const ag::Var& latent_features, const WatermarkFeatures& wm, bool training) {
  if (latent_features.shape() != wm.primary.shape() || wm.aux.size() != aux_.size()) {
    throw InternalConsistencyError("fuse: branch features disagree in shape");
  }
  ag::Var fused = ag::concat_channels({latent_features, wm.primary});
  ag::Var stream = wm.primary;
  ag::Var fused_out, stream_out;
  for (std::size_t k = 0; k < fused_blocks_.size(); ++k) {
    if (k > 0) stream = ag::add(stream, aux_adapt_[k - 1].forward(wm.aux[k - 1]));
    fused_out = fused_blocks_[k].forward(fused, training);
    stream_out = watermark_blocks_[k].forward(stream, training);
    fused = ag::concat_channels({fused_out, stream_out});
    stream = stream_out;
  }
  return out_.forward(fused);
}

ag::Var EmbedNet::residual(const ag::Var& latent, const ag::Var& message, bool training) {
  check_inputs(latent, message);
  const auto& ls = latent.shape();
  ag::Var z = fuse(latent_branch(latent, training), watermark_branch(message, training), training);
  return ag::resize_bilinear(z, ls[2], ls[3]);
}

EmbedOutput EmbedNet::forward(const ag::Var& latent, const ag::Var& message, bool training) {
  EmbedOutput out;
  out.residual = residual(latent, message, training);
  out.latent = ag::add(latent, ag::scale(out.residual, kAlpha));
  return out;
}

LatentMap embed_latent(EmbedNet& net, const LatentMap& latent, const WatermarkBits& watermark) {
  if (watermark.length() != net.architecture().message_length) {
    throw InvalidArgument("watermark length " + std::to_string(watermark.length()) + " does not match the embedder (" +
                          std::to_string(net.architecture().message_length) + ")");
  }
  const auto out = net.forward(ag::constant(latent.as_batch()), ag::constant(normalized_batch({watermark})), false);
  return LatentMap::from_batch(out.latent.value(), 0);
}

}  // namespace sfm
