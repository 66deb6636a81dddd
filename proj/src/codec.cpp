#include "sfm/codec.hpp"

#include <algorithm>
#include <cmath>

#include "sfm/errors.hpp"
#include "sfm/optim.hpp"

namespace sfm {

namespace {

int log2_exact(int f) {
  int s = 0;
  while ((1 << s) < f) ++s;
  return s;
}

}  // namespace

LatentMap::LatentMap(Tensor values) : values_(std::move(values)) {
  if (values_.rank() != 3 || values_.dim(0) != kLatentChannels) {
    throw InvalidArgument("latent map must be 4 x H' x W', got " + shape_str(values_.shape()));
  }
}

Tensor LatentMap::as_batch() const { return values_.reshaped({1, kLatentChannels, height(), width()}); }

LatentMap LatentMap::from_batch(const Tensor& batch, int index) {
  if (batch.rank() != 4 || batch.dim(1) != kLatentChannels || index < 0 || index >= batch.dim(0)) {
    throw InvalidArgument("latent batch must be N x 4 x H' x W'");
  }
  const std::size_t n = static_cast<std::size_t>(kLatentChannels) * batch.dim(2) * batch.dim(3);
  std::vector<double> v(batch.data() + n * index, batch.data() + n * (index + 1));
  return LatentMap(Tensor({kLatentChannels, batch.dim(2), batch.dim(3)}, std::move(v)));
}

std::string to_string(CodecKind kind) {
  switch (kind) {
    case CodecKind::ExternalVAE: return "external_vae";
    case CodecKind::TinyAE: return "tiny_ae";
    case CodecKind::Identity: return "identity";
  }
  return "?";
}

CodecKind parse_codec_kind(const std::string& name) {
  if (name == "external_vae") return CodecKind::ExternalVAE;
  if (name == "tiny_ae") return CodecKind::TinyAE;
  if (name == "identity") return CodecKind::Identity;
  throw InvalidArgument("unknown codec kind '" + name + "' (expected external_vae, tiny_ae or identity)");
}

void CodecArchitecture::validate() const {
  const int f = downsample_factor;
  if (f < 1 || (f & (f - 1)) != 0 || f > 64) throw InvalidArgument("codec downsample_factor must be a power of two in [1, 64]");
  if (kind == CodecKind::Identity && f != 1) throw InvalidArgument("identity codec requires downsample_factor 1");
  if (kind != CodecKind::Identity && (width < 1 || width > 1024)) throw InvalidArgument("codec width must be in [1, 1024]");
}

nlohmann::json CodecArchitecture::to_json() const {
  return {{"kind", to_string(kind)}, {"downsample_factor", downsample_factor}, {"width", width}};
}

CodecArchitecture CodecArchitecture::from_json(const nlohmann::json& j) {
  CodecArchitecture a;
  a.kind = parse_codec_kind(j.at("kind").get<std::string>());
  a.downsample_factor = j.at("downsample_factor").get<int>();
  a.width = j.at("width").get<int>();
  a.validate();
  return a;
}

Codec::Codec(const CodecArchitecture& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  if (arch_.kind == CodecKind::Identity) return;
  Rng rng = make_rng(seed, {stable_hash("codec")});
  // Channel count doubles as resolution halves, reaching `width` at the latent side.
  const int s = log2_exact(arch_.downsample_factor);
  auto level_width = [&](int level) { return std::max(std::min(8, arch_.width), arch_.width >> level); };
  int in = 3;
  for (int i = 0; i < s; ++i) {
    const int out = level_width(s - 1 - i);
    encoder_.emplace_back(store_, "enc." + std::to_string(i), in, out, 3, 2, rng);
    in = out;
  }
  encoder_.emplace_back(store_, "enc." + std::to_string(s), in, arch_.width, 3, 1, rng);
  encoder_.emplace_back(store_, "enc.out", arch_.width, moment_channels(), 3, 1, rng);

  decoder_.emplace_back(store_, "dec.in", kLatentChannels, arch_.width, 3, 1, rng);
  in = arch_.width;
  for (int i = 0; i < s; ++i) {
    const int out = level_width(i + 1);
    decoder_.emplace_back(store_, "dec." + std::to_string(i), in, out, 3, 1, rng);
    in = out;
  }
  decoder_.emplace_back(store_, "dec.out", in, 3, 3, 1, rng);
  freeze();
}

void Codec::freeze() {
  store_.set_trainable(false);
  frozen_ = true;
}

void Codec::unfreeze() {
  store_.set_trainable(true);
  frozen_ = false;
}

void Codec::check_input_geometry(int height, int width) const {
  const int f = arch_.downsample_factor;
  if (height <= 0 || width <= 0 || height % f != 0 || width % f != 0) {
    throw InvalidArgument("image size " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by the codec downsample factor " + std::to_string(f));
  }
}

ag::Var Codec::encode(const ag::Var& batch) const {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != 3) throw InvalidArgument("codec encode expects N x 3 x H x W, got " + shape_str(s));
  check_input_geometry(s[2], s[3]);
  if (arch_.kind == CodecKind::Identity) {
    return ag::concat_channels({batch, ag::constant(Tensor({s[0], 1, s[2], s[3]}, 0.0))});
  }
  ag::Var h = ag::add_scalar(ag::scale(batch, 2.0), -1.0);
  for (std::size_t i = 0; i + 1 < encoder_.size(); ++i) h = ag::selu(encoder_[i].forward(h));
  h = encoder_.back().forward(h);
  if (moment_channels() != kLatentChannels) h = ag::slice_channels(h, 0, kLatentChannels);
  return h;
}

ag::Var Codec::decode(const ag::Var& latent) const {
  const auto& s = latent.shape();
  if (s.size() != 4 || s[1] != kLatentChannels) {
    throw InvalidArgument("codec decode expects N x 4 x H' x W', got " + shape_str(s));
  }
  if (arch_.kind == CodecKind::Identity) return ag::slice_channels(latent, 0, 3);
  ag::Var h = ag::selu(decoder_.front().forward(latent));
  int hh = s[2], ww = s[3];
  for (std::size_t i = 1; i + 1 < decoder_.size(); ++i) {
    hh *= 2;
    ww *= 2;
    h = ag::selu(decoder_[i].forward(ag::resize_bilinear(h, hh, ww)));
  }
  h = decoder_.back().forward(h);
  return ag::add_scalar(ag::scale(h, 0.5), 0.5);
}

LatentMap Codec::encode(const Image& low_image) const {
  if (low_image.channels() != 3) throw InvalidArgument("codec encode expects a 3-channel image");
  if (!low_image.all_finite()) throw InvalidInput("codec encode: non-finite input");
  return LatentMap::from_batch(encode(ag::constant(to_batch(low_image))).value(), 0);
}

Image Codec::decode(const LatentMap& latent) const {
  if (latent.values().rank() != 3) throw InvalidArgument("codec decode: malformed latent");
  return from_batch(decode(ag::constant(latent.as_batch())).value(), 0);
}

std::string Codec::parameter_hash() const { return hash_arrays(store_.state()); }

void Codec::save_into(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.insert(prefix, store_.state());
  ckpt.metadata["codec"] = {{"architecture", arch_.to_json()},
                            {"parameter_hash", parameter_hash()},
                            {"provenance", provenance_}};
}

Codec Codec::load_from(const Checkpoint& ckpt, const std::string& prefix, const std::string& source) {
  try {
    const auto& meta = ckpt.metadata.at("codec");
    Codec codec(CodecArchitecture::from_json(meta.at("architecture")));
    codec.store_.load_state(ckpt.with_prefix(prefix));
    if (meta.contains("parameter_hash") && meta.at("parameter_hash").get<std::string>() != codec.parameter_hash()) {
      throw CodecLoadError("codec parameters do not match their recorded hash");
    }
    if (meta.contains("provenance")) codec.provenance_ = meta.at("provenance");
    codec.source_ = source;
    codec.freeze();
    return codec;
  } catch (const CodecLoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw CodecLoadError(std::string("cannot load codec") + (source.empty() ? "" : " from " + source) + ": " + e.what());
  }
}

void Codec::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.metadata["format"] = "sfm-codec";
  save_into(ckpt, "codec.");
  write_checkpoint(path, ckpt);
}

Codec Codec::load(const std::filesystem::path& path) {
  Checkpoint ckpt;
  try {
    ckpt = read_checkpoint(path);
  } catch (const std::exception& e) {
    throw CodecLoadError("cannot load codec from " + path.string() + ": " + e.what());
  }
  return load_from(ckpt, "codec.", path.string());
}

void PretrainSettings::validate() const {
  if (max_iterations < 1) throw InvalidArgument("pretrain max_iterations must be positive");
  if (batch_size < 1) throw InvalidArgument("pretrain batch_size must be positive");
  if (!(learning_rate > 0.0)) throw InvalidArgument("pretrain learning_rate must be positive");
  if (eval_every < 1 || patience < 1) throw InvalidArgument("pretrain eval_every and patience must be positive");
  if (!(tolerance >= 0.0)) throw InvalidArgument("pretrain tolerance must be non-negative");
  extractor.validate();
}

nlohmann::json PretrainSettings::to_json() const {
  return {{"max_iterations", max_iterations}, {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"eval_every", eval_every},         {"patience", patience},     {"tolerance", tolerance},
          {"seed", seed},                     {"extractor", to_string(extractor.kind)}};
}

double reconstruction_rms(const Codec& codec, std::span<const Image> low_images) {
  if (low_images.empty()) throw InvalidArgument("reconstruction_rms: no images");
  constexpr std::size_t kChunk = 16;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < low_images.size(); begin += kChunk) {
    const auto chunk = low_images.subspan(begin, std::min(kChunk, low_images.size() - begin));
    const Tensor x = to_batch(chunk);
    const Tensor y = codec.decode(codec.encode(ag::constant(x))).value();
    for (std::size_t i = 0; i < x.size(); ++i) sum += (y[i] - x[i]) * (y[i] - x[i]);
    count += x.size();
  }
  return std::sqrt(sum / static_cast<double>(count));
}

Codec pretrain_tiny_autoencoder(std::span<const Image> images, const CodecArchitecture& arch,
                                const PretrainSettings& settings, PretrainResult* result,
                                const std::function<void(int, double)>& progress) {
  settings.validate();
  if (arch.kind != CodecKind::TinyAE) throw InvalidArgument("only the tiny_ae codec can be pre-trained");
  if (images.size() < 100) throw InvalidArgument("codec pre-training needs at least 100 images");

  std::vector<Image> lows;
  lows.reserve(images.size());
  for (const auto& img : images) lows.push_back(low_pass(img, settings.extractor));
  for (const auto& l : lows) {
    if (!l.same_geometry(lows.front())) throw InvalidArgument("codec pre-training images must share one size");
  }

  Codec codec(arch, settings.seed);
  codec.check_input_geometry(lows.front().height(), lows.front().width());
  codec.unfreeze();
  AdamW opt({settings.learning_rate, 0.0});
  opt.track("", codec.params().params());

  PretrainResult log;
  auto best_state = codec.params().state();
  double initial = reconstruction_rms(codec, lows);
  double best = initial;
  log.eval_iterations.push_back(0);
  log.eval_rms.push_back(initial);
  int stale = 0;
  bool improved_ever = false;

  std::uniform_int_distribution<std::size_t> pick(0, lows.size() - 1);
  int iter = 0;
  while (iter < settings.max_iterations) {
    Rng rng = make_rng(settings.seed, {stable_hash("pretrain"), static_cast<std::uint64_t>(iter)});
    std::vector<Image> batch;
    for (int b = 0; b < settings.batch_size; ++b) batch.push_back(lows[pick(rng)]);
    const ag::Var x = ag::constant(to_batch(batch));
    const ag::Var loss = ag::mean(ag::square(ag::sub(codec.decode(codec.encode(x)), x)));
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw TrainingDivergence("reconstruction", "codec pre-training loss became non-finite");
    opt.zero_grad();
    ag::backward(loss);
    opt.step();
    log.batch_loss.push_back(lv);
    ++iter;

    if (iter % settings.eval_every == 0 || iter == settings.max_iterations) {
      const double rms = reconstruction_rms(codec, lows);
      if (!std::isfinite(rms)) throw TrainingDivergence("reconstruction", "codec reconstruction became non-finite");
      if (progress) progress(iter, rms);
      if (rms < best) {
        best = rms;
        best_state = codec.params().state();
        improved_ever = true;
        stale = 0;
        log.eval_iterations.push_back(iter);
        log.eval_rms.push_back(rms);
      } else if (++stale >= settings.patience) {
        if (!improved_ever) {
          throw TrainingDivergence("reconstruction", "codec pre-training loss did not decrease within the patience window");
        }
        break;
      }
      if (best * best < settings.tolerance) break;
    }
  }

  codec.params().load_state(best_state);
  codec.freeze();
  log.final_rms = best;
  log.iterations = iter;
  codec.provenance() = {{"pretrain", settings.to_json()},
                        {"final_rms", best},
                        {"iterations", iter},
                        {"training_images", images.size()}};
  if (result) *result = std::move(log);
  return codec;
}

}  // namespace sfm
