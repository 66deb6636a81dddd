#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfm/autograd.hpp"
#include "sfm/checkpoint.hpp"
#include "sfm/freq.hpp"
#include "sfm/image.hpp"
#include "sfm/nn.hpp"

namespace sfm {

// 4 x H' x W' latent feature map.
class LatentMap {
 public:
  LatentMap() = default;
  explicit LatentMap(Tensor values);

  int height() const { return values_.dim(1); }
  int width() const { return values_.dim(2); }
  const Tensor& values() const noexcept { return values_; }

  // [1, 4, H', W'] view for the network code.
  Tensor as_batch() const;
  static LatentMap from_batch(const Tensor& batch, int index);

  bool operator==(const LatentMap& o) const { return values_.shape() == o.values_.shape() && values_.storage() == o.values_.storage(); }

 private:
  Tensor values_;
};

constexpr int kLatentChannels = 4;

enum class CodecKind { ExternalVAE, TinyAE, Identity };

std::string to_string(CodecKind kind);
CodecKind parse_codec_kind(const std::string& name);

struct CodecArchitecture {
  CodecKind kind = CodecKind::TinyAE;
  int downsample_factor = 4;  // power of two; Identity requires 1
  int width = 32;             // hidden channels of the conv stacks

  void validate() const;
  nlohmann::json to_json() const;
  static CodecArchitecture from_json(const nlohmann::json& j);
};

// Frozen latent autoencoder. TinyAE and ExternalVAE share one convolutional
// family: a strided SELU encoder ending in a 3x3 conv to the latent (the
// ExternalVAE encoder emits 8 moment channels, of which the first 4, the mean,
// are used), and a decoder that doubles resolution with bilinear upsampling
// followed by 3x3 SELU convolutions. Identity lifts RGB to 4 channels with a
// zero fourth channel.
//
// Inference is read-only and may run concurrently.
class Codec {
 public:
  explicit Codec(const CodecArchitecture& arch, std::uint64_t seed = 0);
  Codec(const Codec&) = delete;
  Codec& operator=(const Codec&) = delete;
  Codec(Codec&&) = default;
  Codec& operator=(Codec&&) = default;

  static Codec identity() { return Codec(CodecArchitecture{CodecKind::Identity, 1, 1}); }

  CodecKind kind() const noexcept { return arch_.kind; }
  const CodecArchitecture& architecture() const noexcept { return arch_; }
  int downsample_factor() const noexcept { return arch_.downsample_factor; }
  bool frozen() const noexcept { return frozen_; }
  void freeze();
  void unfreeze();

  // Where the parameters came from (a file path), empty when built in memory.
  const std::string& parameter_source() const noexcept { return source_; }
  // Free-form record of how the parameters were produced (pre-training metrics...).
  nlohmann::json& provenance() noexcept { return provenance_; }
  const nlohmann::json& provenance() const noexcept { return provenance_; }

  LatentMap encode(const Image& low_image) const;
  Image decode(const LatentMap& latent) const;

  // Batched, differentiable forms: [N,3,H,W] -> [N,4,H/f,W/f] -> [N,3,H,W].
  // Gradients reach the inputs; parameters only when unfrozen.
  ag::Var encode(const ag::Var& batch) const;
  ag::Var decode(const ag::Var& latent) const;

  void check_input_geometry(int height, int width) const;

  nn::ParamStore& params() noexcept { return store_; }
  const nn::ParamStore& params() const noexcept { return store_; }
  // SHA-256 over every parameter array; the freeze contract is checked against it.
  std::string parameter_hash() const;

  // Serialises into (metadata, arrays) under `prefix`, so model checkpoints can embed it.
  void save_into(Checkpoint& ckpt, const std::string& prefix) const;
  static Codec load_from(const Checkpoint& ckpt, const std::string& prefix, const std::string& source = "");
  void save(const std::filesystem::path& path) const;
  // Throws CodecLoadError for a missing, corrupt or incompatible file.
  static Codec load(const std::filesystem::path& path);

 private:
  int moment_channels() const noexcept { return arch_.kind == CodecKind::ExternalVAE ? 2 * kLatentChannels : kLatentChannels; }

  CodecArchitecture arch_;
  nn::ParamStore store_;
  std::vector<nn::Conv2d> encoder_;
  std::vector<nn::Conv2d> decoder_;
  bool frozen_ = true;
  std::string source_;
  nlohmann::json provenance_ = nlohmann::json::object();
};

struct PretrainSettings {
  int max_iterations = 4000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  int eval_every = 100;
  // Evaluations without improvement before stopping.
  int patience = 5;
  // Stops early once the reconstruction MSE falls below this.
  double tolerance = 1e-7;
  std::uint64_t seed = 0;
  ExtractorSettings extractor;

  void validate() const;
  nlohmann::json to_json() const;
};

struct PretrainResult {
  // Full-dataset reconstruction RMS at each evaluation, ending at the kept
  // (best) parameters.
  std::vector<int> eval_iterations;
  std::vector<double> eval_rms;
  std::vector<double> batch_loss;
  double final_rms = 0.0;
  int iterations = 0;
};

// Trains a TinyAE to reconstruct the low-frequency bands of `images`. The
// parameters with the lowest full-dataset RMS are kept, so the logged RMS
// curve is non-increasing. Stopping after `patience` evaluations without any
// improvement over the initial RMS throws TrainingDivergence, as does a
// non-finite loss. The returned codec is frozen.
Codec pretrain_tiny_autoencoder(std::span<const Image> images, const CodecArchitecture& arch,
                                const PretrainSettings& settings, PretrainResult* result = nullptr,
                                const std::function<void(int, double)>& progress = {});

// RMS of decode(encode(low)) - low over a set of low-band images.
double reconstruction_rms(const Codec& codec, std::span<const Image> low_images);

}  // namespace sfm
