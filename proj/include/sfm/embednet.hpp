#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "sfm/autograd.hpp"
#include "sfm/nn.hpp"
#include "sfm/watermark.hpp"

namespace sfm {

struct EmbedderArchitecture {
  int message_length = 64;
  int hidden_width = 1024;  // first fully connected layer
  int grid = 64;            // second layer emits grid*grid values, reshaped to 1 x grid x grid
  int channels = 128;       // width of both branch outputs
  // Watermark-branch blocks after the primary one; they feed fusion stages 2..4.
  std::vector<int> aux_widths{32, 16, 8};
  // Per-stage output widths of the fused and watermark streams.
  std::vector<int> fused_widths{128, 64, 32, 4};
  std::vector<int> watermark_widths{64, 32, 16, 4};

  // Throws InternalConsistencyError when the stage schedule does not line up.
  void validate() const;
  nlohmann::json to_json() const;
  static EmbedderArchitecture from_json(const nlohmann::json& j);
};

struct WatermarkFeatures {
  ag::Var primary;           // [N, channels, grid, grid]
  std::vector<ag::Var> aux;  // one per aux width
};

struct EmbedOutput {
  ag::Var latent;    // latent + alpha * residual
  ag::Var residual;  // Z_fuse at the latent resolution
};

// Two-branch embedding network: a watermark branch (FC-SELU, FC-SELU, reshape,
// 1x1 conv, Conv-BN-SELU blocks) and a latent branch (one Conv-BN-SELU block)
// merged by four two-stream fusion stages and a 1x1 conv to the 4-channel
// residual. Latents whose side differs from `grid` are resampled bilinearly.
class EmbedNet {
 public:
  static constexpr double kAlpha = 0.2;

  EmbedNet(const EmbedderArchitecture& arch, std::uint64_t seed);
  EmbedNet(const EmbedNet&) = delete;
  EmbedNet& operator=(const EmbedNet&) = delete;
  EmbedNet(EmbedNet&&) = default;
  EmbedNet& operator=(EmbedNet&&) = default;

  const EmbedderArchitecture& architecture() const noexcept { return arch_; }

  // `message`: [N, L] normalised bits (bit - 0.5).
  WatermarkFeatures watermark_branch(const ag::Var& message, bool training);
  ag::Var latent_branch(const ag::Var& latent, bool training);
  // Residual at grid resolution.
  ag::Var fuse(const ag::Var& latent_features, const WatermarkFeatures& watermark, bool training);
  ag::Var residual(const ag::Var& latent, const ag::Var& message, bool training);
  EmbedOutput forward(const ag::Var& latent, const ag::Var& message, bool training);

  nn::ParamStore& params() noexcept { return store_; }
  const nn::ParamStore& params() const noexcept { return store_; }
  // Zeroes the output convolution, making the residual identically zero.
  void zero_residual();

 private:
  void check_inputs(const ag::Var& latent, const ag::Var& message) const;

  EmbedderArchitecture arch_;
  nn::ParamStore store_;
  nn::Linear fc1_, fc2_;
  nn::Conv2d lift_;
  nn::ConvBnSelu primary_;
  std::vector<nn::ConvBnSelu> aux_;
  std::vector<nn::Conv2d> aux_adapt_;
  nn::ConvBnSelu latent_block_;
  std::vector<nn::ConvBnSelu> fused_blocks_, watermark_blocks_;
  nn::Conv2d out_;
};

// Embeds one latent map (evaluation mode).
class LatentMap;
LatentMap embed_latent(EmbedNet& net, const LatentMap& latent, const WatermarkBits& watermark);

}  // namespace sfm
