#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "sfm/autograd.hpp"
#include "sfm/image.hpp"
#include "sfm/nn.hpp"
#include "sfm/watermark.hpp"

namespace sfm {

struct ExtractorArchitecture {
  int message_length = 64;
  std::vector<int> feature_widths{256, 128};  // Conv-BN-SELU, 2x2 average pool, Conv-BN-SELU
  int pool_size = 64;                          // adaptive average pool target side
  std::vector<int> decode_widths{32, 16, 8, 4};
  std::vector<int> fc_widths{512, 128};  // hidden fully connected widths (SELU)

  void validate() const;
  nlohmann::json to_json() const;
  static ExtractorArchitecture from_json(const nlohmann::json& j);
};

struct Extraction {
  std::vector<double> probabilities;
  WatermarkBits bits;
};

// Decodes watermark probabilities from a low-frequency image.
class ExtractNet {
 public:
  // Inputs smaller than this trigger a one-time warning.
  static constexpr int kRecommendedMinSide = 128;

  ExtractNet(const ExtractorArchitecture& arch, std::uint64_t seed);
  ExtractNet(const ExtractNet&) = delete;
  ExtractNet& operator=(const ExtractNet&) = delete;
  ExtractNet(ExtractNet&&) = default;
  ExtractNet& operator=(ExtractNet&&) = default;

  const ExtractorArchitecture& architecture() const noexcept { return arch_; }

  // [N,3,H,W] (H, W >= 8) -> sigmoid probabilities [N, L].
  ag::Var forward(const ag::Var& low_batch, bool training);
  // Evaluation mode; bits are 1 where the probability is >= 0.5.
  Extraction extract(const Image& low_image);

  nn::ParamStore& params() noexcept { return store_; }
  const nn::ParamStore& params() const noexcept { return store_; }

 private:
  ExtractorArchitecture arch_;
  nn::ParamStore store_;
  std::vector<nn::ConvBnSelu> features_;
  std::vector<nn::ConvBnSelu> decode_;
  nn::Conv2d squeeze_;
  std::vector<nn::Linear> fc_;
};

WatermarkBits threshold_bits(std::span<const double> probabilities);

}  // namespace sfm
