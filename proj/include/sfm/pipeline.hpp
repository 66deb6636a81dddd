#pragma once

#include <filesystem>
#include <span>

#include "sfm/codec.hpp"
#include "sfm/extractnet.hpp"
#include "sfm/freq.hpp"
#include "sfm/image.hpp"
#include "sfm/model.hpp"
#include "sfm/watermark.hpp"

namespace sfm {

// Intermediate products of one embedding, for inspection and tests.
struct EmbedTrace {
  BandPair bands;
  LatentMap latent;
  LatentMap residual;  // Z_fuse
  LatentMap watermarked_latent;
  Image watermarked_low;  // decoder output, unclamped
  Image watermarked;      // clamp(watermarked_low + high, 0, 1)
};

// decompose -> encode the low band -> embed -> decode -> add the original
// high band and clamp. Throws InvalidArgument when the image size is not
// divisible by the codec's downsample factor or the message length differs.
Image embed(Model& model, const Image& image, const WatermarkBits& watermark);
EmbedTrace embed_traced(Model& model, const Image& image, const WatermarkBits& watermark);

// Low band with the model's frequency settings, then the extraction network.
Extraction extract(Model& model, const Image& image);

struct CleanMetrics {
  double bit_accuracy = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

// Mean metrics of embed -> extract on clean images.
CleanMetrics evaluate_batch(Model& model, std::span<const Image> images, std::span<const WatermarkBits> watermarks);
// Loads the checkpoint first; incompatibilities surface as LoadError.
CleanMetrics evaluate_batch(const std::filesystem::path& checkpoint, std::span<const Image> images,
                            std::span<const WatermarkBits> watermarks);

}  // namespace sfm
