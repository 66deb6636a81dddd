#include "sfm/pipeline.hpp"

#include "sfm/errors.hpp"
#include "sfm/losses.hpp"

namespace sfm {

namespace {

void check_message(const Model& model, const WatermarkBits& watermark) {
  if (watermark.length() != model.message_length()) {
    throw InvalidArgument("watermark has " + std::to_string(watermark.length()) + " bits, the model expects " +
                          std::to_string(model.message_length()));
  }
}

}  // namespace

EmbedTrace embed_traced(Model& model, const Image& image, const WatermarkBits& watermark) {
  check_message(model, watermark);
  if (image.channels() != 3) throw InvalidArgument("embed expects a 3-channel image");
  model.codec().check_input_geometry(image.height(), image.width());
  ag::NoGradGuard no_grad;
  EmbedTrace t;
  t.bands = decompose(image, model.extractor());
  t.latent = model.codec().encode(t.bands.low_image);
  const auto out = model.embedder().forward(ag::constant(t.latent.as_batch()),
                                            ag::constant(normalized_batch({watermark})), false);
  t.residual = LatentMap::from_batch(out.residual.value(), 0);
  t.watermarked_latent = LatentMap::from_batch(out.latent.value(), 0);
  t.watermarked_low = model.codec().decode(t.watermarked_latent);
  t.watermarked = recompose({t.watermarked_low, t.bands.high_image});
  return t;
}

Image embed(Model& model, const Image& image, const WatermarkBits& watermark) {
  return embed_traced(model, image, watermark).watermarked;
}

Extraction extract(Model& model, const Image& image) {
  if (image.channels() != 3) throw InvalidArgument("extract expects a 3-channel image");
  if (!image.all_finite()) throw InvalidInput("extract: image contains non-finite values");
  ag::NoGradGuard no_grad;
  return model.extractor_net().extract(low_pass(image, model.extractor()));
}

CleanMetrics evaluate_batch(Model& model, std::span<const Image> images, std::span<const WatermarkBits> watermarks) {
  if (images.empty()) throw InvalidArgument("evaluate_batch: no images");
  if (images.size() != watermarks.size()) throw InvalidArgument("evaluate_batch: one watermark per image is required");
  CleanMetrics m;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image marked = embed(model, images[i], watermarks[i]);
    m.bit_accuracy += bit_accuracy(watermarks[i], extract(model, marked).bits);
    m.psnr += psnr(images[i], marked);
    m.ssim += ssim(images[i], marked);
  }
  const double n = static_cast<double>(images.size());
  m.bit_accuracy /= n;
  m.psnr /= n;
  m.ssim /= n;
  return m;
}

CleanMetrics evaluate_batch(const std::filesystem::path& checkpoint, std::span<const Image> images,
                            std::span<const WatermarkBits> watermarks) {
  Model model = Model::load(checkpoint);
  return evaluate_batch(model, images, watermarks);
}

}  // namespace sfm
