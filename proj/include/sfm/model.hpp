#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "sfm/checkpoint.hpp"
#include "sfm/codec.hpp"
#include "sfm/embednet.hpp"
#include "sfm/extractnet.hpp"
#include "sfm/freq.hpp"

namespace sfm {

struct ModelArchitecture {
  int image_size = 512;
  ExtractorSettings extractor;
  EmbedderArchitecture embedder;
  ExtractorArchitecture extractor_net;

  int message_length() const noexcept { return embedder.message_length; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelArchitecture from_json(const nlohmann::json& j);
};

nlohmann::json to_json(const ExtractorSettings& s);
ExtractorSettings extractor_settings_from_json(const nlohmann::json& j);

// Everything needed to embed and extract: the shared frequency settings, the
// frozen codec and both trainable networks.
class Model {
 public:
  Model(const ModelArchitecture& arch, Codec codec, std::uint64_t seed);

  const ModelArchitecture& architecture() const noexcept { return arch_; }
  const ExtractorSettings& extractor() const noexcept { return arch_.extractor; }
  int message_length() const noexcept { return arch_.message_length(); }

  Codec& codec() noexcept { return codec_; }
  const Codec& codec() const noexcept { return codec_; }
  EmbedNet& embedder() noexcept { return *embedder_; }
  ExtractNet& extractor_net() noexcept { return *extractor_net_; }

  // Free-form metadata stored with the checkpoint (config fingerprint, stage reached, ...).
  nlohmann::json& metadata() noexcept { return metadata_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  // Extra arrays saved with the model (the training metric log, ...).
  std::map<std::string, Tensor>& attachments() noexcept { return attachments_; }
  const std::map<std::string, Tensor>& attachments() const noexcept { return attachments_; }

  Checkpoint to_checkpoint() const;
  // Throws LoadError on any missing or mismatched component.
  static Model from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  ModelArchitecture arch_;
  Codec codec_;
  std::unique_ptr<EmbedNet> embedder_;
  std::unique_ptr<ExtractNet> extractor_net_;
  nlohmann::json metadata_ = nlohmann::json::object();
  std::map<std::string, Tensor> attachments_;
};

}  // namespace sfm
