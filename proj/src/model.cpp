#include "sfm/model.hpp"

#include "sfm/errors.hpp"

namespace sfm {

nlohmann::json to_json(const ExtractorSettings& s) {
  return {{"kind", to_string(s.kind)},
          {"radius_fraction", s.radius_fraction},
          {"coefficient_fraction", s.coefficient_fraction},
          {"kernel_size", s.kernel_size},
          {"sigma", s.sigma}};
}

ExtractorSettings extractor_settings_from_json(const nlohmann::json& j) {
  ExtractorSettings s;
  s.kind = parse_extractor_kind(j.at("kind").get<std::string>());
  s.radius_fraction = j.at("radius_fraction").get<double>();
  s.coefficient_fraction = j.at("coefficient_fraction").get<double>();
  s.kernel_size = j.at("kernel_size").get<int>();
  s.sigma = j.at("sigma").get<double>();
  s.validate();
  return s;
}

void ModelArchitecture::validate() const {
  if (image_size < 8) throw InvalidArgument("image_size must be at least 8");
  extractor.validate();
  embedder.validate();
  extractor_net.validate();
  if (embedder.message_length != extractor_net.message_length) {
    throw InvalidArgument("embedder and extractor disagree on the watermark length");
  }
}

nlohmann::json ModelArchitecture::to_json() const {
  return {{"image_size", image_size},
          {"extractor", sfm::to_json(extractor)},
          {"embedder", embedder.to_json()},
          {"extractor_net", extractor_net.to_json()}};
}

ModelArchitecture ModelArchitecture::from_json(const nlohmann::json& j) {
  ModelArchitecture a;
  a.image_size = j.at("image_size").get<int>();
  a.extractor = extractor_settings_from_json(j.at("extractor"));
  a.embedder = EmbedderArchitecture::from_json(j.at("embedder"));
  a.extractor_net = ExtractorArchitecture::from_json(j.at("extractor_net"));
  a.validate();
  return a;
}

Model::Model(const ModelArchitecture& arch, Codec codec, std::uint64_t seed)
    : arch_(arch),
      codec_(std::move(codec)),
      embedder_(std::make_unique<EmbedNet>(arch.embedder, seed)),
      extractor_net_(std::make_unique<ExtractNet>(arch.extractor_net, seed)) {
  arch_.validate();
  codec_.check_input_geometry(arch_.image_size, arch_.image_size);
  codec_.freeze();
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.metadata["format"] = "sfm-model";
  ckpt.metadata["architecture"] = arch_.to_json();
  ckpt.metadata["model"] = metadata_;
  codec_.save_into(ckpt, "codec.");
  ckpt.metadata["codec"]["source"] = codec_.parameter_source();
  ckpt.insert("embedder.", embedder_->params().state());
  ckpt.insert("extractor.", extractor_net_->params().state());
  ckpt.insert("attach.", attachments_);
  return ckpt;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  try {
    if (ckpt.metadata.value("format", "") != "sfm-model") throw LoadError("not a model checkpoint");
    const auto arch = ModelArchitecture::from_json(ckpt.metadata.at("architecture"));
    const std::string source = ckpt.metadata.at("codec").value("source", "");
    Model m(arch, Codec::load_from(ckpt, "codec.", source), 0);
    m.embedder_->params().load_state(ckpt.with_prefix("embedder."));
    m.extractor_net_->params().load_state(ckpt.with_prefix("extractor."));
    m.attachments_ = ckpt.with_prefix("attach.");
    m.metadata_ = ckpt.metadata.value("model", nlohmann::json::object());
    return m;
  } catch (const LoadError&) {
    throw;
  } catch (const CodecLoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw LoadError(std::string("incompatible model checkpoint: ") + e.what());
  }
}

void Model::save(const std::filesystem::path& path) const { write_checkpoint(path, to_checkpoint()); }

Model Model::load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

}  // namespace sfm
