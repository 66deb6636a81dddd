#include "sfm/config.hpp"

#include <fmt/format.h>

#include <fstream>

#include "sfm/errors.hpp"

namespace sfm {

namespace {

using nlohmann::json;

const char* type_name(ConfigType t) {
  switch (t) {
    case ConfigType::Int: return "integer";
    case ConfigType::Number: return "number";
    case ConfigType::String: return "string";
    case ConfigType::Bool: return "boolean";
    case ConfigType::IntList: return "integer list";
    case ConfigType::NumberList: return "number list";
    case ConfigType::StringList: return "string list";
  }
  return "?";
}

json default_grid_labels() {
  json out = json::array();
  for (const auto& a : default_attack_grid()) out.push_back(a.label());
  return out;
}

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

// Returns the canonical stored form, or throws InvalidArgument.
json coerce(const ConfigKey& key, const json& v) {
  auto bad = [&]() -> json {
    throw InvalidArgument(fmt::format("config key '{}' expects a {}, got {}", key.name, type_name(key.type), v.dump()));
  };
  auto is_int = [](const json& x) { return x.is_number_integer() || x.is_number_unsigned(); };
  switch (key.type) {
    case ConfigType::Int:
      if (!is_int(v)) return bad();
      return v;
    case ConfigType::Number:
      if (!v.is_number()) return bad();
      return v.get<double>();
    case ConfigType::String:
      if (!v.is_string()) return bad();
      return v;
    case ConfigType::Bool:
      if (!v.is_boolean()) return bad();
      return v;
    case ConfigType::IntList: {
      if (!v.is_array()) return bad();
      for (const auto& x : v) if (!is_int(x)) return bad();
      return v;
    }
    case ConfigType::NumberList: {
      if (!v.is_array()) return bad();
      json out = json::array();
      for (const auto& x : v) {
        if (!x.is_number()) return bad();
        out.push_back(x.get<double>());
      }
      return out;
    }
    case ConfigType::StringList: {
      if (!v.is_array()) return bad();
      for (const auto& x : v) if (!x.is_string()) return bad();
      return v;
    }
  }
  return bad();
}

LossWeights weights_from(const std::vector<double>& v, const std::string& key) {
  if (v.size() != 4) throw InvalidArgument("config key '" + key + "' needs four weights (watermark, l2, ssim, jnd)");
  LossWeights w{v[0], v[1], v[2], v[3]};
  w.validate();
  return w;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", ConfigType::Int, 0, "Base seed for every random stream."},
      {"output_dir", ConfigType::String, "out", "Directory receiving every artifact."},
      {"image_size", ConfigType::Int, 512, "Square side images are resized to (bilinear)."},
      {"watermark.length", ConfigType::Int, 64, "Watermark length L in bits."},
      {"dataset.train_dir", ConfigType::String, "", "Training (and stability) image tree."},
      {"dataset.eval_dir", ConfigType::String, "", "Evaluation image tree; empty uses dataset.train_dir."},
      {"dataset.train_limit", ConfigType::Int, 0, "Use at most this many training images (0 = all)."},
      {"dataset.eval_limit", ConfigType::Int, 0, "Use at most this many evaluation images (0 = all)."},
      {"extractor.kind", ConfigType::String, "fft", "Low-frequency extractor: fft, dct or gau."},
      {"extractor.radius_fraction", ConfigType::Number, 0.20, "FFT pass-band radius as a fraction of min(H,W)/2."},
      {"extractor.coefficient_fraction", ConfigType::Number, 0.15, "DCT: fraction of lowest coefficients kept per axis."},
      {"extractor.kernel_size", ConfigType::Int, 15, "GAU: odd Gaussian kernel size."},
      {"extractor.sigma", ConfigType::Number, 2.5, "GAU: Gaussian sigma."},
      {"codec.kind", ConfigType::String, "tiny_ae", "Latent codec: external_vae, tiny_ae or identity."},
      {"codec.downsample_factor", ConfigType::Int, 0, "Latent downsampling; 0 picks 8 (external_vae), 4 (tiny_ae) or 1 (identity)."},
      {"codec.width", ConfigType::Int, 32, "Hidden width of a freshly pre-trained tiny_ae."},
      {"codec.path", ConfigType::String, "", "Codec parameter file; empty tiny_ae paths are pre-trained on the training set."},
      {"codec.pretrain.max_iterations", ConfigType::Int, 4000, "tiny_ae pre-training iteration cap."},
      {"codec.pretrain.batch_size", ConfigType::Int, 8, "tiny_ae pre-training batch size."},
      {"codec.pretrain.learning_rate", ConfigType::Number, 1e-3, "tiny_ae pre-training learning rate."},
      {"codec.pretrain.eval_every", ConfigType::Int, 100, "Iterations between full-dataset reconstruction checks."},
      {"codec.pretrain.patience", ConfigType::Int, 5, "Checks without improvement before stopping."},
      {"codec.pretrain.tolerance", ConfigType::Number, 1e-7, "Stop once the reconstruction MSE is below this."},
      {"embedder.hidden_width", ConfigType::Int, 1024, "Width of the first watermark fully connected layer."},
      {"embedder.grid", ConfigType::Int, 64, "Side of the reshaped watermark map (second layer emits grid^2)."},
      {"embedder.channels", ConfigType::Int, 128, "Channels of both branch outputs."},
      {"embedder.aux_widths", ConfigType::IntList, json::array({32, 16, 8}), "Watermark blocks feeding fusion stages 2-4."},
      {"embedder.fused_widths", ConfigType::IntList, json::array({128, 64, 32, 4}), "Fused-stream stage widths."},
      {"embedder.watermark_widths", ConfigType::IntList, json::array({64, 32, 16, 4}), "Watermark-stream stage widths."},
      {"extract_net.feature_widths", ConfigType::IntList, json::array({256, 128}), "Feature block widths."},
      {"extract_net.pool_size", ConfigType::Int, 64, "Adaptive pooling target side."},
      {"extract_net.decode_widths", ConfigType::IntList, json::array({32, 16, 8, 4}), "Decoding block widths."},
      {"extract_net.fc_widths", ConfigType::IntList, json::array({512, 128}), "Hidden fully connected widths."},
      {"train.learning_rate", ConfigType::Number, 1e-4, "AdamW learning rate."},
      {"train.weight_decay", ConfigType::Number, 1e-2, "AdamW decoupled weight decay."},
      {"train.batch_size", ConfigType::Int, 2, "Images per iteration."},
      {"train.stage1_weights", ConfigType::NumberList, json::array({5.0, 0.1, 5.0, 10.0}), "Stage-1 weights (watermark, l2, ssim, jnd)."},
      {"train.stage2_weights", ConfigType::NumberList, json::array({5.0, 1.0, 10.0, 50.0}), "Stage-2 weights (watermark, l2, ssim, jnd)."},
      {"train.stage_switch_threshold", ConfigType::Number, 0.05, "Smoothed watermark loss that ends stage 1."},
      {"train.smoothing_window", ConfigType::Int, 100, "Moving-average window of the watermark loss."},
      {"train.max_iterations", ConfigType::Int, 5000, "Stage-1 iteration budget."},
      {"train.stage2_iterations", ConfigType::Int, 0, "Stage-2 budget; 0 repeats the stage-1 count."},
      {"train.eval_every", ConfigType::Int, 100, "Iterations between held-out bit-accuracy checks (0 = never)."},
      {"train.holdout_size", ConfigType::Int, 8, "Images held out from the end of the training set."},
      {"train.snapshot_every", ConfigType::Int, 500, "Iterations between resumable snapshots (0 = end only)."},
      {"model.checkpoint", ConfigType::String, "", "Model checkpoint; empty uses <output_dir>/model.sfm."},
      {"attack.grid", ConfigType::StringList, default_grid_labels(), "Evaluation attack labels (gn:0.1, jpeg:50, rd:0.1-0.3, ...)."},
      {"attack.external_commands", ConfigType::StringList, json::array(), "External editing commands using {input} and {output}."},
      {"attack.external_timeout_ms", ConfigType::Int, 120000, "Timeout per external command run."},
      {"stability.attacks", ConfigType::StringList, json::array({"gn:0.1", "jpeg:50", "gf:3"}), "Attacks of the stability study."},
      {"stability.image_limit", ConfigType::Int, 50, "Images used by the stability study (0 = all)."},
      {"evaluate.chart", ConfigType::Bool, true, "Also write an SVG bar chart."},
  };
  return keys;
}

std::string config_documentation() {
  std::string out = "| key | type | default | meaning |\n|---|---|---|---|\n";
  for (const auto& k : config_keys()) {
    out += fmt::format("| `{}` | {} | `{}` | {} |\n", k.name, type_name(k.type), k.default_value.dump(), k.doc);
  }
  return out;
}

RunConfig::RunConfig() : values_(json::object()) {
  for (const auto& k : config_keys()) values_[k.name] = coerce(k, k.default_value);
}

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidArgument("config must be a JSON object of dotted keys");
  RunConfig c;
  for (const auto& [key, value] : doc.items()) c.set_json(key, value);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void RunConfig::set_json(const std::string& key, const json& value) {
  const ConfigKey* k = find_key(key);
  if (!k) throw InvalidArgument("unknown config key '" + key + "'");
  json v = coerce(*k, value);
  if (key == "attack.grid") {
    for (const auto& label : v) {
      if (label == "external") throw InvalidArgument("external attacks are configured through attack.external_commands");
      AttackSpec::parse(label.get<std::string>());
    }
  }
  values_[key] = std::move(v);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = value;
  }
  const ConfigKey* k = find_key(key);
  if (k && k->type == ConfigType::String && !v.is_string()) v = value;
  set_json(key, v);
}

std::string RunConfig::fingerprint() const { return sha256_hex(values_.dump()); }

int RunConfig::get_int(const std::string& key) const { return values_.at(key).get<int>(); }
double RunConfig::get_number(const std::string& key) const { return values_.at(key).get<double>(); }
std::string RunConfig::get_string(const std::string& key) const { return values_.at(key).get<std::string>(); }
bool RunConfig::get_bool(const std::string& key) const { return values_.at(key).get<bool>(); }
std::vector<int> RunConfig::get_int_list(const std::string& key) const { return values_.at(key).get<std::vector<int>>(); }
std::vector<double> RunConfig::get_number_list(const std::string& key) const {
  return values_.at(key).get<std::vector<double>>();
}
std::vector<std::string> RunConfig::get_string_list(const std::string& key) const {
  return values_.at(key).get<std::vector<std::string>>();
}

std::uint64_t RunConfig::seed() const {
  const auto& v = values_.at("seed");
  if (v.is_number_integer() && v.get<long long>() < 0) throw InvalidArgument("seed must be non-negative");
  return v.get<std::uint64_t>();
}

std::filesystem::path RunConfig::output_dir() const { return get_string("output_dir"); }

ExtractorSettings RunConfig::extractor() const {
  ExtractorSettings s;
  s.kind = parse_extractor_kind(get_string("extractor.kind"));
  s.radius_fraction = get_number("extractor.radius_fraction");
  s.coefficient_fraction = get_number("extractor.coefficient_fraction");
  s.kernel_size = get_int("extractor.kernel_size");
  s.sigma = get_number("extractor.sigma");
  s.validate();
  return s;
}

CodecArchitecture RunConfig::codec_architecture() const {
  CodecArchitecture a;
  a.kind = parse_codec_kind(get_string("codec.kind"));
  a.downsample_factor = get_int("codec.downsample_factor");
  if (a.downsample_factor == 0) {
    a.downsample_factor = a.kind == CodecKind::ExternalVAE ? 8 : a.kind == CodecKind::TinyAE ? 4 : 1;
  }
  a.width = a.kind == CodecKind::Identity ? 1 : get_int("codec.width");
  a.validate();
  return a;
}

PretrainSettings RunConfig::pretrain() const {
  PretrainSettings p;
  p.max_iterations = get_int("codec.pretrain.max_iterations");
  p.batch_size = get_int("codec.pretrain.batch_size");
  p.learning_rate = get_number("codec.pretrain.learning_rate");
  p.eval_every = get_int("codec.pretrain.eval_every");
  p.patience = get_int("codec.pretrain.patience");
  p.tolerance = get_number("codec.pretrain.tolerance");
  p.seed = seed();
  p.extractor = extractor();
  p.validate();
  return p;
}

ModelArchitecture RunConfig::model_architecture() const {
  ModelArchitecture a;
  a.image_size = get_int("image_size");
  a.extractor = extractor();
  a.embedder.message_length = get_int("watermark.length");
  a.embedder.hidden_width = get_int("embedder.hidden_width");
  a.embedder.grid = get_int("embedder.grid");
  a.embedder.channels = get_int("embedder.channels");
  a.embedder.aux_widths = get_int_list("embedder.aux_widths");
  a.embedder.fused_widths = get_int_list("embedder.fused_widths");
  a.embedder.watermark_widths = get_int_list("embedder.watermark_widths");
  a.extractor_net.message_length = get_int("watermark.length");
  a.extractor_net.feature_widths = get_int_list("extract_net.feature_widths");
  a.extractor_net.pool_size = get_int("extract_net.pool_size");
  a.extractor_net.decode_widths = get_int_list("extract_net.decode_widths");
  a.extractor_net.fc_widths = get_int_list("extract_net.fc_widths");
  try {
    a.validate();
  } catch (const InternalConsistencyError& e) {
    throw InvalidArgument(e.what());
  }
  return a;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.learning_rate = get_number("train.learning_rate");
  t.weight_decay = get_number("train.weight_decay");
  t.batch_size = get_int("train.batch_size");
  t.image_size = get_int("image_size");
  t.watermark_length = get_int("watermark.length");
  t.stage1_weights = weights_from(get_number_list("train.stage1_weights"), "train.stage1_weights");
  t.stage2_weights = weights_from(get_number_list("train.stage2_weights"), "train.stage2_weights");
  t.stage_switch_threshold = get_number("train.stage_switch_threshold");
  t.smoothing_window = get_int("train.smoothing_window");
  t.max_iterations = get_int("train.max_iterations");
  t.stage2_iterations = get_int("train.stage2_iterations");
  t.eval_every = get_int("train.eval_every");
  t.holdout_size = get_int("train.holdout_size");
  t.snapshot_every = get_int("train.snapshot_every");
  t.seed = seed();
  return t;
}

std::vector<AttackSpec> RunConfig::attack_grid() const {
  std::vector<AttackSpec> grid;
  for (const auto& label : get_string_list("attack.grid")) {
    if (label == "external") throw InvalidArgument("external attacks are configured through attack.external_commands");
    grid.push_back(AttackSpec::parse(label));
  }
  const auto timeout = std::chrono::milliseconds(get_int("attack.external_timeout_ms"));
  for (const auto& cmd : get_string_list("attack.external_commands")) grid.push_back(AttackSpec::external(cmd, timeout));
  return grid;
}

std::vector<AttackSpec> RunConfig::stability_attacks() const {
  std::vector<AttackSpec> out;
  for (const auto& label : get_string_list("stability.attacks")) out.push_back(AttackSpec::parse(label));
  return out;
}

void RunConfig::validate() const {
  seed();
  if (get_string("output_dir").empty()) throw InvalidArgument("output_dir must not be empty");
  const auto codec = codec_architecture();
  if (codec.kind == CodecKind::ExternalVAE && get_string("codec.path").empty()) {
    throw InvalidArgument("codec.kind external_vae requires codec.path");
  }
  model_architecture();
  pretrain();
  train().validate(codec.downsample_factor);
  attack_grid();
  stability_attacks();
  for (const char* key : {"dataset.train_limit", "dataset.eval_limit", "stability.image_limit"}) {
    if (get_int(key) < 0) throw InvalidArgument(std::string(key) + " must be non-negative");
  }
  if (get_int("attack.external_timeout_ms") <= 0) throw InvalidArgument("attack.external_timeout_ms must be positive");
}

}  // namespace sfm
