#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfm/attacks.hpp"
#include "sfm/codec.hpp"
#include "sfm/model.hpp"
#include "sfm/trainer.hpp"

namespace sfm {

enum class ConfigType { Int, Number, String, Bool, IntList, NumberList, StringList };

struct ConfigKey {
  std::string name;
  ConfigType type;
  nlohmann::json default_value;
  std::string doc;
};

// Every recognised key with its type, default and description.
const std::vector<ConfigKey>& config_keys();
// Markdown table of config_keys().
std::string config_documentation();

// Flat JSON object of dotted keys ("train.learning_rate": 1e-4, ...). Unknown
// keys and wrongly typed values are rejected; omitted keys take defaults.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);

  // Command-line override; `value` is parsed as JSON, falling back to a string.
  void set(const std::string& key, const std::string& value);
  void set_json(const std::string& key, const nlohmann::json& value);

  // Cross-key checks (image size vs codec factor, widths, attack labels, ...).
  void validate() const;

  const nlohmann::json& resolved() const noexcept { return values_; }
  // SHA-256 of the resolved document's canonical dump.
  std::string fingerprint() const;

  int get_int(const std::string& key) const;
  double get_number(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_number_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  ExtractorSettings extractor() const;
  CodecArchitecture codec_architecture() const;
  PretrainSettings pretrain() const;
  ModelArchitecture model_architecture() const;
  TrainConfig train() const;
  std::vector<AttackSpec> attack_grid() const;
  std::vector<AttackSpec> stability_attacks() const;
  std::uint64_t seed() const;
  std::filesystem::path output_dir() const;

 private:
  nlohmann::json values_;
};

}  // namespace sfm
