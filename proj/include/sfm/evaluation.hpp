#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfm/attacks.hpp"
#include "sfm/dataset.hpp"
#include "sfm/model.hpp"

namespace sfm {

struct EvalOptions {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string config_fingerprint;
};

struct AttackRow {
  std::string label;
  std::string kind;
  nlohmann::json parameters;
  std::string seed_policy;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  std::optional<double> mean_bit_accuracy;  // unset when every item was skipped
  std::optional<double> reference_bit_accuracy;
};

// Mean of a +r / -r photometric pair present in the grid.
struct SymmetricRow {
  std::string label;  // e.g. "brightness:+-0.15"
  std::string positive, negative;
  std::optional<double> mean_bit_accuracy;  // unset when either side has no result
};

struct EvalReport {
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::size_t image_count = 0;
  int message_length = 0;
  double clean_bit_accuracy = 0.0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  // Largest per-image RMS change of the high band, and of the final clamp.
  double max_high_band_deviation = 0.0;
  double max_clamp_distortion = 0.0;
  std::size_t skipped = 0;
  std::vector<AttackRow> rows;
  std::vector<SymmetricRow> symmetric;
  std::vector<std::string> warnings;
  // Wall-clock latency of external commands per row label; kept out of the
  // serialised report so reports stay byte-identical across runs.
  std::map<std::string, std::vector<double>> external_latency_ms;
};

// Every image gets a fresh random watermark drawn from (seed, image index);
// stochastic attacks are seeded from (seed, image index, attack index).
// External-attack failures are counted as skipped. Throws InvalidArgument for
// an empty dataset.
EvalReport evaluate(Model& model, std::span<const DatasetItem> dataset, std::span<const AttackSpec> attacks,
                    const EvalOptions& options = {});

// Full-scale bit accuracy reported for the given attack cell, when there is one.
std::optional<double> reference_bit_accuracy(const AttackSpec& attack);
nlohmann::json full_scale_reference();

nlohmann::json eval_report_json(const EvalReport& report);
std::string eval_report_csv(const EvalReport& report);
// Static bar chart of per-attack bit accuracy.
std::string eval_report_svg(const EvalReport& report);

}  // namespace sfm
