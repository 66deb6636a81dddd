#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfm/attacks.hpp"
#include "sfm/dataset.hpp"
#include "sfm/freq.hpp"

namespace sfm {

// sqrt(mean | |F| - |F'| |^2) / sqrt(mean |F|^2) over every bin of every
// channel. Throws DivisionByZero for an all-zero reference.
double nrmse(const ComplexGrid& reference, const ComplexGrid& attacked);
double nrmse(const std::vector<ComplexGrid>& reference, const std::vector<ComplexGrid>& attacked);

struct PairedTTest {
  std::size_t samples = 0;
  double mean_difference = 0.0;  // mean(a - b)
  // Unset when the test is degenerate (fewer than two samples or zero variance).
  std::optional<double> t_statistic;
  std::optional<double> p_value;  // two-sided

  bool degenerate() const noexcept { return !p_value.has_value(); }
};

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

struct StabilityRecord {
  std::string image_id;
  std::string attack;
  double e_global = 0.0;
  double e_low = 0.0;
  double e_high = 0.0;
};

struct AttackStability {
  std::string attack;
  std::size_t samples = 0;
  std::size_t skipped = 0;
  double mean_global = 0.0;
  double mean_low = 0.0;
  double mean_high = 0.0;
  PairedTTest low_vs_high;
};

struct StabilityReport {
  double radius_fraction = 0.2;
  std::size_t image_count = 0;
  std::size_t skipped = 0;
  std::vector<AttackStability> attacks;
  std::vector<StabilityRecord> records;
};

StabilityRecord measure_stability(const DatasetItem& item, const AttackSpec& attack, const FrequencyMask& mask);

// Attacks are seeded per (seed, image id, attack index). Items whose attack
// throws are counted as skipped.
StabilityReport analyze_stability(std::span<const DatasetItem> images, std::span<const AttackSpec> attacks,
                                  double radius_fraction, std::uint64_t seed = 0, int jobs = 1);

// A non-empty fingerprint is added as a trailing column.
std::string stability_csv(const StabilityReport& report, const std::string& config_fingerprint = "");
nlohmann::json stability_json(const StabilityReport& report);

}  // namespace sfm
