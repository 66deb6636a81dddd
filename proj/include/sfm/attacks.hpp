#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfm/image.hpp"

namespace sfm {

enum class AttackKind {
  Identity,
  GaussianNoise,
  SaltPepper,
  JPEG,
  Contrast,
  Brightness,
  GaussianFilter,
  MeanFilter,
  MedianFilter,
  RandomDropout,
  External,
};

std::string to_string(AttackKind kind);

// One cell of an attack grid. `value` carries the kind's scalar parameter:
// sigma (GaussianNoise), density d (SaltPepper), quality q (JPEG), factor r
// (Contrast/Brightness), kernel k (filters). RandomDropout uses the
// [dropout_min, dropout_max] area-fraction range; External uses `command`.
struct AttackSpec {
  AttackKind kind = AttackKind::Identity;
  double value = 0.0;
  double dropout_min = 0.10;
  double dropout_max = 0.30;
  std::string command;
  std::chrono::milliseconds timeout{120000};
  std::optional<std::uint64_t> seed;

  void validate() const;
  // Stable short label, e.g. "gn:0.1", "jpeg:50", "rd:0.1-0.3", "external".
  std::string label() const;
  bool stochastic() const;

  static AttackSpec identity() { return {}; }
  static AttackSpec gaussian_noise(double sigma);
  static AttackSpec salt_pepper(double density);
  static AttackSpec jpeg(int quality);
  static AttackSpec contrast(double r);
  static AttackSpec brightness(double r);
  static AttackSpec gaussian_filter(int k);
  static AttackSpec mean_filter(int k);
  static AttackSpec median_filter(int k);
  static AttackSpec random_dropout(double lo = 0.10, double hi = 0.30);
  static AttackSpec external(std::string command, std::chrono::milliseconds timeout = std::chrono::seconds(120));

  // Parses the label syntax; "external" takes its command separately.
  static AttackSpec parse(const std::string& text);
};

// Conventional grid: GN 0.1/0.15/0.2, S&P 0.1/0.15/0.2, JPEG 10/30/50/70,
// contrast and brightness at both signs, Gaussian/mean/median filters with
// k = 5 and 7, random dropout 10-30%, plus the identity row.
std::vector<AttackSpec> default_attack_grid();

// Clamped attacked copy. Stochastic kinds draw from `spec.seed` (0 when unset).
Image apply_attack(const Image& image, const AttackSpec& spec);

struct ExternalRun {
  Image image;
  std::chrono::milliseconds latency{0};
  std::string command;
};

// Runs an external editing command. `{input}` and `{output}` in the command
// are replaced by PNG paths in a private temp directory; the command must
// write an image of the same size to `{output}`. Failures throw
// ExternalAttackError with a distinguishing reason.
ExternalRun run_external(const Image& image, const AttackSpec& spec);

}  // namespace sfm
