#include "sfm/stability.hpp"

#include <fmt/format.h>

#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "sfm/errors.hpp"
#include "sfm/parallel.hpp"
#include "sfm/rng.hpp"

namespace sfm {

namespace {

void accumulate(const ComplexGrid& ref, const ComplexGrid& att, double& num, double& den) {
  if (ref.height != att.height || ref.width != att.width) throw InvalidArgument("nrmse: spectrum shape mismatch");
  for (std::size_t i = 0; i < ref.values.size(); ++i) {
    const double a = std::abs(ref.values[i]);
    const double d = a - std::abs(att.values[i]);
    num += d * d;
    den += a * a;
  }
}

double finish(double num, double den) {
  if (den == 0.0) throw DivisionByZero("nrmse: reference spectrum is all zero");
  // The 1/N factors cancel.
  return std::sqrt(num) / std::sqrt(den);
}

}  // namespace

double nrmse(const ComplexGrid& reference, const ComplexGrid& attacked) {
  double num = 0.0, den = 0.0;
  accumulate(reference, attacked, num, den);
  return finish(num, den);
}

double nrmse(const std::vector<ComplexGrid>& reference, const std::vector<ComplexGrid>& attacked) {
  if (reference.size() != attacked.size()) throw InvalidArgument("nrmse: channel count mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < reference.size(); ++c) accumulate(reference[c], attacked[c], num, den);
  return finish(num, den);
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("paired_t_test: sample size mismatch");
  PairedTTest out;
  out.samples = a.size();
  if (a.empty()) return out;
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  out.mean_difference = mean;
  if (a.size() < 2) return out;
  bool constant = true;
  for (std::size_t i = 1; i < a.size() && constant; ++i) constant = (a[i] - b[i]) == (a[0] - b[0]);
  if (constant) return out;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) return out;
  const double t = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(n - 1.0);
  out.t_statistic = t;
  out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
  return out;
}

StabilityRecord measure_stability(const DatasetItem& item, const AttackSpec& attack, const FrequencyMask& mask) {
  const Image attacked = apply_attack(item.image, attack);
  const auto ref = centered_spectrum(item.image);
  const auto att = centered_spectrum(attacked);
  const SpectrumPair ref_split = split_spectrum(ref, mask);
  const SpectrumPair att_split = split_spectrum(att, mask);
  StabilityRecord r;
  r.image_id = item.id;
  r.attack = attack.label();
  r.e_global = nrmse(ref, att);
  r.e_low = nrmse(ref_split.low, att_split.low);
  r.e_high = nrmse(ref_split.high, att_split.high);
  return r;
}

StabilityReport analyze_stability(std::span<const DatasetItem> images, std::span<const AttackSpec> attacks,
                                  double radius_fraction, std::uint64_t seed, int jobs) {
  if (images.size() < 2) throw InvalidArgument("stability analysis needs at least two images");
  if (attacks.empty()) throw InvalidArgument("stability analysis needs at least one attack");
  for (const auto& a : attacks) a.validate();

  StabilityReport report;
  report.radius_fraction = radius_fraction;
  report.image_count = images.size();

  // One slot per (image, attack); empty slots are skipped items.
  std::vector<std::optional<StabilityRecord>> slots(images.size() * attacks.size());
  parallel_for(images.size(), jobs, [&](std::size_t i) {
    const auto& item = images[i];
    const FrequencyMask mask = build_mask(item.image.height(), item.image.width(), radius_fraction);
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      AttackSpec spec = attacks[a];
      spec.seed = derive_seed(seed, {stable_hash(item.id), a});
      try {
        slots[i * attacks.size() + a] = measure_stability(item, spec, mask);
      } catch (const ExternalAttackError&) {
      } catch (const InvalidInput&) {
      } catch (const DivisionByZero&) {
      }
    }
  });

  for (std::size_t a = 0; a < attacks.size(); ++a) {
    AttackStability agg;
    agg.attack = attacks[a].label();
    std::vector<double> lows, highs;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& slot = slots[i * attacks.size() + a];
      if (!slot) {
        ++agg.skipped;
        continue;
      }
      agg.mean_global += slot->e_global;
      agg.mean_low += slot->e_low;
      agg.mean_high += slot->e_high;
      lows.push_back(slot->e_low);
      highs.push_back(slot->e_high);
    }
    agg.samples = lows.size();
    if (agg.samples > 0) {
      agg.mean_global /= agg.samples;
      agg.mean_low /= agg.samples;
      agg.mean_high /= agg.samples;
    }
    agg.low_vs_high = paired_t_test(lows, highs);
    report.skipped += agg.skipped;
    report.attacks.push_back(std::move(agg));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      if (auto& slot = slots[i * attacks.size() + a]) report.records.push_back(*slot);
    }
  }
  return report;
}

std::string stability_csv(const StabilityReport& report, const std::string& config_fingerprint) {
  const bool fp = !config_fingerprint.empty();
  std::string out = fp ? "image_id,attack,e_global,e_low,e_high,config_fingerprint\n" : "image_id,attack,e_global,e_low,e_high\n";
  for (const auto& r : report.records) {
    out += fmt::format("{},{},{},{},{}", r.image_id, r.attack, r.e_global, r.e_low, r.e_high);
    out += fp ? "," + config_fingerprint + "\n" : "\n";
  }
  return out;
}

nlohmann::json stability_json(const StabilityReport& report) {
  nlohmann::json j;
  j["radius_fraction"] = report.radius_fraction;
  j["image_count"] = report.image_count;
  j["skipped"] = report.skipped;
  j["attacks"] = nlohmann::json::array();
  for (const auto& a : report.attacks) {
    nlohmann::json t;
    t["samples"] = a.low_vs_high.samples;
    t["mean_difference_low_minus_high"] = a.low_vs_high.mean_difference;
    t["degenerate"] = a.low_vs_high.degenerate();
    t["t_statistic"] = a.low_vs_high.t_statistic ? nlohmann::json(*a.low_vs_high.t_statistic) : nlohmann::json();
    t["p_value_two_sided"] = a.low_vs_high.p_value ? nlohmann::json(*a.low_vs_high.p_value) : nlohmann::json();
    j["attacks"].push_back({{"attack", a.attack},
                            {"samples", a.samples},
                            {"skipped", a.skipped},
                            {"mean_e_global", a.mean_global},
                            {"mean_e_low", a.mean_low},
                            {"mean_e_high", a.mean_high},
                            {"paired_t_test", t}});
  }
  return j;
}

}  // namespace sfm
