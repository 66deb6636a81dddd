// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance_suite [--only N[,N...]] [--keep DIR]
//
// Exit status is 0 only when every selected criterion passes.

#include <sys/wait.h>

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "loss_probe.hpp"
#include "sfm/attacks.hpp"
#include "sfm/checkpoint.hpp"
#include "sfm/codec.hpp"
#include "sfm/config.hpp"
#include "sfm/embednet.hpp"
#include "sfm/errors.hpp"
#include "sfm/evaluation.hpp"
#include "sfm/freq.hpp"
#include "sfm/losses.hpp"
#include "sfm/model.hpp"
#include "sfm/pipeline.hpp"
#include "sfm/stability.hpp"
#include "sfm/trainer.hpp"
#include "small_model.hpp"
#include "test_data.hpp"

namespace fs = std::filesystem;
using namespace sfm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects the individual checks of one criterion.
struct Checks {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }

  Outcome outcome() const {
    std::string d;
    for (const auto& n : notes) d += (d.empty() ? "" : "; ") + n;
    for (const auto& f : failures) d += (d.empty() ? "failed: " : "; failed: ") + f;
    return {failures.empty(), d};
  }
};

double rms_diff(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

// 1. Low band more stable than high band under GN 0.1, JPEG 50, GF 3.
Outcome low_frequency_stability() {
  Checks c;
  const auto items = fixtures::natural_dataset(60, 128, 101);
  const std::vector<AttackSpec> attacks{AttackSpec::gaussian_noise(0.1), AttackSpec::jpeg(50),
                                        AttackSpec::gaussian_filter(3)};
  const StabilityReport r = analyze_stability(items, attacks, 0.2, 7);
  c.note(fmt::format("{} images", r.image_count));
  c.expect(r.image_count >= 50, "fewer than 50 images");
  for (const auto& a : r.attacks) {
    const double p = a.low_vs_high.p_value.value_or(1.0);
    c.note(fmt::format("{} E_low {:.4f} < E_high {:.4f}, p {:.2e}", a.attack, a.mean_low, a.mean_high, p));
    c.expect(a.samples >= 50, a.attack + " evaluated on fewer than 50 images");
    c.expect(a.mean_low < a.mean_high, a.attack + " mean E_low >= E_high");
    c.expect(p < 0.05, a.attack + " p >= 0.05");
  }
  return c.outcome();
}

// 2. recompose(decompose(I)) == I within 1e-4 RMS.
Outcome decomposition_round_trip() {
  Checks c;
  Rng rng(202);
  std::vector<Image> images;
  for (int i = 0; i < 100; ++i) images.push_back(fixtures::random_image(3, 64, 64, rng));
  for (auto& img : fixtures::natural_crops(20, 64, 203)) images.push_back(std::move(img));
  for (ExtractorKind kind : {ExtractorKind::FFT, ExtractorKind::DCT, ExtractorKind::GAU}) {
    ExtractorSettings s;
    s.kind = kind;
    double worst = 0.0;
    for (const auto& img : images) worst = std::max(worst, rms_diff(recompose(decompose(img, s)), img));
    c.note(fmt::format("{} worst RMS {:.2e}", to_string(kind), worst));
    c.expect(worst <= 1e-4, to_string(kind) + " round trip above 1e-4");
  }
  return c.outcome();
}

// 3. embed_latent == latent + 0.2 * Z_fuse; a zero residual returns the latent.
Outcome embedding_contract() {
  Checks c;
  EmbedderArchitecture arch;
  arch.message_length = 16;
  arch.hidden_width = 64;
  arch.grid = 16;
  arch.channels = 16;
  arch.aux_widths = {16, 8, 4};
  arch.fused_widths = {16, 8, 8, 4};
  arch.watermark_widths = {16, 8, 4, 4};
  EmbedNet net(arch, 303);
  Rng rng(304);
  std::normal_distribution<double> n(0.0, 0.3);

  const auto latent = [&](int side) {
    Tensor t({4, side, side});
    for (auto& v : t.storage()) v = 2.0 * n(rng);
    return LatentMap(std::move(t));
  };
  std::size_t zero_ok = 0, cases = 0;
  for (int side : {16, 12, 20}) {
    const LatentMap z = latent(side);
    zero_ok += embed_latent(net, z, WatermarkBits::random(16, rng)) == z;
    ++cases;
  }
  c.note(fmt::format("zero residual: {}/{} unchanged", zero_ok, cases));
  c.expect(zero_ok == cases, "zero residual changed the latent");

  for (auto& v : net.params().params().at("fuse.out.weight").mutable_value().storage()) v = n(rng);
  for (auto& v : net.params().params().at("fuse.out.bias").mutable_value().storage()) v = 0.1 * n(rng);
  std::size_t exact = 0, total = 0;
  bool bounded = true, changed = false;
  for (int t = 0; t < 10; ++t) {
    const int side = t % 2 ? 16 : 24;
    const LatentMap z = latent(side);
    const WatermarkBits w = WatermarkBits::random(16, rng);
    const LatentMap out = embed_latent(net, z, w);
    const Tensor r =
        net.residual(ag::constant(z.as_batch()), ag::constant(normalized_batch({w})), false).value();
    double max_r = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) max_r = std::max(max_r, std::fabs(r[i]));
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double want = z.values()[i] + 0.2 * r[i];
      exact += out.values()[i] == want;
      ++total;
      bounded = bounded && std::fabs(out.values()[i] - z.values()[i]) <= 0.2 * max_r + 1e-15;
      changed = changed || out.values()[i] != z.values()[i];
    }
  }
  c.note(fmt::format("{}/{} elements bit-exact", exact, total));
  c.expect(exact == total, "embedding differs from latent + 0.2 * residual");
  c.expect(bounded, "embedding moved further than 0.2 * max|Z_fuse|");
  c.expect(changed, "non-zero residual left the latent unchanged");
  return c.outcome();
}

// 4. total_loss gradients vs central differences on 8x8 inputs.
Outcome gradient_correctness() {
  Checks c;
  std::size_t checked = 0, passed = 0;
  double worst = 0.0;
  for (std::uint64_t seed : {401, 402, 403, 404}) {
    const fixtures::LossProbe probe(8, 16, seed);
    const auto r = fixtures::gradcheck([&](const ag::Var& wm) { return probe.total(wm); }, probe.watermarked, 192,
                                      1e-6, 1e-3, 1e-10, seed);
    checked += r.checked;
    passed += r.passed;
    worst = std::max(worst, r.worst);
  }
  const double rate = static_cast<double>(passed) / checked;
  c.note(fmt::format("total loss: {}/{} coordinates within 1e-3 ({:.2f}%)", passed, checked, 100.0 * rate));
  c.expect(rate >= 0.99, "total-loss pass rate below 99%");

  const fixtures::LossProbe probe(8, 16, 405);
  const char* names[] = {"watermark", "l2", "ssim", "jnd"};
  for (int k = 0; k < 4; ++k) {
    const auto r = fixtures::gradcheck(
        [&](const ag::Var& wm) {
          const LossTermVars t = probe.terms(wm);
          const ag::Var* v[] = {&t.watermark, &t.l2, &t.ssim, &t.jnd};
          return *v[k];
        },
        probe.watermarked, 192, 1e-6, 1e-3, 1e-10, 405 + k);
    c.note(fmt::format("{} {:.1f}%", names[k], 100.0 * r.pass_rate()));
    c.expect(r.pass_rate() >= 0.99, std::string(names[k]) + " pass rate below 99%");
  }
  return c.outcome();
}

// 5. Stage presets and total-loss arithmetic.
Outcome loss_arithmetic() {
  Checks c;
  c.expect(LossWeights::stage1() == LossWeights{5.0, 0.1, 5.0, 10.0}, "stage-1 weights");
  c.expect(LossWeights::stage2() == LossWeights{5.0, 1.0, 10.0, 50.0}, "stage-2 weights");
  const LossTerms t{0.1, 0.01, 0.02, 0.005};
  const double s1 = total_loss(t, LossWeights::stage1());
  const double s2 = total_loss(t, LossWeights::stage2());
  c.note(fmt::format("stage 1 {:.15g} (0.651), stage 2 {:.15g} (0.96)", s1, s2));
  c.expect(std::fabs(s1 - 0.651) <= 1e-12, "stage-1 total");
  c.expect(std::fabs(s2 - 0.96) <= 1e-12, "stage-2 total");
  const LossTerms u{0.6931471805599453, 0.0123, 0.0456, 0.0789};
  const double want = 5.0 * u.watermark + 1.0 * u.l2 + 10.0 * u.ssim + 50.0 * u.jnd;
  c.expect(std::fabs(total_loss(u, LossWeights::stage2()) - want) <= 1e-12, "stage-2 total on a second term set");
  return c.outcome();
}

// 6. Toy end-to-end training.
Outcome toy_training(const fs::path& work) {
  Checks c;
  const auto start = std::chrono::steady_clock::now();
  const RunConfig cfg = RunConfig::load(SFM_TOY_CONFIG);
  const int size = cfg.get_int("image_size");
  const auto train_images = fixtures::natural_crops(200, size, 7);

  PretrainResult pre;
  Codec codec = pretrain_tiny_autoencoder(train_images, cfg.codec_architecture(), cfg.pretrain(), &pre);
  c.note(fmt::format("codec RMS {:.4f}", pre.final_rms));

  Model model(cfg.model_architecture(), std::move(codec), cfg.seed());
  TrainOutcome out;
  try {
    out = train(model, train_images, cfg.train());
  } catch (const NonConvergence& e) {
    c.expect(false, fmt::format("stage 1 did not converge within {} iterations", e.loss_curve().size()));
    return c.outcome();
  }
  model.save(work / "toy_model.sfm");
  c.note(fmt::format("stage 1 switched at iteration {} (smoothed L_w < {})", out.state.stage1_iterations,
                     cfg.get_number("train.stage_switch_threshold")));
  c.expect(out.state.stage1_iterations <= 5000, "stage 1 needed more than 5000 iterations");

  const auto eval_items = fixtures::natural_dataset(64, size, 99);
  const std::vector<AttackSpec> attacks{AttackSpec::gaussian_filter(3), AttackSpec::brightness(0.15),
                                        AttackSpec::brightness(-0.15)};
  const EvalReport r = evaluate(model, eval_items, attacks, {cfg.seed()});
  c.note(fmt::format("clean {:.2f}% (PSNR {:.2f} dB, SSIM {:.4f})", r.clean_bit_accuracy, r.mean_psnr, r.mean_ssim));
  c.expect(r.clean_bit_accuracy >= 99.0, "clean bit accuracy below 99%");
  for (const auto& row : r.rows) {
    const double acc = row.mean_bit_accuracy.value_or(0.0);
    c.note(fmt::format("{} {:.2f}%", row.label, acc));
    c.expect(acc >= 90.0, row.label + " bit accuracy below 90%");
  }
  c.note(fmt::format("{:.0f} s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()));
  return c.outcome();
}

// 7. Full-scale table values travel as reference metadata.
Outcome reference_metadata() {
  Checks c;
  Model m = fixtures::small_model(701);
  const auto grid = default_attack_grid();
  const EvalReport r = evaluate(m, fixtures::natural_dataset(2, 32, 702), grid);
  const auto j = eval_report_json(r);
  const auto& ref = j["full_scale_reference"];
  c.expect(ref.value("psnr", 0.0) == 39.19, "reference PSNR 39.19 missing");
  c.expect(ref.value("ssim", 0.0) == 0.990, "reference SSIM 0.990 missing");
  c.expect(reference_bit_accuracy(AttackSpec::gaussian_noise(0.1)) == 99.66, "GN 0.1 reference 99.66 missing");
  // No clean reference exists; identity stays null.
  std::size_t with_ref = 0, attacked = 0;
  for (const auto& row : j["attacks"]) {
    const bool has = !row["reference_bit_accuracy"].is_null();
    if (row["attack"] == "identity") {
      c.expect(!has, "identity row carries an invented reference");
      continue;
    }
    ++attacked;
    with_ref += has;
  }
  c.note(fmt::format("{}/{} attack rows carry a full-scale reference", with_ref, attacked));
  c.expect(with_ref == attacked && attacked + 1 == j["attacks"].size(), "attack rows without a reference value");
  c.expect(eval_report_csv(r).find("reference_bit_accuracy") != std::string::npos, "CSV lacks the reference column");
  return c.outcome();
}

// 8. Attack oracles.
Outcome attack_oracles() {
  Checks c;
  {
    const Image flat(3, 512, 512, 0.5);
    AttackSpec gn = AttackSpec::gaussian_noise(0.1);
    gn.seed = 801;
    const Image out = apply_attack(flat, gn);
    double s = 0.0, ss = 0.0;
    for (double v : out.values()) s += v - 0.5, ss += (v - 0.5) * (v - 0.5);
    const double n = static_cast<double>(out.size());
    const double sd = std::sqrt(ss / n - (s / n) * (s / n));
    c.note(fmt::format("GN sigma {:.4f}", sd));
    c.expect(std::fabs(sd - 0.1) <= 0.005, "GN sigma outside 5%");
  }
  for (double d : {0.1, 0.2}) {
    const Image flat(3, 512, 512, 0.5);
    AttackSpec sp = AttackSpec::salt_pepper(d);
    sp.seed = 802;
    const Image out = apply_attack(flat, sp);
    std::size_t flipped = 0;
    for (int y = 0; y < 512; ++y)
      for (int x = 0; x < 512; ++x) flipped += out.at(0, y, x) != 0.5;
    const double frac = flipped / (512.0 * 512.0);
    c.note(fmt::format("S&P {} fraction {:.4f}", d, frac));
    c.expect(std::fabs(frac - d) <= 0.1 * d, fmt::format("S&P {} fraction outside 10%", d));
  }
  {
    Model m = fixtures::small_model(803);
    Rng rng(804);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& v : m.embedder().params().params().at("fuse.out.weight").mutable_value().storage()) v = n(rng);
    const std::vector<AttackSpec> identity{AttackSpec::identity()};
    const EvalReport r = evaluate(m, fixtures::natural_dataset(8, 32, 805), identity);
    const bool same = r.rows[0].mean_bit_accuracy && *r.rows[0].mean_bit_accuracy == r.clean_bit_accuracy;
    c.note(fmt::format("identity {:.2f}% vs clean {:.2f}%", r.rows[0].mean_bit_accuracy.value_or(-1),
                       r.clean_bit_accuracy));
    c.expect(same, "identity attack changed bit accuracy");
  }
  {
    Rng rng(806);
    double worst = 1e9;
    for (int i = 0; i < 10; ++i) {
      const Image img = fixtures::smooth_image(128, 128, rng);
      worst = std::min(worst, psnr(img, apply_attack(img, AttackSpec::jpeg(100))));
    }
    c.note(fmt::format("JPEG 100 worst PSNR {:.2f} dB", worst));
    c.expect(worst >= 40.0, "JPEG 100 PSNR below 40 dB");
  }
  return c.outcome();
}

// 9. Repeated CLI commands give byte-identical artifacts.
Outcome determinism(const fs::path& work) {
  Checks c;
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fixtures::write_dataset(dir / "data", fixtures::natural_crops(100, 32, 901));
  const ModelArchitecture a = fixtures::small_model_architecture();
  const nlohmann::json config{{"seed", 9},
                              {"output_dir", (dir / "out").string()},
                              {"image_size", 32},
                              {"watermark.length", 8},
                              {"dataset.train_dir", (dir / "data").string()},
                              {"codec.width", 8},
                              {"codec.pretrain.max_iterations", 40},
                              {"codec.pretrain.eval_every", 20},
                              {"embedder.hidden_width", a.embedder.hidden_width},
                              {"embedder.grid", a.embedder.grid},
                              {"embedder.channels", a.embedder.channels},
                              {"embedder.aux_widths", a.embedder.aux_widths},
                              {"embedder.fused_widths", a.embedder.fused_widths},
                              {"embedder.watermark_widths", a.embedder.watermark_widths},
                              {"extract_net.feature_widths", a.extractor_net.feature_widths},
                              {"extract_net.pool_size", a.extractor_net.pool_size},
                              {"extract_net.decode_widths", a.extractor_net.decode_widths},
                              {"extract_net.fc_widths", a.extractor_net.fc_widths},
                              {"train.learning_rate", 1e-3},
                              {"train.stage_switch_threshold", 10.0},
                              {"train.smoothing_window", 3},
                              {"train.stage2_iterations", 4},
                              {"train.eval_every", 2},
                              {"train.holdout_size", 2},
                              {"train.snapshot_every", 2},
                              {"stability.image_limit", 6}};
  write_text_file(dir / "config.json", config.dump());
  const std::string cli = fmt::format("{} -q -c {} ", SFM_CLI_PATH, (dir / "config.json").string());
  const std::string img = (dir / "data" / "img_0000.png").string();
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {"analyze-stability", {"stability.csv", "stability.json"}},
      {"pretrain-codec", {"codec.sfm", "codec_pretrain.csv"}},
      {"train", {"model.sfm", "metric_log.csv", "train_snapshot.sfm"}},
      {"embed -i " + img + " -o marked.png -m a5", {"marked.png"}},
      {"attack -i " + img + " -a gn:0.1 -o noisy.png", {"noisy.png"}},
      {"evaluate", {"eval_report.json", "eval_report.csv", "eval_report.svg"}},
      {"-j 3 evaluate", {"eval_report.json", "eval_report.csv", "eval_report.svg"}}};

  auto run_all = [&](std::map<std::string, std::string>& files) {
    fs::remove_all(dir / "out");
    for (const auto& [args, outputs] : commands) {
      const int status = std::system((cli + args + " > /dev/null 2>&1").c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        c.expect(false, "command failed: " + args);
        continue;
      }
      for (const auto& f : outputs) files[args + ":" + f] = read_text_file(dir / "out" / f);
    }
  };
  std::map<std::string, std::string> first, second;
  run_all(first);
  run_all(second);
  std::size_t identical = 0;
  for (const auto& [key, bytes] : first) {
    const bool same = second.count(key) && second.at(key) == bytes;
    identical += same;
    c.expect(same, key + " differs between runs");
  }
  // The single-threaded and multi-threaded evaluations agree too.
  c.expect(first.count("evaluate:eval_report.json") &&
               first["evaluate:eval_report.json"] == first["-j 3 evaluate:eval_report.json"],
           "evaluation report depends on the job count");
  c.note(fmt::format("{}/{} artifacts byte-identical across {} commands", identical, first.size(), commands.size()));
  return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path work = fs::temp_directory_path() / fmt::format("sfm_acceptance_{}", ::getpid());
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (arg == "--keep" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::cerr << "usage: acceptance_suite [--only N[,N...]] [--keep DIR]\n";
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"low-frequency stability", low_frequency_stability},
      {"decomposition round trip", decomposition_round_trip},
      {"embedding contract", embedding_contract},
      {"gradient correctness", gradient_correctness},
      {"loss arithmetic", loss_arithmetic},
      {"toy end-to-end training", [&] { return toy_training(work); }},
      {"full-scale reference metadata", reference_metadata},
      {"attack oracles", attack_oracles},
      {"determinism", [&] { return determinism(work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} criterion {} ({}): {}", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
