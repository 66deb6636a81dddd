// sfmark: command-line front end for the watermarking library.
//
// Exit codes: 0 success, 2 invalid configuration or input, 3 training did not
// converge, 1 anything else.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>

#include "sfm/attacks.hpp"
#include "sfm/codec.hpp"
#include "sfm/config.hpp"
#include "sfm/dataset.hpp"
#include "sfm/errors.hpp"
#include "sfm/evaluation.hpp"
#include "sfm/model.hpp"
#include "sfm/pipeline.hpp"
#include "sfm/stability.hpp"
#include "sfm/trainer.hpp"

namespace fs = std::filesystem;
using namespace sfm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNonConvergence = 3;

// Thrown for user errors detected by the CLI itself.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  int jobs = 1;
  bool quiet = false;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig() : RunConfig::load(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void note(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

fs::path under_output(const RunConfig& cfg, const fs::path& p) {
  return p.is_absolute() ? p : cfg.output_dir() / p;
}

fs::path checkpoint_path(const RunConfig& cfg) {
  const std::string p = cfg.get_string("model.checkpoint");
  return p.empty() ? cfg.output_dir() / "model.sfm" : fs::path(p);
}

std::string require_dir(const RunConfig& cfg, const std::string& key) {
  const std::string dir = cfg.get_string(key);
  if (dir.empty()) throw UsageError(key + " is not set");
  if (!fs::is_directory(dir)) throw UsageError("dataset directory '" + dir + "' does not exist");
  return dir;
}

std::vector<DatasetItem> training_images(const RunConfig& cfg) {
  auto items = load_dataset(require_dir(cfg, "dataset.train_dir"), cfg.get_int("image_size"),
                            static_cast<std::size_t>(cfg.get_int("dataset.train_limit")));
  if (items.empty()) throw UsageError("no images found under " + cfg.get_string("dataset.train_dir"));
  return items;
}

std::vector<Image> images_of(const std::vector<DatasetItem>& items) {
  std::vector<Image> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.image);
  return out;
}

Model load_model(const RunConfig& cfg) {
  const fs::path p = checkpoint_path(cfg);
  if (!fs::exists(p)) throw UsageError("checkpoint " + p.string() + " does not exist (run `sfmark train` first)");
  return Model::load(p);
}

// ------------------------------------------------------------------ commands

int cmd_analyze_stability(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const auto attacks = cfg.stability_attacks();
  if (attacks.empty()) throw UsageError("stability.attacks is empty");
  const auto items = load_dataset(require_dir(cfg, "dataset.train_dir"), cfg.get_int("image_size"),
                                  static_cast<std::size_t>(cfg.get_int("stability.image_limit")));
  note(g, fmt::format("stability study: {} images, {} attacks", items.size(), attacks.size()));
  const auto report = analyze_stability(items, attacks, cfg.get_number("extractor.radius_fraction"), cfg.seed(), g.jobs);
  auto json = stability_json(report);
  json["config_fingerprint"] = cfg.fingerprint();
  write_text_file(cfg.output_dir() / "stability.csv", stability_csv(report, cfg.fingerprint()));
  write_text_file(cfg.output_dir() / "stability.json", json.dump(2) + "\n");
  for (const auto& a : report.attacks) {
    std::cout << fmt::format("{:<14} E_low {:.4f}  E_high {:.4f}  E_global {:.4f}  p {}  (n={}, skipped {})\n", a.attack,
                             a.mean_low, a.mean_high, a.mean_global,
                             a.low_vs_high.p_value ? fmt::format("{:.3g}", *a.low_vs_high.p_value) : "n/a",
                             a.samples, a.skipped);
  }
  return kExitOk;
}

Codec pretrain_codec(const Globals& g, const RunConfig& cfg, const std::vector<Image>& images) {
  const auto arch = cfg.codec_architecture();
  if (arch.kind != CodecKind::TinyAE) throw UsageError("pretrain-codec needs codec.kind tiny_ae");
  PretrainResult result;
  Codec codec = pretrain_tiny_autoencoder(images, arch, cfg.pretrain(), &result, [&](int it, double rms) {
    note(g, fmt::format("pretrain {:>6}: reconstruction RMS {:.6f}", it, rms));
  });
  codec.provenance()["config_fingerprint"] = cfg.fingerprint();
  codec.save(cfg.output_dir() / "codec.sfm");
  std::string csv = "iteration,reconstruction_rms,config_fingerprint\n";
  for (std::size_t i = 0; i < result.eval_rms.size(); ++i) {
    csv += fmt::format("{},{},{}\n", result.eval_iterations[i], result.eval_rms[i], cfg.fingerprint());
  }
  write_text_file(cfg.output_dir() / "codec_pretrain.csv", csv);
  note(g, fmt::format("codec saved to {} (final RMS {:.6f})", (cfg.output_dir() / "codec.sfm").string(), result.final_rms));
  return codec;
}

int cmd_pretrain_codec(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const auto items = training_images(cfg);
  pretrain_codec(g, cfg, images_of(items));
  return kExitOk;
}

Codec resolve_codec(const Globals& g, const RunConfig& cfg, const std::vector<Image>& images, bool resume) {
  const auto arch = cfg.codec_architecture();
  if (arch.kind == CodecKind::Identity) return Codec::identity();
  const std::string path = cfg.get_string("codec.path");
  if (!path.empty()) {
    Codec codec = Codec::load(path);
    if (codec.kind() != arch.kind || codec.downsample_factor() != arch.downsample_factor) {
      throw UsageError(fmt::format("codec file {} holds a {} codec with factor {}, the config asks for {} with factor {}",
                                   path, to_string(codec.kind()), codec.downsample_factor(), to_string(arch.kind),
                                   arch.downsample_factor));
    }
    return codec;
  }
  const fs::path cached = cfg.output_dir() / "codec.sfm";
  if (resume && fs::exists(cached)) return Codec::load(cached);
  return pretrain_codec(g, cfg, images);
}

int cmd_train(const Globals& g, bool resume, long long stop_after) {
  const RunConfig cfg = load_config(g);
  const auto items = training_images(cfg);
  const auto images = images_of(items);
  Codec codec = resolve_codec(g, cfg, images, resume);
  Model model(cfg.model_architecture(), std::move(codec), cfg.seed());
  model.metadata()["config_fingerprint"] = cfg.fingerprint();
  model.metadata()["config"] = cfg.resolved();

  TrainOptions opts;
  opts.snapshot_path = cfg.output_dir() / "train_snapshot.sfm";
  opts.resume = resume;
  opts.stop_after = stop_after;
  opts.on_iteration = [&](const MetricRecord& r) {
    if (r.iteration % 50 == 0 || !std::isnan(r.holdout_accuracy)) {
      note(g, fmt::format("iter {:>6} stage {} loss {:.5f} L_w {:.5f} smoothed {:.5f}{}", r.iteration, r.stage, r.total,
                          r.watermark, r.smoothed_watermark,
                          std::isnan(r.holdout_accuracy) ? "" : fmt::format(" held-out acc {:.2f}%", r.holdout_accuracy)));
    }
  };
  TrainOutcome outcome;
  try {
    outcome = train(model, images, cfg.train(), opts);
  } catch (const NonConvergence& e) {
    std::string csv = "iteration,watermark_loss,config_fingerprint\n";
    for (std::size_t i = 0; i < e.loss_curve().size(); ++i) {
      csv += fmt::format("{},{},{}\n", i + 1, e.loss_curve()[i], cfg.fingerprint());
    }
    const fs::path curve = cfg.output_dir() / "loss_curve.csv";
    write_text_file(curve, csv);
    std::cerr << "error: " << e.what() << "\nloss curve written to " << curve.string() << '\n';
    return kExitNonConvergence;
  }
  write_text_file(cfg.output_dir() / "metric_log.csv", metric_log_csv(outcome.state.log, cfg.fingerprint()));
  if (!outcome.finished) {
    note(g, fmt::format("stopped after {} iterations; resume with --resume", outcome.state.iteration));
    return kExitOk;
  }
  const fs::path out = checkpoint_path(cfg);
  model.save(out);
  std::cout << fmt::format("trained {} iterations (stage 1: {}), checkpoint {}\n", outcome.state.iteration,
                           outcome.state.stage1_iterations, out.string());
  return kExitOk;
}

fs::path lossless_output(const Globals& g, const RunConfig& cfg, const std::string& requested, const fs::path& input,
                         const std::string& suffix) {
  fs::path out = requested.empty() ? fs::path(input.stem().string() + suffix + ".png") : fs::path(requested);
  std::string ext = out.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext != ".png") {
    out.replace_extension(".png");
    std::cerr << "warning: lossy or unknown output format '" << ext << "' requested; writing lossless " << out.string()
              << " instead\n";
  }
  (void)g;
  return under_output(cfg, out);
}

int cmd_embed(const Globals& g, const std::string& input, const std::string& output, const std::string& message) {
  const RunConfig cfg = load_config(g);
  Model model = load_model(cfg);
  const WatermarkBits bits = WatermarkBits::parse(message, model.message_length());
  const Image image = load_image(input);
  const Image marked = embed(model, image, bits);
  const fs::path out = lossless_output(g, cfg, output, input, "_wm");
  save_png(marked, out);
  std::cout << fmt::format("embedded {} into {} (PSNR {:.2f} dB)\n", bits.to_bitstring(), out.string(),
                           psnr(image, quantize8(marked)));
  return kExitOk;
}

int cmd_extract(const Globals& g, const std::string& input, const std::string& truth) {
  const RunConfig cfg = load_config(g);
  Model model = load_model(cfg);
  std::optional<WatermarkBits> expected;
  if (!truth.empty()) expected = WatermarkBits::parse(truth, model.message_length());
  const Extraction result = extract(model, load_image(input));
  std::cout << result.bits.to_bitstring() << '\n';
  if (result.bits.length() % 4 == 0) std::cout << "hex " << result.bits.to_hex() << '\n';
  if (expected) std::cout << fmt::format("bit accuracy {:.4f}%\n", bit_accuracy(*expected, result.bits));
  return kExitOk;
}

int cmd_attack(const Globals& g, const std::string& input, const std::string& output, const std::string& label,
               const std::string& command) {
  const RunConfig cfg = load_config(g);
  AttackSpec spec = command.empty() ? AttackSpec::parse(label)
                                    : AttackSpec::external(command, std::chrono::milliseconds(cfg.get_int("attack.external_timeout_ms")));
  spec.seed = cfg.seed();
  const Image attacked = apply_attack(load_image(input), spec);
  const fs::path out = lossless_output(g, cfg, output, input, "_attacked");
  save_png(attacked, out);
  std::cout << fmt::format("{} -> {}\n", spec.label(), out.string());
  return kExitOk;
}

int cmd_evaluate(const Globals& g) {
  const RunConfig cfg = load_config(g);
  Model model = load_model(cfg);
  std::string dir = cfg.get_string("dataset.eval_dir");
  const std::string key = dir.empty() ? "dataset.train_dir" : "dataset.eval_dir";
  const auto items = load_dataset(require_dir(cfg, key), cfg.get_int("image_size"),
                                  static_cast<std::size_t>(cfg.get_int("dataset.eval_limit")));
  if (items.empty()) throw UsageError("no evaluation images found");
  const auto grid = cfg.attack_grid();
  note(g, fmt::format("evaluating {} images x {} attacks", items.size(), grid.size()));
  EvalOptions opts{cfg.seed(), g.jobs, cfg.fingerprint()};
  const EvalReport report = evaluate(model, items, grid, opts);
  write_text_file(cfg.output_dir() / "eval_report.json", eval_report_json(report).dump(2) + "\n");
  write_text_file(cfg.output_dir() / "eval_report.csv", eval_report_csv(report));
  if (cfg.get_bool("evaluate.chart")) write_text_file(cfg.output_dir() / "eval_report.svg", eval_report_svg(report));

  std::cout << fmt::format("clean: bit accuracy {:.2f}%  PSNR {:.2f} dB  SSIM {:.4f}\n", report.clean_bit_accuracy,
                           report.mean_psnr, report.mean_ssim);
  for (const auto& row : report.rows) {
    std::cout << fmt::format("{:<18} {:>8}  (evaluated {}, skipped {})\n", row.label,
                             row.mean_bit_accuracy ? fmt::format("{:.2f}%", *row.mean_bit_accuracy) : "n/a",
                             row.evaluated, row.skipped);
  }
  for (const auto& sym : report.symmetric) {
    std::cout << fmt::format("{:<18} {:>8}  (mean of {} and {})\n", sym.label,
                             sym.mean_bit_accuracy ? fmt::format("{:.2f}%", *sym.mean_bit_accuracy) : "n/a",
                             sym.positive, sym.negative);
  }
  for (const auto& [label, ms] : report.external_latency_ms) {
    double total = 0.0;
    for (double v : ms) total += v;
    note(g, fmt::format("external {}: {} runs, mean latency {:.0f} ms", label, ms.size(), total / ms.size()));
  }
  for (const auto& w : report.warnings) std::cerr << "WARNING: " << w << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-simulation-free image watermarking: stability study, training, embedding, extraction and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "Flat JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a config key (key=value); repeatable");
  app.add_option("-j,--jobs", g.jobs, "Worker threads for parallel stages")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress output");
  app.add_flag_callback("--config-keys", [] {
    std::cout << config_documentation();
    throw CLI::Success();
  }, "Print every config key and exit");

  auto* stability = app.add_subcommand("analyze-stability", "Compare low- and high-band spectral stability under attacks");
  auto* pretrain = app.add_subcommand("pretrain-codec", "Pre-train the tiny autoencoder codec");

  auto* train_cmd = app.add_subcommand("train", "Two-stage watermark training");
  bool resume = false;
  long long stop_after = 0;
  train_cmd->add_flag("--resume", resume, "Continue from the latest snapshot in the output directory");
  train_cmd->add_option("--stop-after", stop_after, "Stop after this many total iterations, leaving a snapshot");

  std::string input, output, message, truth, attack_label, command;
  auto* embed_cmd = app.add_subcommand("embed", "Embed a message into an image");
  embed_cmd->add_option("-i,--input", input, "Cover image")->required()->check(CLI::ExistingFile);
  embed_cmd->add_option("-o,--output", output, "Output PNG (relative paths go under output_dir)");
  embed_cmd->add_option("-m,--message", message, "Message as hex (MSB first) or a bitstring of length L")->required();

  auto* extract_cmd = app.add_subcommand("extract", "Recover the message from an image");
  extract_cmd->add_option("-i,--input", input, "Watermarked (possibly attacked) image")->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("-m,--message", truth, "True message, to report bit accuracy");

  auto* attack_cmd = app.add_subcommand("attack", "Apply one attack to an image");
  attack_cmd->add_option("-i,--input", input, "Input image")->required()->check(CLI::ExistingFile);
  attack_cmd->add_option("-o,--output", output, "Output PNG (relative paths go under output_dir)");
  attack_cmd->add_option("-a,--attack", attack_label, "Attack label, e.g. gn:0.1, jpeg:50, gf:5, rd:0.1-0.3");
  attack_cmd->add_option("--command", command, "External editing command using {input} and {output}");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Run the attack grid and write reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (stability->parsed()) return cmd_analyze_stability(g);
    if (pretrain->parsed()) return cmd_pretrain_codec(g);
    if (train_cmd->parsed()) return cmd_train(g, resume, stop_after);
    if (embed_cmd->parsed()) return cmd_embed(g, input, output, message);
    if (extract_cmd->parsed()) return cmd_extract(g, input, truth);
    if (attack_cmd->parsed()) {
      if (attack_label.empty() == command.empty()) throw UsageError("attack needs exactly one of --attack or --command");
      return cmd_attack(g, input, output, attack_label, command);
    }
    if (evaluate_cmd->parsed()) return cmd_evaluate(g);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const CodecLoadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const NonConvergence& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNonConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
