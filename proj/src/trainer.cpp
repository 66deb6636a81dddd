#include "sfm/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sfm/errors.hpp"
#include "sfm/optim.hpp"
#include "sfm/pipeline.hpp"
#include "sfm/rng.hpp"

namespace sfm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kLogColumns = 9;

nlohmann::json weights_json(const LossWeights& w) { return {w.watermark, w.l2, w.ssim, w.jnd}; }

// Per-image tensors that never change during training (the codec is frozen).
struct Sample {
  Tensor original;  // [1,3,H,W]
  Tensor high;      // [1,3,H,W]
  Tensor latent;    // [1,4,H',W']
  Tensor jnd;       // [1,3,H,W]
};

Tensor stack(const std::vector<const Tensor*>& parts) {
  Shape shape = parts.front()->shape();
  shape[0] = static_cast<int>(parts.size());
  Tensor out(shape);
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    std::copy(p->data(), p->data() + p->size(), out.data() + off);
    off += p->size();
  }
  return out;
}

class Run {
 public:
  Run(Model& model, std::span<const Image> images, const TrainConfig& cfg, const TrainOptions& opts)
      : model_(model), cfg_(cfg), opts_(opts), optimizer_({cfg.learning_rate, cfg.weight_decay}) {
    const std::size_t n = images.size();
    const std::size_t holdout = static_cast<std::size_t>(cfg.holdout_size);
    if (n < holdout + static_cast<std::size_t>(cfg.batch_size)) {
      throw InvalidArgument(fmt::format("training needs at least {} images (batch {} + held-out {}), got {}",
                                        holdout + cfg.batch_size, cfg.batch_size, holdout, n));
    }
    ag::NoGradGuard no_grad;
    for (std::size_t i = 0; i < n - holdout; ++i) samples_.push_back(prepare(images[i]));
    for (std::size_t i = n - holdout; i < n; ++i) {
      holdout_images_.push_back(images[i]);
      Rng rng = make_rng(cfg.seed, {stable_hash("holdout"), i - (n - holdout)});
      holdout_messages_.push_back(WatermarkBits::random(cfg.watermark_length, rng));
    }
    optimizer_.track("embedder.", model_.embedder().params().params());
    optimizer_.track("extractor.", model_.extractor_net().params().params());
    fingerprint_ = sha256_hex(cfg.to_json().dump() + model_.architecture().to_json().dump());
  }

  TrainOutcome execute() {
    const std::string codec_hash = model_.codec().parameter_hash();
    if (opts_.resume && !opts_.snapshot_path.empty() && std::filesystem::exists(opts_.snapshot_path)) restore();

    TrainOutcome outcome;
    while (true) {
      if (state_.stage == 1 && state_.iteration >= cfg_.max_iterations) {
        std::vector<double> curve;
        for (const auto& r : state_.log) curve.push_back(r.watermark);
        throw NonConvergence(fmt::format("stage 1 did not reach a smoothed watermark loss below {} within {} iterations "
                                         "(last smoothed value {})",
                                         cfg_.stage_switch_threshold, cfg_.max_iterations, state_.smoothed()),
                             std::move(curve));
      }
      if (state_.stage == 2 && state_.iteration >= state_.stage1_iterations + stage2_budget()) {
        outcome.finished = true;
        break;
      }
      if (opts_.stop_after > 0 && state_.iteration >= opts_.stop_after) break;
      step();
      if (!opts_.snapshot_path.empty() && cfg_.snapshot_every > 0 && state_.iteration % cfg_.snapshot_every == 0) {
        snapshot();
      }
    }
    if (model_.codec().parameter_hash() != codec_hash) {
      throw InternalConsistencyError("codec parameters changed during watermark training");
    }
    if (!opts_.snapshot_path.empty()) snapshot();
    model_.metadata()["training"] = {{"stage_reached", state_.stage},
                                     {"iterations", state_.iteration},
                                     {"stage1_iterations", state_.stage1_iterations},
                                     {"finished", outcome.finished},
                                     {"config", cfg_.to_json()}};
    model_.attachments()["metric_log"] = metric_log_tensor(state_.log);
    outcome.state = state_;
    return outcome;
  }

 private:
  long long stage2_budget() const {
    return cfg_.stage2_iterations > 0 ? cfg_.stage2_iterations : state_.stage1_iterations;
  }

  Sample prepare(const Image& image) {
    if (image.height() != cfg_.image_size || image.width() != cfg_.image_size || image.channels() != 3) {
      throw InvalidArgument(fmt::format("training images must be 3 x {0} x {0}", cfg_.image_size));
    }
    const BandPair bands = decompose(image, model_.extractor());
    Sample s;
    s.original = to_batch(image);
    s.high = to_batch(bands.high_image);
    s.latent = model_.codec().encode(bands.low_image).as_batch();
    s.jnd = jnd_weight(compute_jnd(image), 3);
    return s;
  }

  std::vector<std::size_t> batch_indices(long long iteration) const {
    const std::size_t n = samples_.size();
    std::vector<std::size_t> out;
    for (int b = 0; b < cfg_.batch_size; ++b) {
      const std::uint64_t k = static_cast<std::uint64_t>(iteration) * cfg_.batch_size + b;
      const std::uint64_t epoch = k / n;
      if (epoch != perm_epoch_ || perm_.empty()) {
        perm_.resize(n);
        std::iota(perm_.begin(), perm_.end(), std::size_t{0});
        Rng rng = make_rng(cfg_.seed, {stable_hash("epoch"), epoch});
        std::shuffle(perm_.begin(), perm_.end(), rng);
        perm_epoch_ = epoch;
      }
      out.push_back(perm_[k % n]);
    }
    return out;
  }

  void step() {
    const long long t = state_.iteration;
    const LossWeights& weights = state_.stage == 1 ? cfg_.stage1_weights : cfg_.stage2_weights;
    const auto idx = batch_indices(t);
    Rng rng = make_rng(cfg_.seed, {stable_hash("watermark"), static_cast<std::uint64_t>(t)});
    std::vector<WatermarkBits> messages;
    std::vector<const Tensor*> orig, high, lat, jnd;
    for (std::size_t i : idx) {
      messages.push_back(WatermarkBits::random(cfg_.watermark_length, rng));
      orig.push_back(&samples_[i].original);
      high.push_back(&samples_[i].high);
      lat.push_back(&samples_[i].latent);
      jnd.push_back(&samples_[i].jnd);
    }
    const ag::Var original = ag::constant(stack(orig));
    const auto embedded = model_.embedder().forward(ag::constant(stack(lat)), ag::constant(normalized_batch(messages)), true);
    const ag::Var low_w = model_.codec().decode(embedded.latent);
    const ag::Var marked = ag::clamp(ag::add(low_w, ag::constant(stack(high))), 0.0, 1.0);
    const ag::Var probs = model_.extractor_net().forward(low_pass(marked, model_.extractor()), true);

    LossTermVars terms{watermark_loss(target_batch(messages), probs), l2_loss(original, marked),
                       ssim_loss(original, marked), jnd_loss(original, marked, stack(jnd))};
    const ag::Var total = total_loss(terms, weights);

    optimizer_.zero_grad();
    ag::backward(total);
    optimizer_.step();

    MetricRecord r;
    r.iteration = t + 1;
    r.stage = state_.stage;
    r.total = total.item();
    r.watermark = terms.watermark.item();
    r.l2 = terms.l2.item();
    r.ssim = terms.ssim.item();
    r.jnd = terms.jnd.item();
    state_.window.push_back(r.watermark);
    if (state_.window.size() > static_cast<std::size_t>(cfg_.smoothing_window)) state_.window.pop_front();
    r.smoothed_watermark =
        state_.window.size() == static_cast<std::size_t>(cfg_.smoothing_window) ? state_.smoothed() : kNaN;
    r.holdout_accuracy = kNaN;
    if (cfg_.eval_every > 0 && r.iteration % cfg_.eval_every == 0 && !holdout_images_.empty()) {
      r.holdout_accuracy = evaluate_batch(model_, holdout_images_, holdout_messages_).bit_accuracy;
    }
    state_.iteration = r.iteration;
    if (state_.stage == 1 && !std::isnan(r.smoothed_watermark) && r.smoothed_watermark < cfg_.stage_switch_threshold) {
      state_.stage = 2;
      state_.stage1_iterations = r.iteration;
    }
    state_.log.push_back(r);
    if (opts_.on_iteration) opts_.on_iteration(r);
  }

  void snapshot() const {
    Checkpoint ckpt = model_.to_checkpoint();
    ckpt.insert("optim.", optimizer_.state());
    ckpt.arrays["train.log"] = metric_log_tensor(state_.log);
    ckpt.arrays["train.window"] = Tensor({static_cast<int>(state_.window.size())},
                                         std::vector<double>(state_.window.begin(), state_.window.end()));
    ckpt.metadata["train_state"] = {{"iteration", state_.iteration},
                                    {"stage", state_.stage},
                                    {"stage1_iterations", state_.stage1_iterations},
                                    {"fingerprint", fingerprint_}};
    write_checkpoint(opts_.snapshot_path, ckpt);
  }

  void restore() {
    const Checkpoint ckpt = read_checkpoint(opts_.snapshot_path);
    const auto& ts = ckpt.metadata.at("train_state");
    if (ts.at("fingerprint").get<std::string>() != fingerprint_) {
      throw LoadError("snapshot " + opts_.snapshot_path.string() + " was written by a different configuration");
    }
    if (ckpt.metadata.at("codec").at("parameter_hash").get<std::string>() != model_.codec().parameter_hash()) {
      throw LoadError("snapshot " + opts_.snapshot_path.string() + " was written with a different codec");
    }
    model_.embedder().params().load_state(ckpt.with_prefix("embedder."));
    model_.extractor_net().params().load_state(ckpt.with_prefix("extractor."));
    optimizer_.load_state(ckpt.with_prefix("optim."));
    state_.iteration = ts.at("iteration").get<long long>();
    state_.stage = ts.at("stage").get<int>();
    state_.stage1_iterations = ts.at("stage1_iterations").get<long long>();
    const Tensor& window = ckpt.arrays.at("train.window");
    state_.window.assign(window.data(), window.data() + window.size());
    state_.log = metric_log_from_tensor(ckpt.arrays.at("train.log"));
  }

  Model& model_;
  const TrainConfig& cfg_;
  const TrainOptions& opts_;
  AdamW optimizer_;
  std::vector<Sample> samples_;
  std::vector<Image> holdout_images_;
  std::vector<WatermarkBits> holdout_messages_;
  TrainState state_;
  std::string fingerprint_;
  mutable std::vector<std::size_t> perm_;
  mutable std::uint64_t perm_epoch_ = 0;
};

}  // namespace

double TrainState::smoothed() const {
  if (window.empty()) return kNaN;
  return std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
}

void TrainConfig::validate(int downsample_factor) const {
  if (!(learning_rate >= 0.0)) throw InvalidArgument("train.learning_rate must be non-negative");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("train.weight_decay must be non-negative");
  if (batch_size < 1) throw InvalidArgument("train.batch_size must be positive");
  if (watermark_length < 1) throw InvalidArgument("watermark length must be positive");
  if (image_size < 8) throw InvalidArgument("image_size must be at least 8");
  if (downsample_factor < 1 || image_size % downsample_factor != 0) {
    throw InvalidArgument(fmt::format("image_size {} is not divisible by the codec downsample factor {}", image_size,
                                      downsample_factor));
  }
  if (!(stage_switch_threshold > 0.0)) throw InvalidArgument("train.stage_switch_threshold must be positive");
  if (smoothing_window < 1) throw InvalidArgument("train.smoothing_window must be positive");
  if (max_iterations < 1) throw InvalidArgument("train.max_iterations must be positive");
  if (stage2_iterations < 0) throw InvalidArgument("train.stage2_iterations must be non-negative");
  if (eval_every < 0 || holdout_size < 0 || snapshot_every < 0) {
    throw InvalidArgument("train.eval_every, train.holdout_size and train.snapshot_every must be non-negative");
  }
  stage1_weights.validate();
  stage2_weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"image_size", image_size},
          {"watermark_length", watermark_length},
          {"stage1_weights", weights_json(stage1_weights)},
          {"stage2_weights", weights_json(stage2_weights)},
          {"stage_switch_threshold", stage_switch_threshold},
          {"smoothing_window", smoothing_window},
          {"max_iterations", max_iterations},
          {"stage2_iterations", stage2_iterations},
          {"eval_every", eval_every},
          {"holdout_size", holdout_size},
          {"seed", seed}};
}

TrainOutcome train(Model& model, std::span<const Image> images, const TrainConfig& config, const TrainOptions& options) {
  config.validate(model.codec().downsample_factor());
  if (config.watermark_length != model.message_length()) {
    throw InvalidArgument("train.watermark_length does not match the model");
  }
  if (!model.codec().frozen()) throw InvalidArgument("the codec must be frozen before watermark training");
  Run run(model, images, config, options);
  return run.execute();
}

std::string metric_log_csv(const std::vector<MetricRecord>& log, const std::string& config_fingerprint) {
  const bool fp = !config_fingerprint.empty();
  std::string out = "iteration,stage,total,watermark,l2,ssim,jnd,smoothed_watermark,holdout_bit_accuracy";
  out += fp ? ",config_fingerprint\n" : "\n";
  auto num = [](double v) { return std::isnan(v) ? std::string() : fmt::format("{}", v); };
  for (const auto& r : log) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}", r.iteration, r.stage, num(r.total), num(r.watermark), num(r.l2),
                       num(r.ssim), num(r.jnd), num(r.smoothed_watermark), num(r.holdout_accuracy));
    out += fp ? "," + config_fingerprint + "\n" : "\n";
  }
  return out;
}

Tensor metric_log_tensor(const std::vector<MetricRecord>& log) {
  Tensor t({static_cast<int>(log.size()), kLogColumns});
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& r = log[i];
    const double row[kLogColumns] = {static_cast<double>(r.iteration), static_cast<double>(r.stage), r.total,
                                     r.watermark, r.l2, r.ssim, r.jnd, r.smoothed_watermark, r.holdout_accuracy};
    std::copy(row, row + kLogColumns, t.data() + i * kLogColumns);
  }
  return t;
}

std::vector<MetricRecord> metric_log_from_tensor(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != kLogColumns) throw LoadError("malformed metric log");
  std::vector<MetricRecord> log(static_cast<std::size_t>(t.dim(0)));
  for (std::size_t i = 0; i < log.size(); ++i) {
    const double* row = t.data() + i * kLogColumns;
    auto& r = log[i];
    r.iteration = static_cast<long long>(row[0]);
    r.stage = static_cast<int>(row[1]);
    r.total = row[2];
    r.watermark = row[3];
    r.l2 = row[4];
    r.ssim = row[5];
    r.jnd = row[6];
    r.smoothed_watermark = row[7];
    r.holdout_accuracy = row[8];
  }
  return log;
}

}  // namespace sfm
