#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfm/image.hpp"
#include "sfm/losses.hpp"
#include "sfm/model.hpp"

namespace sfm {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  int batch_size = 2;
  int image_size = 512;
  int watermark_length = 64;
  LossWeights stage1_weights = LossWeights::stage1();
  LossWeights stage2_weights = LossWeights::stage2();
  double stage_switch_threshold = 0.05;
  int smoothing_window = 100;
  int max_iterations = 5000;    // stage-1 budget
  int stage2_iterations = 0;    // 0: as many as stage 1 used
  int eval_every = 100;         // held-out bit accuracy cadence
  int holdout_size = 8;         // images reserved from the end of the dataset
  int snapshot_every = 500;     // 0: only at the end or on interruption
  std::uint64_t seed = 0;

  // Throws InvalidArgument; `downsample_factor` is the codec's.
  void validate(int downsample_factor) const;
  nlohmann::json to_json() const;
};

struct MetricRecord {
  long long iteration = 0;  // 1-based
  int stage = 1;
  double total = 0.0;
  double watermark = 0.0;
  double l2 = 0.0;
  double ssim = 0.0;
  double jnd = 0.0;
  double smoothed_watermark = 0.0;  // NaN until the window is full
  double holdout_accuracy = 0.0;    // NaN when not evaluated at this iteration
};

struct TrainState {
  long long iteration = 0;
  int stage = 1;
  long long stage1_iterations = 0;  // set when stage 1 ends
  std::deque<double> window;
  std::vector<MetricRecord> log;

  double smoothed() const;
};

struct TrainOptions {
  // Where resumable snapshots go; empty disables them.
  std::filesystem::path snapshot_path;
  bool resume = false;
  // When > 0, stop (writing a snapshot) once this many iterations have run.
  long long stop_after = 0;
  std::function<void(const MetricRecord&)> on_iteration;
};

struct TrainOutcome {
  TrainState state;
  bool finished = false;
};

// Two-stage training of the embedder and extractor with the codec frozen.
// Stage 1 uses stage1_weights until the moving average of the watermark loss
// over `smoothing_window` iterations drops below the threshold, otherwise
// throws NonConvergence with the raw watermark-loss curve. Stage 2 then runs
// with stage2_weights for its budget. A non-finite loss throws
// TrainingDivergence. Batches, watermarks and held-out messages come from
// counter-based streams, so a resumed run reproduces an uninterrupted one.
TrainOutcome train(Model& model, std::span<const Image> images, const TrainConfig& config,
                   const TrainOptions& options = {});

// A non-empty fingerprint is added as a trailing column.
std::string metric_log_csv(const std::vector<MetricRecord>& log, const std::string& config_fingerprint = "");
Tensor metric_log_tensor(const std::vector<MetricRecord>& log);
std::vector<MetricRecord> metric_log_from_tensor(const Tensor& t);

}  // namespace sfm
