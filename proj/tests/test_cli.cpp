#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sfm/checkpoint.hpp"
#include "sfm/image.hpp"
#include "test_data.hpp"

namespace fs = std::filesystem;
using namespace sfm;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt";
  const std::string cmd = std::string(SFM_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out);
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fixtures::fresh_dir("cli");
    fixtures::write_dataset(dir_ / "data", fixtures::natural_crops(100, 32, 31));
    config_ = {{"seed", 4},
               {"output_dir", (dir_ / "out").string()},
               {"image_size", 32},
               {"watermark.length", 8},
               {"dataset.train_dir", (dir_ / "data").string()},
               {"dataset.eval_limit", 4},
               {"codec.width", 8},
               {"codec.pretrain.max_iterations", 20},
               {"codec.pretrain.eval_every", 10},
               {"embedder.hidden_width", 16},
               {"embedder.grid", 8},
               {"embedder.channels", 8},
               {"embedder.aux_widths", {8, 4, 4}},
               {"embedder.fused_widths", {8, 8, 4, 4}},
               {"embedder.watermark_widths", {8, 4, 4, 4}},
               {"extract_net.feature_widths", {4, 4}},
               {"extract_net.pool_size", 8},
               {"extract_net.decode_widths", {4}},
               {"extract_net.fc_widths", {16, 16}},
               {"train.learning_rate", 1e-3},
               {"train.stage_switch_threshold", 10.0},
               {"train.smoothing_window", 3},
               {"train.max_iterations", 20},
               {"train.stage2_iterations", 2},
               {"train.eval_every", 5},
               {"train.holdout_size", 2},
               {"train.snapshot_every", 0},
               {"attack.grid", {"gn:0.1", "brightness:0.15", "brightness:-0.15"}},
               {"stability.image_limit", 4}};
    write_config();
  }

  void write_config() { write_text_file(dir_ / "config.json", config_.dump()); }
  std::string cfg() const { return "-q -c " + (dir_ / "config.json").string(); }
  std::string file(const std::string& name) const { return read_text_file(dir_ / "out" / name); }

  fs::path dir_;
  nlohmann::json config_;
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help", dir_).code, 0);
  EXPECT_EQ(run("", dir_).code, 2);
  EXPECT_EQ(run("frobnicate", dir_).code, 2);
  EXPECT_EQ(run(cfg() + " --set train.learnig_rate=1 train", dir_).code, 2);
  EXPECT_EQ(run(cfg() + " --set image_size=30 train", dir_).code, 2);
  EXPECT_EQ(run(cfg() + " --set dataset.train_dir=/nonexistent train", dir_).code, 2);
  EXPECT_EQ(run("-c /nonexistent.json train", dir_).code, 2);
  const Result keys = run("--config-keys", dir_);
  EXPECT_EQ(keys.code, 0);
  EXPECT_NE(keys.out.find("train.learning_rate"), std::string::npos);
}

TEST_F(Cli, TrainEmbedExtractAttackEvaluate) {
  ASSERT_EQ(run(cfg() + " train", dir_).code, 0);
  ASSERT_TRUE(fs::exists(dir_ / "out" / "model.sfm"));
  ASSERT_TRUE(fs::exists(dir_ / "out" / "codec.sfm"));
  const std::string log = file("metric_log.csv");
  EXPECT_NE(log.find("config_fingerprint"), std::string::npos);

  const std::string img = (dir_ / "data" / "img_0000.png").string();
  ASSERT_EQ(run(cfg() + " embed -i " + img + " -o marked.png -m 10110010", dir_).code, 0);
  ASSERT_TRUE(fs::exists(dir_ / "out" / "marked.png"));
  const Result ext = run(cfg() + " extract -i " + (dir_ / "out" / "marked.png").string() + " -m b2", dir_);
  EXPECT_EQ(ext.code, 0);
  EXPECT_EQ(ext.out.find_first_not_of("01"), 8u);
  EXPECT_NE(ext.out.find("bit accuracy"), std::string::npos);

  EXPECT_EQ(run(cfg() + " embed -i " + img + " -m 101", dir_).code, 2);
  EXPECT_EQ(run(cfg() + " attack -i " + img + " -a gn:0.1 -o noisy.png", dir_).code, 0);
  EXPECT_EQ(load_image(dir_ / "out" / "noisy.png").height(), 32);
  EXPECT_EQ(run(cfg() + " attack -i " + img + " -o x.png", dir_).code, 2);
  EXPECT_EQ(run(cfg() + " attack -i " + img + " -a blur:3", dir_).code, 2);
  // Lossy output formats are replaced by PNG.
  EXPECT_EQ(run(cfg() + " attack -i " + img + " -a gf:3 -o blurred.jpg", dir_).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "blurred.png"));

  const Result ev = run(cfg() + " evaluate", dir_);
  ASSERT_EQ(ev.code, 0);
  EXPECT_NE(ev.out.find("brightness:+-0.15"), std::string::npos);
  const std::string report = file("eval_report.json");
  const std::string csv = file("eval_report.csv");
  const auto j = nlohmann::json::parse(report);
  EXPECT_EQ(j["image_count"], 4);
  EXPECT_EQ(j["attacks"].size(), 3u);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "eval_report.svg"));
  ASSERT_EQ(run(cfg() + " -j 2 evaluate", dir_).code, 0);
  EXPECT_EQ(file("eval_report.json"), report);
  EXPECT_EQ(file("eval_report.csv"), csv);
}

TEST_F(Cli, RepeatedTrainingIsByteIdentical) {
  ASSERT_EQ(run(cfg() + " train", dir_).code, 0);
  const std::string model = file("model.sfm");
  const std::string log = file("metric_log.csv");
  fs::remove_all(dir_ / "out");
  ASSERT_EQ(run(cfg() + " train", dir_).code, 0);
  EXPECT_EQ(file("model.sfm"), model);
  EXPECT_EQ(file("metric_log.csv"), log);
}

TEST_F(Cli, InterruptedTrainingResumes) {
  config_["train.stage_switch_threshold"] = 1e-9;
  config_["train.max_iterations"] = 6;
  config_["train.snapshot_every"] = 2;
  write_config();
  ASSERT_EQ(run(cfg() + " train --stop-after 3", dir_).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "train_snapshot.sfm"));
  EXPECT_FALSE(fs::exists(dir_ / "out" / "model.sfm"));
  // The resumed run still fails to converge, and says so with exit code 3.
  EXPECT_EQ(run(cfg() + " train --resume", dir_).code, 3);
  const std::string curve = file("loss_curve.csv");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 7);
}

TEST_F(Cli, NonConvergenceExitCode) {
  config_["train.stage_switch_threshold"] = 1e-9;
  config_["train.max_iterations"] = 4;
  write_config();
  EXPECT_EQ(run(cfg() + " train", dir_).code, 3);
  const std::string curve = file("loss_curve.csv");
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "iteration,watermark_loss,config_fingerprint");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 5);
}

TEST_F(Cli, MissingCheckpointIsInvalidInput) {
  const std::string img = (dir_ / "data" / "img_0000.png").string();
  EXPECT_EQ(run(cfg() + " extract -i " + img, dir_).code, 2);
  EXPECT_EQ(run(cfg() + " evaluate", dir_).code, 2);
  write_text_file(dir_ / "out" / "model.sfm", "garbage");
  EXPECT_EQ(run(cfg() + " extract -i " + img, dir_).code, 2);
}

TEST_F(Cli, StabilityStudyIsReproducible) {
  const Result a = run(cfg() + " analyze-stability", dir_);
  ASSERT_EQ(a.code, 0);
  const std::string csv = file("stability.csv");
  const std::string json = file("stability.json");
  EXPECT_NE(a.out.find("gn:0.1"), std::string::npos);
  ASSERT_EQ(run(cfg() + " -j 3 analyze-stability", dir_).code, 0);
  EXPECT_EQ(file("stability.csv"), csv);
  EXPECT_EQ(file("stability.json"), json);
}

TEST_F(Cli, PretrainCodecWritesCurve) {
  ASSERT_EQ(run(cfg() + " pretrain-codec", dir_).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "codec.sfm"));
  const std::string curve = file("codec_pretrain.csv");
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "iteration,reconstruction_rms,config_fingerprint");
  EXPECT_EQ(run(cfg() + " --set codec.kind=identity pretrain-codec", dir_).code, 2);
}
