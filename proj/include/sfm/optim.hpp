#pragma once

#include <map>
#include <string>

#include "sfm/autograd.hpp"

namespace sfm {

struct AdamWSettings {
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay: p <- p - lr * (wd * p + m_hat / (sqrt(v_hat) + eps)).
// Both parts scale with the learning rate, so lr = 0 leaves parameters untouched.
class AdamW {
 public:
  explicit AdamW(AdamWSettings settings = {});

  // Adds parameters (by name) to the optimiser. Names must be unique.
  void track(const std::string& prefix, std::map<std::string, ag::Var>& params);
  void step();
  void zero_grad();

  const AdamWSettings& settings() const noexcept { return settings_; }
  void set_learning_rate(double lr) { settings_.learning_rate = lr; }
  long long steps() const noexcept { return steps_; }

  // Moments and step count, for resumable snapshots.
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& arrays);

 private:
  struct Slot {
    ag::Var param;
    Tensor m, v;
  };

  AdamWSettings settings_;
  std::map<std::string, Slot> slots_;
  long long steps_ = 0;
};

}  // namespace sfm
