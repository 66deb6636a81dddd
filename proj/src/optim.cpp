#include "sfm/optim.hpp"

#include <cmath>

#include "sfm/errors.hpp"

namespace sfm {

AdamW::AdamW(AdamWSettings settings) : settings_(settings) {
  if (!(settings_.learning_rate >= 0.0) || !(settings_.weight_decay >= 0.0)) {
    throw InvalidArgument("AdamW: learning rate and weight decay must be non-negative");
  }
}

void AdamW::track(const std::string& prefix, std::map<std::string, ag::Var>& params) {
  for (auto& [name, p] : params) {
    const std::string key = prefix + name;
    if (slots_.count(key)) throw InternalConsistencyError("AdamW: parameter tracked twice: " + key);
    slots_.emplace(key, Slot{p, Tensor(p.shape()), Tensor(p.shape())});
  }
}

void AdamW::step() {
  ++steps_;
  const auto& s = settings_;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(steps_));
  for (auto& [_, slot] : slots_) {
    Tensor& value = slot.param.mutable_value();
    const Tensor& grad = slot.param.grad();
    const bool has_grad = grad.size() == value.size();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      slot.m[i] = s.beta1 * slot.m[i] + (1.0 - s.beta1) * g;
      slot.v[i] = s.beta2 * slot.v[i] + (1.0 - s.beta2) * g * g;
      const double update = (slot.m[i] / bc1) / (std::sqrt(slot.v[i] / bc2) + s.eps);
      value[i] -= s.learning_rate * (s.weight_decay * value[i] + update);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [_, slot] : slots_) slot.param.zero_grad();
}

std::map<std::string, Tensor> AdamW::state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, slot] : slots_) {
    out.emplace(name + ".m", slot.m);
    out.emplace(name + ".v", slot.v);
  }
  out.emplace("steps", Tensor({1}, static_cast<double>(steps_)));
  return out;
}

void AdamW::load_state(const std::map<std::string, Tensor>& arrays) {
  auto fetch = [&](const std::string& key, const Tensor& like) {
    auto it = arrays.find(key);
    if (it == arrays.end() || it->second.shape() != like.shape()) {
      throw LoadError("optimizer state is missing or malformed for '" + key + "'");
    }
    return it->second;
  };
  for (auto& [name, slot] : slots_) {
    slot.m = fetch(name + ".m", slot.m);
    slot.v = fetch(name + ".v", slot.v);
  }
  steps_ = static_cast<long long>(fetch("steps", Tensor({1}))[0]);
}

}  // namespace sfm
