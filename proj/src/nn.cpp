#include "sfm/nn.hpp"

#include <cmath>

#include "sfm/errors.hpp"

namespace sfm::nn {

ag::Var& ParamStore::add_param(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.emplace(name, ag::Var(std::move(init), true));
  if (!inserted) throw InternalConsistencyError("duplicate parameter name: " + name);
  return it->second;
}

ag::BatchNormState& ParamStore::add_batch_norm(const std::string& name, int channels) {
  ag::BatchNormState st;
  st.running_mean = Tensor({channels}, 0.0);
  st.running_var = Tensor({channels}, 1.0);
  auto [it, inserted] = bn_.emplace(name, std::move(st));
  if (!inserted) throw InternalConsistencyError("duplicate batch-norm name: " + name);
  return it->second;
}

void ParamStore::set_trainable(bool on) {
  for (auto& [_, p] : params_) {
    p.set_requires_grad(on);
    if (!on) p.zero_grad();
  }
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

std::map<std::string, Tensor> ParamStore::state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params_) out.emplace(name, p.value());
  for (const auto& [name, st] : bn_) {
    out.emplace(name + ".running_mean", st.running_mean);
    out.emplace(name + ".running_var", st.running_var);
  }
  return out;
}

void ParamStore::load_state(const std::map<std::string, Tensor>& arrays, const std::string& prefix) {
  auto fetch = [&](const std::string& name, const Tensor& like) -> const Tensor& {
    auto it = arrays.find(prefix + name);
    if (it == arrays.end()) throw LoadError("missing array '" + prefix + name + "'");
    if (it->second.shape() != like.shape()) {
      throw LoadError("array '" + prefix + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                      shape_str(like.shape()));
    }
    return it->second;
  };
  for (auto& [name, p] : params_) p.mutable_value() = fetch(name, p.value());
  for (auto& [name, st] : bn_) {
    st.running_mean = fetch(name + ".running_mean", st.running_mean);
    st.running_var = fetch(name + ".running_var", st.running_var);
  }
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value().size();
  return n;
}

Tensor lecun_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
               bool zero_init)
    : out_(out), stride_(stride), pad_(kernel / 2) {
  if (in <= 0 || out <= 0 || kernel <= 0 || kernel % 2 == 0 || stride <= 0) {
    throw InternalConsistencyError("conv '" + name + "': invalid geometry");
  }
  Shape ws{out, in, kernel, kernel};
  weight_ = store.add_param(name + ".weight", zero_init ? Tensor(ws, 0.0) : lecun_normal(ws, in * kernel * kernel, rng));
  bias_ = store.add_param(name + ".bias", Tensor({out}, 0.0));
}

ag::Var Conv2d::forward(const ag::Var& x) const { return ag::conv2d(x, weight_, bias_, stride_, pad_); }

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, int channels) {
  gamma_ = store.add_param(name + ".gamma", Tensor({channels}, 1.0));
  beta_ = store.add_param(name + ".beta", Tensor({channels}, 0.0));
  state_ = &store.add_batch_norm(name, channels);
}

ag::Var BatchNorm2d::forward(const ag::Var& x, bool training) {
  return ag::batch_norm(x, gamma_, beta_, *state_, training);
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
  if (in <= 0 || out <= 0) throw InternalConsistencyError("linear '" + name + "': invalid widths");
  weight_ = store.add_param(name + ".weight", lecun_normal({out, in}, in, rng));
  bias_ = store.add_param(name + ".bias", Tensor({out}, 0.0));
}

ag::Var Linear::forward(const ag::Var& x) const { return ag::linear(x, weight_, bias_); }

ConvBnSelu::ConvBnSelu(ParamStore& store, const std::string& name, int in, int out, Rng& rng)
    : conv_(store, name + ".conv", in, out, 3, 1, rng), bn_(store, name + ".bn", out) {}

ag::Var ConvBnSelu::forward(const ag::Var& x, bool training) {
  return ag::selu(bn_.forward(conv_.forward(x), training));
}

}  // namespace sfm::nn
