#pragma once

#include <map>
#include <string>

#include "sfm/autograd.hpp"
#include "sfm/rng.hpp"

namespace sfm::nn {

// Named parameters and non-trainable buffers of one network. Names are the
// keys used in checkpoints; std::map keeps iteration order stable.
class ParamStore {
 public:
  ag::Var& add_param(const std::string& name, Tensor init);
  ag::BatchNormState& add_batch_norm(const std::string& name, int channels);

  std::map<std::string, ag::Var>& params() { return params_; }
  const std::map<std::string, ag::Var>& params() const { return params_; }
  std::map<std::string, ag::BatchNormState>& batch_norms() { return bn_; }
  const std::map<std::string, ag::BatchNormState>& batch_norms() const { return bn_; }

  void set_trainable(bool on);
  void zero_grad();

  // Flattened view of every parameter value and buffer, name-prefixed. Used
  // for checkpoints and for the codec freeze hash.
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& arrays, const std::string& prefix = "");
  std::size_t parameter_count() const;

 private:
  std::map<std::string, ag::Var> params_;
  std::map<std::string, ag::BatchNormState> bn_;
};

// LeCun-normal initialisation, the usual pairing for SELU networks.
Tensor lecun_normal(Shape shape, int fan_in, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride, Rng& rng,
         bool zero_init = false);

  ag::Var forward(const ag::Var& x) const;
  int out_channels() const { return out_; }

 private:
  ag::Var weight_, bias_;
  int out_ = 0, stride_ = 1, pad_ = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& store, const std::string& name, int channels);

  ag::Var forward(const ag::Var& x, bool training);

 private:
  ag::Var gamma_, beta_;
  ag::BatchNormState* state_ = nullptr;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng);

  ag::Var forward(const ag::Var& x) const;

 private:
  ag::Var weight_, bias_;
};

// 3x3 convolution (stride 1, pad 1), batch normalisation, SELU.
class ConvBnSelu {
 public:
  ConvBnSelu() = default;
  ConvBnSelu(ParamStore& store, const std::string& name, int in, int out, Rng& rng);

  ag::Var forward(const ag::Var& x, bool training);
  int out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
};

}  // namespace sfm::nn
