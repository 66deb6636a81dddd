#pragma once

// Minimal reverse-mode automatic differentiation over sfm::Tensor.
//
// A Var is a shared handle to a graph node. Ops record their parents and a
// backward closure only when at least one input requires a gradient, so pure
// inference builds no graph. There is no global tape: graphs are owned by the
// Vars that reference them and are freed when the last handle goes away.

#include <functional>
#include <memory>
#include <vector>

#include "sfm/tensor.hpp"

namespace sfm::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();
  bool defined() const noexcept { return static_cast<bool>(node_); }

  // Scalar convenience for 1-element values.
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

  static Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

 private:
  std::shared_ptr<Node> node_;
};

// While alive, ops on this thread record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// Accumulates d(root)/d(node) into every reachable node that requires a gradient.
// `root` must hold a single element.
void backward(const Var& root);

Var constant(Tensor value);

// Elementwise arithmetic; operands must share a shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
// Subgradient 0 at the origin.
Var abs(const Var& a);
// Gradient passes where lo <= x <= hi.
Var clamp(const Var& a, double lo, double hi);
Var selu(const Var& a);
Var sigmoid(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);
// Concatenate NCHW tensors along the channel axis.
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& a, int begin, int count);

// x: [N,Ci,H,W], weight: [Co,Ci,k,k], bias: [Co] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// x: [N,F], weight: [O,F], bias: [O].
Var linear(const Var& x, const Var& weight, const Var& bias);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Training mode normalizes with batch statistics and updates the running
// estimates (unbiased variance); evaluation mode uses the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

Var avg_pool2(const Var& x);
// Bin edges floor(i*H/out) .. ceil((i+1)*H/out); also handles out > H.
Var adaptive_avg_pool(const Var& x, int out_h, int out_w);
// Half-pixel-centred bilinear resampling (align_corners = false).
Var resize_bilinear(const Var& x, int out_h, int out_w);

// Applies a per-plane linear operator to every (n, c) plane of an NCHW tensor.
// `adjoint` must be the exact transpose of `forward`; for self-adjoint operators
// pass the same function twice.
using PlaneOp = std::function<void(const double* in, double* out, int h, int w)>;
Var plane_linear(const Var& x, PlaneOp forward, PlaneOp adjoint);

// Mean binary cross-entropy; probabilities are clamped to [eps, 1-eps].
Var binary_cross_entropy(const Var& prob, const Tensor& target, double eps = 1e-7);

}  // namespace sfm::ag
