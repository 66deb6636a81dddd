#include "sfm/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "sfm/errors.hpp"

namespace sfm::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;
using StridedCMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

constexpr double kSeluScale = 1.0507009873554804934193349852946;
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
}

void require_rank4(const Var& a, const char* op) {
  if (a.value().rank() != 4) {
    throw InvalidArgument(std::string(op) + ": expected NCHW tensor, got " + shape_str(a.shape()));
  }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

double Var::item() const {
  if (node_->value.size() != 1) throw InvalidArgument("item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() noexcept { return t_grad_enabled; }

Var Var::make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  bool needs = t_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw InvalidArgument("backward: root must be a single-element value");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(n, k);
      if (!p.requires_grad) continue;
      Tensor& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    if (parent(n, 0).requires_grad) {
      Tensor& g = parent(n, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (parent(n, 1).requires_grad) {
      Tensor& g = parent(n, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out = a.value();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return Var::make(std::move(out), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i] * n.value[i] / pb.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return Var::make(std::move(out), {a}, [s](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += s;
  return Var::make(std::move(out), {a}, [](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= v;
  return Var::make(std::move(out), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p.value[i] * n.grad[i];
  });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::fabs(v);
  return Var::make(std::move(out), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p.value[i];
      g[i] += (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)) * n.grad[i];
    }
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::clamp(v, lo, hi);
  return Var::make(std::move(out), {a}, [lo, hi](Node& n) {
    Node& p = parent(n, 0);
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p.value[i];
      if (x >= lo && x <= hi) g[i] += n.grad[i];
    }
  });
}

Var selu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? kSeluScale * v : kSeluScale * kSeluAlpha * std::expm1(v);
  return Var::make(std::move(out), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = p.value[i] > 0.0 ? kSeluScale : n.value[i] + kSeluScale * kSeluAlpha;
      g[i] += d * n.grad[i];
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return Var::make(std::move(out), {a}, [](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = n.value[i];
      g[i] += y * (1.0 - y) * n.grad[i];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return Var::make(Tensor({1}, s), {a}, [](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    for (auto& v : g.values()) v += n.grad[0];
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  if (count == 0) throw InvalidArgument("mean of empty tensor");
  return scale(sum(a), 1.0 / count);
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return Var::make(std::move(out), {a}, [](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_channels: no inputs");
  for (const auto& p : parts) require_rank4(p, "concat_channels");
  const int batch = parts[0].value().dim(0);
  const int h = parts[0].value().dim(2);
  const int w = parts[0].value().dim(3);
  int channels = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s[0] != batch || s[2] != h || s[3] != w) {
      throw InvalidArgument("concat_channels: incompatible shape " + shape_str(s));
    }
    channels += s[1];
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({batch, channels, h, w});
  std::vector<int> offsets;
  int offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const int c = p.shape()[1];
    for (int n = 0; n < batch; ++n) {
      const double* src = p.value().data() + static_cast<std::size_t>(n) * c * plane;
      double* dst = out.data() + (static_cast<std::size_t>(n) * channels + offset) * plane;
      std::copy(src, src + c * plane, dst);
    }
    offset += c;
  }
  return Var::make(std::move(out), parts, [offsets, batch, channels, plane](Node& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      Node& p = parent(n, k);
      if (!p.requires_grad) continue;
      Tensor& g = p.grad_buffer();
      const int c = p.value.dim(1);
      for (int b = 0; b < batch; ++b) {
        const double* src = n.grad.data() + (static_cast<std::size_t>(b) * channels + offsets[k]) * plane;
        double* dst = g.data() + static_cast<std::size_t>(b) * c * plane;
        for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice_channels(const Var& a, int begin, int count) {
  require_rank4(a, "slice_channels");
  const auto& s = a.shape();
  if (begin < 0 || count <= 0 || begin + count > s[1]) throw InvalidArgument("slice_channels: range out of bounds");
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  const int channels = s[1];
  Tensor out({s[0], count, s[2], s[3]});
  for (int n = 0; n < s[0]; ++n) {
    const double* src = a.value().data() + (static_cast<std::size_t>(n) * channels + begin) * plane;
    std::copy(src, src + count * plane, out.data() + static_cast<std::size_t>(n) * count * plane);
  }
  return Var::make(std::move(out), {a}, [begin, count, channels, plane](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    const int batch = g.dim(0);
    for (int b = 0; b < batch; ++b) {
      double* dst = g.data() + (static_cast<std::size_t>(b) * channels + begin) * plane;
      const double* src = n.grad.data() + static_cast<std::size_t>(b) * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

namespace {

// Output columns ox in [begin, end) read input columns inside [0, w).
int valid_begin(int kx, int pad, int stride) { return std::max(0, (pad - kx + stride - 1) / stride); }
int valid_end(int kx, int pad, int stride, int w, int wo) {
  const int last = w - 1 + pad - kx;
  return last < 0 ? 0 : std::min(wo, last / stride + 1);
}

void im2col(const double* x, int ci, int h, int w, int k, int stride, int pad, int ho, int wo, double* col,
            std::size_t p) {
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          const int lo = valid_begin(kx, pad, stride), hi = valid_end(kx, pad, stride, w, wo);
          for (int ox = 0; ox < lo; ++ox) dst[ox] = 0.0;
          if (stride == 1) {
            if (hi > lo) std::copy(src + lo - pad + kx, src + hi - pad + kx, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride - pad + kx];
          }
          for (int ox = std::max(lo, hi); ox < wo; ++ox) dst[ox] = 0.0;
        }
      }
    }
  }
}

void col2im(const double* col, int ci, int h, int w, int k, int stride, int pad, int ho, int wo, double* x,
            std::size_t p) {
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          const int lo = valid_begin(kx, pad, stride), hi = valid_end(kx, pad, stride, w, wo);
          for (int ox = lo; ox < hi; ++ox) dst[ox * stride - pad + kx] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank4(x, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 4 || ws[2] != ws[3] || ws[1] != xs[1]) {
    throw InvalidArgument("conv2d: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  }
  if (stride < 1 || pad < 0) throw InvalidArgument("conv2d: bad stride/padding");
  const int batch = xs[0], ci = xs[1], h = xs[2], w = xs[3];
  const int co = ws[0], k = ws[2];
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw InvalidArgument("conv2d: input too small for kernel");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.value().size() != static_cast<std::size_t>(co))) {
    throw InvalidArgument("conv2d: bias length mismatch");
  }
  const std::size_t kk = static_cast<std::size_t>(ci) * k * k;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  const std::size_t np = p * batch;
  const std::size_t in_plane = static_cast<std::size_t>(ci) * h * w;
  const bool direct = (k == 1 && stride == 1 && pad == 0);
  const auto ekk = static_cast<Eigen::Index>(kk);
  const auto ep = static_cast<Eigen::Index>(p);

  // Columns for the whole batch side by side: [kk, batch * p]. A 1x1 conv reads x directly.
  std::shared_ptr<double[]> cols;
  if (!direct) {
    cols.reset(new double[kk * np]);
    for (int n = 0; n < batch; ++n) {
      im2col(x.value().data() + in_plane * n, ci, h, w, k, stride, pad, ho, wo, cols.get() + p * n, np);
    }
  }
  auto block = [=](const double* base, int n) {
    return direct ? StridedCMap(base + in_plane * n, ekk, ep, Eigen::OuterStride<>(ep))
                  : StridedCMap(base + p * n, ekk, ep, Eigen::OuterStride<>(static_cast<Eigen::Index>(np)));
  };

  Tensor out({batch, co, ho, wo});
  CMapRow wmat(weight.value().data(), co, ekk);
  const double* src = direct ? x.value().data() : cols.get();
  for (int n = 0; n < batch; ++n) {
    MapRow omat(out.data() + static_cast<std::size_t>(n) * co * p, co, ep);
    omat.noalias() = wmat * block(src, n);
    if (has_bias) {
      for (int c = 0; c < co; ++c) omat.row(c).array() += bias.value()[c];
    }
  }
  if (!grad_enabled()) cols.reset();

  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var::make(std::move(out), parents,
                   [cols, block, direct, batch, ci, h, w, co, k, stride, pad, ho, wo, kk, p, in_plane, has_bias, ekk,
                    ep](Node& n) {
                     Node& px = parent(n, 0);
                     Node& pw = parent(n, 1);
                     CMapRow wmat(pw.value.data(), co, ekk);
                     const double* src = direct ? px.value.data() : cols.get();
                     thread_local std::vector<double> dcol;
                     if (px.requires_grad && !direct) dcol.resize(kk * p);
                     for (int b = 0; b < batch; ++b) {
                       CMapRow go(n.grad.data() + static_cast<std::size_t>(b) * co * p, co, ep);
                       if (pw.requires_grad) {
                         MapRow(pw.grad_buffer().data(), co, ekk).noalias() += go * block(src, b).transpose();
                       }
                       if (has_bias && parent(n, 2).requires_grad) {
                         Tensor& gb = parent(n, 2).grad_buffer();
                         for (int c = 0; c < co; ++c) gb[c] += go.row(c).sum();
                       }
                       if (px.requires_grad) {
                         double* gx = px.grad_buffer().data() + in_plane * b;
                         if (direct) {
                           MapRow(gx, ekk, ep).noalias() += wmat.transpose() * go;
                         } else {
                           MapRow(dcol.data(), ekk, ep).noalias() = wmat.transpose() * go;
                           col2im(dcol.data(), ci, h, w, k, stride, pad, ho, wo, gx, p);
                         }
                       }
                     }
                   });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1]) {
    throw InvalidArgument("linear: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  }
  const int batch = xs[0], in = xs[1], outw = ws[0];
  if (bias.value().size() != static_cast<std::size_t>(outw)) throw InvalidArgument("linear: bias length mismatch");
  Tensor out({batch, outw});
  CMapRow xm(x.value().data(), batch, in);
  CMapRow wm(weight.value().data(), outw, in);
  MapRow om(out.data(), batch, outw);
  om.noalias() = xm * wm.transpose();
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < outw; ++o) om(b, o) += bias.value()[o];
  }
  return Var::make(std::move(out), {x, weight, bias}, [batch, in, outw](Node& n) {
    Node& px = parent(n, 0);
    Node& pw = parent(n, 1);
    Node& pb = parent(n, 2);
    CMapRow go(n.grad.data(), batch, outw);
    if (px.requires_grad) {
      MapRow(px.grad_buffer().data(), batch, in).noalias() += go * CMapRow(pw.value.data(), outw, in);
    }
    if (pw.requires_grad) {
      MapRow(pw.grad_buffer().data(), outw, in).noalias() += go.transpose() * CMapRow(px.value.data(), batch, in);
    }
    if (pb.requires_grad) {
      Tensor& gb = pb.grad_buffer();
      for (int o = 0; o < outw; ++o) gb[o] += go.col(o).sum();
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
  require_rank4(x, "batch_norm");
  const auto& s = x.shape();
  const int batch = s[0], c = s[1];
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c) ||
      state.running_mean.size() != static_cast<std::size_t>(c) ||
      state.running_var.size() != static_cast<std::size_t>(c)) {
    throw InvalidArgument("batch_norm: channel count mismatch");
  }
  const double m = static_cast<double>(batch) * static_cast<double>(plane);
  std::vector<double> mu(c), invstd(c);
  const double* xv = x.value().data();
  for (int ch = 0; ch < c; ++ch) {
    if (training) {
      double acc = 0.0;
      for (int n = 0; n < batch; ++n) {
        const double* src = xv + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      }
      const double mean = acc / m;
      double var = 0.0;
      for (int n = 0; n < batch; ++n) {
        const double* src = xv + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
      }
      var /= m;
      mu[ch] = mean;
      invstd[ch] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean;
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mu[ch] = state.running_mean[ch];
      invstd[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }
  Tensor out(s);
  auto xhat = std::make_shared<std::vector<double>>(x.value().size());
  for (int n = 0; n < batch; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(n) * c + ch) * plane;
      const double g = gamma.value()[ch], bta = beta.value()[ch];
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (xv[off + i] - mu[ch]) * invstd[ch];
        (*xhat)[off + i] = xh;
        out[off + i] = g * xh + bta;
      }
    }
  }
  return Var::make(std::move(out), {x, gamma, beta}, [xhat, invstd, training, batch, c, plane, m](Node& n) {
    Node& px = parent(n, 0);
    Node& pg = parent(n, 1);
    Node& pb = parent(n, 2);
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (int b = 0; b < batch; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy[ch] += n.grad[off + i];
          sum_dy_xhat[ch] += n.grad[off + i] * (*xhat)[off + i];
        }
      }
    }
    if (pg.requires_grad) {
      Tensor& g = pg.grad_buffer();
      for (int ch = 0; ch < c; ++ch) g[ch] += sum_dy_xhat[ch];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (int ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
    }
    if (px.requires_grad) {
      Tensor& g = px.grad_buffer();
      for (int b = 0; b < batch; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
          const double gam = pg.value[ch];
          for (std::size_t i = 0; i < plane; ++i) {
            const double dy = n.grad[off + i];
            if (training) {
              g[off + i] += gam * invstd[ch] / m * (m * dy - sum_dy[ch] - (*xhat)[off + i] * sum_dy_xhat[ch]);
            } else {
              g[off + i] += gam * invstd[ch] * dy;
            }
          }
        }
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  require_rank4(x, "avg_pool2");
  const auto& s = x.shape();
  const int nc = s[0] * s[1], h = s[2], w = s[3];
  const int ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw InvalidArgument("avg_pool2: input smaller than 2x2");
  Tensor out({s[0], s[1], ho, wo});
  for (int p = 0; p < nc; ++p) {
    const double* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        const double* r0 = src + static_cast<std::size_t>(2 * y) * w + 2 * xx;
        dst[y * wo + xx] = 0.25 * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
    }
  }
  return Var::make(std::move(out), {x}, [nc, h, w, ho, wo](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    for (int p = 0; p < nc; ++p) {
      double* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      const double* src = n.grad.data() + static_cast<std::size_t>(p) * ho * wo;
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          const double v = 0.25 * src[y * wo + xx];
          double* r0 = dst + static_cast<std::size_t>(2 * y) * w + 2 * xx;
          r0[0] += v;
          r0[1] += v;
          r0[w] += v;
          r0[w + 1] += v;
        }
      }
    }
  });
}

Var adaptive_avg_pool(const Var& x, int out_h, int out_w) {
  require_rank4(x, "adaptive_avg_pool");
  if (out_h <= 0 || out_w <= 0) throw InvalidArgument("adaptive_avg_pool: bad output size");
  const auto& s = x.shape();
  const int nc = s[0] * s[1], h = s[2], w = s[3];
  auto bins = [](int in, int out) {
    std::vector<std::pair<int, int>> r(out);
    for (int i = 0; i < out; ++i) {
      const int start = static_cast<int>((static_cast<long long>(i) * in) / out);
      const int end = static_cast<int>((static_cast<long long>(i + 1) * in + out - 1) / out);
      r[i] = {start, end};
    }
    return r;
  };
  auto ry = bins(h, out_h);
  auto rx = bins(w, out_w);
  Tensor out({s[0], s[1], out_h, out_w});
  for (int p = 0; p < nc; ++p) {
    const double* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      for (int j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (int y = ry[i].first; y < ry[i].second; ++y) {
          for (int xx = rx[j].first; xx < rx[j].second; ++xx) acc += src[y * w + xx];
        }
        dst[i * out_w + j] = acc / ((ry[i].second - ry[i].first) * (rx[j].second - rx[j].first));
      }
    }
  }
  return Var::make(std::move(out), {x}, [nc, h, w, out_h, out_w, ry, rx](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    for (int p = 0; p < nc; ++p) {
      double* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      const double* src = n.grad.data() + static_cast<std::size_t>(p) * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
          const double v =
              src[i * out_w + j] / ((ry[i].second - ry[i].first) * (rx[j].second - rx[j].first));
          for (int y = ry[i].first; y < ry[i].second; ++y) {
            for (int xx = rx[j].first; xx < rx[j].second; ++xx) dst[y * w + xx] += v;
          }
        }
      }
    }
  });
}

namespace {

struct Tap {
  int i0, i1;
  double w1;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank4(x, "resize_bilinear");
  if (out_h <= 0 || out_w <= 0) throw InvalidArgument("resize_bilinear: bad output size");
  const auto& s = x.shape();
  const int nc = s[0] * s[1], h = s[2], w = s[3];
  if (h == out_h && w == out_w) return reshape(x, s);
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  Tensor out({s[0], s[1], out_h, out_w});
  for (int p = 0; p < nc; ++p) {
    const double* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const Tap& a = ty[i];
      for (int j = 0; j < out_w; ++j) {
        const Tap& b = tx[j];
        const double top = (1.0 - b.w1) * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1];
        const double bot = (1.0 - b.w1) * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1];
        dst[i * out_w + j] = (1.0 - a.w1) * top + a.w1 * bot;
      }
    }
  }
  return Var::make(std::move(out), {x}, [nc, h, w, out_h, out_w, ty, tx](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    for (int p = 0; p < nc; ++p) {
      double* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      const double* src = n.grad.data() + static_cast<std::size_t>(p) * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        const Tap& a = ty[i];
        for (int j = 0; j < out_w; ++j) {
          const Tap& b = tx[j];
          const double v = src[i * out_w + j];
          dst[a.i0 * w + b.i0] += (1.0 - a.w1) * (1.0 - b.w1) * v;
          dst[a.i0 * w + b.i1] += (1.0 - a.w1) * b.w1 * v;
          dst[a.i1 * w + b.i0] += a.w1 * (1.0 - b.w1) * v;
          dst[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
        }
      }
    }
  });
}

Var plane_linear(const Var& x, PlaneOp forward, PlaneOp adjoint) {
  require_rank4(x, "plane_linear");
  const auto& s = x.shape();
  const int nc = s[0] * s[1], h = s[2], w = s[3];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(s);
  for (int p = 0; p < nc; ++p) forward(x.value().data() + p * plane, out.data() + p * plane, h, w);
  return Var::make(std::move(out), {x}, [adjoint = std::move(adjoint), nc, h, w, plane](Node& n) {
    Tensor& g = parent(n, 0).grad_buffer();
    std::vector<double> tmp(plane);
    for (int p = 0; p < nc; ++p) {
      adjoint(n.grad.data() + p * plane, tmp.data(), h, w);
      double* dst = g.data() + p * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += tmp[i];
    }
  });
}

Var binary_cross_entropy(const Var& prob, const Tensor& target, double eps) {
  if (prob.value().size() != target.size()) throw InvalidArgument("binary_cross_entropy: length mismatch");
  const std::size_t count = target.size();
  if (count == 0) throw InvalidArgument("binary_cross_entropy: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = std::clamp(prob.value()[i], eps, 1.0 - eps);
    const double t = target[i];
    acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return Var::make(Tensor({1}, acc / count), {prob}, [target, eps, count](Node& n) {
    Node& p = parent(n, 0);
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < count; ++i) {
      const double raw = p.value[i];
      if (raw < eps || raw > 1.0 - eps) continue;
      const double t = target[i];
      g[i] += n.grad[0] * (-t / raw + (1.0 - t) / (1.0 - raw)) / static_cast<double>(count);
    }
  });
}

}  // namespace sfm::ag
