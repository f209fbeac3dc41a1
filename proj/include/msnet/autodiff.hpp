#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "msnet/tensor.hpp"

namespace msnet::ad {

template <typename S>
struct Var {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
};

template <typename S>
using VarPtr = std::shared_ptr<Var<S>>;

template <typename S>
VarPtr<S> make_var(Tensor<S> value, bool requires_grad) {
  auto v = std::make_shared<Var<S>>();
  v->grad = Tensor<S>(value.shape());
  v->value = std::move(value);
  v->requires_grad = requires_grad;
  return v;
}

/// Learnable leaf. Lives across steps; gradients accumulate until zeroed.
template <typename S>
VarPtr<S> parameter(Tensor<S> value) {
  return make_var(std::move(value), true);
}

/// Define-by-run tape. Ops append backward closures; `backward` replays them
/// in reverse, which is a valid topological order for a tape built forward.
template <typename S>
class Tape {
 public:
  VarPtr<S> constant(Tensor<S> value) { return make_var(std::move(value), false); }

  VarPtr<S> track(Tensor<S> value, bool wants_grad) {
    return make_var(std::move(value), wants_grad && grad_enabled_);
  }

  void push(std::function<void()> backward_op) {
    if (grad_enabled_) ops_.push_back(std::move(backward_op));
  }

  bool grad_enabled() const { return grad_enabled_; }

  void backward(const VarPtr<S>& root) {
    require(root->value.size() == 1, Errc::invalid_argument, "backward root must be scalar");
    root->grad.fill(S(1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }
  std::size_t num_ops() const { return ops_.size(); }

  class NoGradGuard {
   public:
    explicit NoGradGuard(Tape& t) : tape_(t), prev_(t.grad_enabled_) { tape_.grad_enabled_ = false; }
    ~NoGradGuard() { tape_.grad_enabled_ = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    Tape& tape_;
    bool prev_;
  };

 private:
  std::vector<std::function<void()>> ops_;
  bool grad_enabled_ = true;
};

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
bool track(const Tape<S>& tape, std::initializer_list<const VarPtr<S>*> inputs) {
  if (!tape.grad_enabled()) return false;
  for (const auto* in : inputs)
    if ((*in)->requires_grad) return true;
  return false;
}

template <typename S>
void check_same_shape(const VarPtr<S>& a, const VarPtr<S>& b, const char* op) {
  require(a->value.same_shape(b->value), Errc::shape_mismatch,
          std::string(op) + ": " + shape_string(a->value) + " vs " + shape_string(b->value));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
VarPtr<S> add(Tape<S>& tape, const VarPtr<S>& a, const VarPtr<S>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  auto y = tape.track(std::move(out), a->requires_grad || b->requires_grad);
  if (y->requires_grad) {
    tape.push([a, b, y] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < y->grad.size(); ++i) b->grad[i] += y->grad[i];
    });
  }
  return y;
}

template <typename S>
VarPtr<S> sub(Tape<S>& tape, const VarPtr<S>& a, const VarPtr<S>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  auto y = tape.track(std::move(out), a->requires_grad || b->requires_grad);
  if (y->requires_grad) {
    tape.push([a, b, y] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < y->grad.size(); ++i) b->grad[i] -= y->grad[i];
    });
  }
  return y;
}

template <typename S>
VarPtr<S> mul(Tape<S>& tape, const VarPtr<S>& a, const VarPtr<S>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  auto y = tape.track(std::move(out), a->requires_grad || b->requires_grad);
  if (y->requires_grad) {
    tape.push([a, b, y] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i] * b->value[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < y->grad.size(); ++i) b->grad[i] += y->grad[i] * a->value[i];
    });
  }
  return y;
}

template <typename S>
VarPtr<S> scale(Tape<S>& tape, const VarPtr<S>& a, S c) {
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * c;
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y, c] {
      for (std::int64_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i] * c;
    });
  }
  return y;
}

/// y = c1 * x + c0 elementwise.
template <typename S>
VarPtr<S> affine(Tape<S>& tape, const VarPtr<S>& a, S c1, S c0) {
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = c1 * a->value[i] + c0;
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y, c1] {
      for (std::int64_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i] * c1;
    });
  }
  return y;
}

template <typename S>
VarPtr<S> neg(Tape<S>& tape, const VarPtr<S>& a) {
  return scale(tape, a, S(-1));
}

template <typename S>
VarPtr<S> square(Tape<S>& tape, const VarPtr<S>& a) {
  return mul(tape, a, a);
}

template <typename S>
VarPtr<S> leaky_relu(Tape<S>& tape, const VarPtr<S>& a, S slope) {
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    S x = a->value[i];
    out[i] = x > S(0) ? x : slope * x;
  }
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y, slope] {
      for (std::int64_t i = 0; i < y->grad.size(); ++i)
        a->grad[i] += y->grad[i] * (a->value[i] > S(0) ? S(1) : slope);
    });
  }
  return y;
}

template <typename S>
VarPtr<S> sigmoid(Tape<S>& tape, const VarPtr<S>& a) {
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-a->value[i]));
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y] {
      for (std::int64_t i = 0; i < y->grad.size(); ++i)
        a->grad[i] += y->grad[i] * y->value[i] * (S(1) - y->value[i]);
    });
  }
  return y;
}

template <typename S>
VarPtr<S> tanh_op(Tape<S>& tape, const VarPtr<S>& a) {
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a->value[i]);
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y] {
      for (std::int64_t i = 0; i < y->grad.size(); ++i)
        a->grad[i] += y->grad[i] * (S(1) - y->value[i] * y->value[i]);
    });
  }
  return y;
}

template <typename S>
VarPtr<S> log_op(Tape<S>& tape, const VarPtr<S>& a) {
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::log(a->value[i]);
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y] {
      for (std::int64_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i] / a->value[i];
    });
  }
  return y;
}

/// Hard clamp; gradient passes only strictly inside (lo, hi).
template <typename S>
VarPtr<S> clamp(Tape<S>& tape, const VarPtr<S>& a, S lo, S hi) {
  Tensor<S> out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a->value[i]));
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y, lo, hi] {
      for (std::int64_t i = 0; i < y->grad.size(); ++i)
        if (a->value[i] > lo && a->value[i] < hi) a->grad[i] += y->grad[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
VarPtr<S> sum_all(Tape<S>& tape, const VarPtr<S>& a) {
  S acc = S(0);
  for (std::int64_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  auto y = tape.track(Tensor<S>::from({1}, {acc}), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y] {
      S g = y->grad[0];
      for (std::int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    });
  }
  return y;
}

template <typename S>
VarPtr<S> mean_all(Tape<S>& tape, const VarPtr<S>& a) {
  require(a->value.size() > 0, Errc::invalid_argument, "mean of empty tensor");
  S inv = S(1) / static_cast<S>(a->value.size());
  S acc = S(0);
  for (std::int64_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  auto y = tape.track(Tensor<S>::from({1}, {acc * inv}), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y, inv] {
      S g = y->grad[0] * inv;
      for (std::int64_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    });
  }
  return y;
}

/// Mean squared difference over all elements.
template <typename S>
VarPtr<S> mse(Tape<S>& tape, const VarPtr<S>& a, const VarPtr<S>& b) {
  return mean_all(tape, square(tape, sub(tape, a, b)));
}

template <typename S>
VarPtr<S> detach(Tape<S>& tape, const VarPtr<S>& a) {
  return tape.constant(a->value);
}

template <typename S>
S scalar_value(const VarPtr<S>& v) {
  require(v->value.size() == 1, Errc::invalid_argument, "not a scalar");
  return v->value[0];
}

// ---------------------------------------------------------------------------
// Structure ops ([N,C,H,W])
// ---------------------------------------------------------------------------

template <typename S>
VarPtr<S> concat_channels(Tape<S>& tape, const VarPtr<S>& a, const VarPtr<S>& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  require(sa.size() == 4 && sb.size() == 4 && sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
          Errc::shape_mismatch, "concat_channels: incompatible shapes");
  int n = sa[0], ca = sa[1], cb = sb[1], h = sa[2], w = sa[3];
  Tensor<S> out({n, ca + cb, h, w});
  std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::copy_n(a->value.data() + i * ca * plane, ca * plane, out.data() + (static_cast<std::int64_t>(i) * (ca + cb)) * plane);
    std::copy_n(b->value.data() + i * cb * plane, cb * plane,
                out.data() + (static_cast<std::int64_t>(i) * (ca + cb) + ca) * plane);
  }
  auto y = tape.track(std::move(out), a->requires_grad || b->requires_grad);
  if (y->requires_grad) {
    tape.push([a, b, y, n, ca, cb, plane] {
      for (int i = 0; i < n; ++i) {
        const S* gy = y->grad.data() + (static_cast<std::int64_t>(i) * (ca + cb)) * plane;
        if (a->requires_grad) {
          S* ga = a->grad.data() + i * ca * plane;
          for (std::int64_t j = 0; j < ca * plane; ++j) ga[j] += gy[j];
        }
        if (b->requires_grad) {
          S* gb = b->grad.data() + i * cb * plane;
          const S* gyb = gy + ca * plane;
          for (std::int64_t j = 0; j < cb * plane; ++j) gb[j] += gyb[j];
        }
      }
    });
  }
  return y;
}

template <typename S>
VarPtr<S> slice_channels(Tape<S>& tape, const VarPtr<S>& a, int c0, int c1) {
  const auto& s = a->value.shape();
  require(s.size() == 4 && c0 >= 0 && c1 <= s[1] && c0 < c1, Errc::shape_mismatch, "slice_channels: bad range");
  int n = s[0], c = s[1], h = s[2], w = s[3], cc = c1 - c0;
  Tensor<S> out({n, cc, h, w});
  std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    std::copy_n(a->value.data() + (static_cast<std::int64_t>(i) * c + c0) * plane, cc * plane,
                out.data() + static_cast<std::int64_t>(i) * cc * plane);
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y, n, c, c0, cc, plane] {
      for (int i = 0; i < n; ++i) {
        S* ga = a->grad.data() + (static_cast<std::int64_t>(i) * c + c0) * plane;
        const S* gy = y->grad.data() + static_cast<std::int64_t>(i) * cc * plane;
        for (std::int64_t j = 0; j < cc * plane; ++j) ga[j] += gy[j];
      }
    });
  }
  return y;
}

/// Nearest-neighbor 2x upsample.
template <typename S>
VarPtr<S> upsample_nearest2(Tape<S>& tape, const VarPtr<S>& a) {
  const auto& s = a->value.shape();
  require(s.size() == 4, Errc::shape_mismatch, "upsample: rank-4 expected");
  int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<S> out({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y0 = 0; y0 < 2 * h; ++y0)
        for (int x0 = 0; x0 < 2 * w; ++x0) out.at(i, ch, y0, x0) = a->value.at(i, ch, y0 / 2, x0 / 2);
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y, n, c, h, w] {
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
          for (int y0 = 0; y0 < 2 * h; ++y0)
            for (int x0 = 0; x0 < 2 * w; ++x0) a->grad.at(i, ch, y0 / 2, x0 / 2) += y->grad.at(i, ch, y0, x0);
    });
  }
  return y;
}

namespace detail {

struct LerpWeight {
  int lo, hi;
  double t;  // weight of hi
};

inline LerpWeight bilinear_axis(int dst, int out_size, int in_size) {
  // Half-pixel centers; endpoints clamped.
  double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in_size) / static_cast<double>(out_size) - 0.5;
  if (src < 0) src = 0;
  if (src > in_size - 1) src = in_size - 1;
  int lo = static_cast<int>(std::floor(src));
  int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace detail

/// Bilinear resize to (out_h, out_w), half-pixel alignment.
template <typename S>
VarPtr<S> bilinear_resize(Tape<S>& tape, const VarPtr<S>& a, int out_h, int out_w) {
  const auto& s = a->value.shape();
  require(s.size() == 4, Errc::shape_mismatch, "bilinear_resize: rank-4 expected");
  int n = s[0], c = s[1], h = s[2], w = s[3];
  require(out_h >= 1 && out_w >= 1, Errc::invalid_argument, "bilinear_resize: bad output size");
  std::vector<detail::LerpWeight> wy(static_cast<std::size_t>(out_h)), wx(static_cast<std::size_t>(out_w));
  for (int i = 0; i < out_h; ++i) wy[static_cast<std::size_t>(i)] = detail::bilinear_axis(i, out_h, h);
  for (int i = 0; i < out_w; ++i) wx[static_cast<std::size_t>(i)] = detail::bilinear_axis(i, out_w, w);
  Tensor<S> out({n, c, out_h, out_w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int yo = 0; yo < out_h; ++yo) {
        const auto& ay = wy[static_cast<std::size_t>(yo)];
        for (int xo = 0; xo < out_w; ++xo) {
          const auto& ax = wx[static_cast<std::size_t>(xo)];
          double v00 = a->value.at(i, ch, ay.lo, ax.lo);
          double v01 = a->value.at(i, ch, ay.lo, ax.hi);
          double v10 = a->value.at(i, ch, ay.hi, ax.lo);
          double v11 = a->value.at(i, ch, ay.hi, ax.hi);
          double top = v00 + (v01 - v00) * ax.t;
          double bot = v10 + (v11 - v10) * ax.t;
          out.at(i, ch, yo, xo) = static_cast<S>(top + (bot - top) * ay.t);
        }
      }
  auto y = tape.track(std::move(out), a->requires_grad);
  if (y->requires_grad) {
    tape.push([a, y, n, c, out_h, out_w, wy, wx] {
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
          for (int yo = 0; yo < out_h; ++yo) {
            const auto& ay = wy[static_cast<std::size_t>(yo)];
            for (int xo = 0; xo < out_w; ++xo) {
              const auto& ax = wx[static_cast<std::size_t>(xo)];
              S g = y->grad.at(i, ch, yo, xo);
              S tx = static_cast<S>(ax.t), ty = static_cast<S>(ay.t);
              a->grad.at(i, ch, ay.lo, ax.lo) += g * (S(1) - ty) * (S(1) - tx);
              a->grad.at(i, ch, ay.lo, ax.hi) += g * (S(1) - ty) * tx;
              a->grad.at(i, ch, ay.hi, ax.lo) += g * ty * (S(1) - tx);
              a->grad.at(i, ch, ay.hi, ax.hi) += g * ty * tx;
            }
          }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void im2col(const S* x, int c, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo, S* col) {
  for (int ci = 0; ci < c; ++ci)
    for (int ih = 0; ih < kh; ++ih)
      for (int iw = 0; iw < kw; ++iw) {
        S* row = col + ((static_cast<std::int64_t>(ci) * kh + ih) * kw + iw) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          int sy = oy * stride + ih - pad;
          if (sy < 0 || sy >= h) {
            std::fill_n(row + static_cast<std::int64_t>(oy) * wo, wo, S(0));
            continue;
          }
          const S* src = x + (static_cast<std::int64_t>(ci) * h + sy) * w;
          S* dst = row + static_cast<std::int64_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            int sx = ox * stride + iw - pad;
            dst[ox] = (sx >= 0 && sx < w) ? src[sx] : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(const S* col, int c, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo, S* dx) {
  for (int ci = 0; ci < c; ++ci)
    for (int ih = 0; ih < kh; ++ih)
      for (int iw = 0; iw < kw; ++iw) {
        const S* row = col + ((static_cast<std::int64_t>(ci) * kh + ih) * kw + iw) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          int sy = oy * stride + ih - pad;
          if (sy < 0 || sy >= h) continue;
          S* dst = dx + (static_cast<std::int64_t>(ci) * h + sy) * w;
          const S* src = row + static_cast<std::int64_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            int sx = ox * stride + iw - pad;
            if (sx >= 0 && sx < w) dst[sx] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution. x:[N,Ci,H,W], w:[Co,Ci,kh,kw], b:[Co] (may be null).
template <typename S>
VarPtr<S> conv2d(Tape<S>& tape, const VarPtr<S>& x, const VarPtr<S>& w, const VarPtr<S>& b, int stride, int pad) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  require(xs.size() == 4 && ws.size() == 4, Errc::shape_mismatch, "conv2d: rank-4 expected");
  require(xs[1] == ws[1], Errc::shape_mismatch, "conv2d: channel mismatch");
  int n = xs[0], ci = xs[1], h = xs[2], w_in = xs[3];
  int co = ws[0], kh = ws[2], kw = ws[3];
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (w_in + 2 * pad - kw) / stride + 1;
  require(ho >= 1 && wo >= 1, Errc::shape_mismatch, "conv2d: output collapses to zero");
  if (b) require(b->value.rank() == 1 && b->value.shape(0) == co, Errc::shape_mismatch, "conv2d: bad bias");

  const int ck = ci * kh * kw;
  const std::int64_t how = static_cast<std::int64_t>(ho) * wo;
  bool wants = detail::track(tape, b ? std::initializer_list<const VarPtr<S>*>{&x, &w, &b}
                                     : std::initializer_list<const VarPtr<S>*>{&x, &w});
  // Columns are cached for the backward pass when gradients are tracked.
  auto cols = std::make_shared<Tensor<S>>();
  Tensor<S> colbuf({ck, static_cast<int>(how)});
  if (wants) *cols = Tensor<S>({n, ck, static_cast<int>(how)});

  Tensor<S> out({n, co, ho, wo});
  Eigen::Map<const detail::MatRM<S>> wmat(w->value.data(), co, ck);
  for (int i = 0; i < n; ++i) {
    S* colp = wants ? cols->data() + static_cast<std::int64_t>(i) * ck * how : colbuf.data();
    detail::im2col(x->value.data() + x->value.offset4(i, 0, 0, 0), ci, h, w_in, kh, kw, stride, pad, ho, wo, colp);
    Eigen::Map<const detail::MatRM<S>> colm(colp, ck, how);
    Eigen::Map<detail::MatRM<S>> ymat(out.data() + out.offset4(i, 0, 0, 0), co, how);
    ymat.noalias() = wmat * colm;
    if (b)
      for (int oc = 0; oc < co; ++oc) ymat.row(oc).array() += b->value[oc];
  }

  auto y = tape.track(std::move(out), wants);
  if (y->requires_grad) {
    tape.push([x, w, b, y, cols, n, ci, h, w_in, co, kh, kw, stride, pad, ho, wo, ck, how] {
      Eigen::Map<const detail::MatRM<S>> wmat(w->value.data(), co, ck);
      Eigen::Map<detail::MatRM<S>> wgrad(w->grad.data(), co, ck);
      detail::MatRM<S> dcol(ck, how);
      for (int i = 0; i < n; ++i) {
        Eigen::Map<const detail::MatRM<S>> dy(y->grad.data() + y->grad.offset4(i, 0, 0, 0), co, how);
        Eigen::Map<const detail::MatRM<S>> colm(cols->data() + static_cast<std::int64_t>(i) * ck * how, ck, how);
        if (w->requires_grad) wgrad.noalias() += dy * colm.transpose();
        if (b && b->requires_grad)
          for (int oc = 0; oc < co; ++oc) b->grad[oc] += dy.row(oc).sum();
        if (x->requires_grad) {
          dcol.noalias() = wmat.transpose() * dy;
          detail::col2im_add(dcol.data(), ci, h, w_in, kh, kw, stride, pad, ho, wo,
                             x->grad.data() + x->grad.offset4(i, 0, 0, 0));
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Instance normalization
// ---------------------------------------------------------------------------

/// Per-(sample, channel) normalization over the spatial plane, with affine.
template <typename S>
VarPtr<S> instance_norm(Tape<S>& tape, const VarPtr<S>& x, const VarPtr<S>& gamma, const VarPtr<S>& beta, S eps) {
  const auto& s = x->value.shape();
  require(s.size() == 4, Errc::shape_mismatch, "instance_norm: rank-4 expected");
  int n = s[0], c = s[1], h = s[2], w = s[3];
  require(gamma->value.size() == c && beta->value.size() == c, Errc::shape_mismatch, "instance_norm: bad affine");
  std::int64_t m = static_cast<std::int64_t>(h) * w;
  Tensor<S> out(s);
  auto xhat = std::make_shared<Tensor<S>>(s);
  auto inv_std = std::make_shared<Tensor<S>>(std::vector<int>{n, c});
  S invm = S(1) / static_cast<S>(m);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const S* xp = x->value.data() + x->value.offset4(i, ch, 0, 0);
      S mu = S(0);
      for (std::int64_t j = 0; j < m; ++j) mu += xp[j];
      mu *= invm;
      S var = S(0);
      for (std::int64_t j = 0; j < m; ++j) {
        S d = xp[j] - mu;
        var += d * d;
      }
      var *= invm;
      S inv = S(1) / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::int64_t>(i) * c + ch] = inv;
      S* xh = xhat->data() + xhat->offset4(i, ch, 0, 0);
      S* op = out.data() + out.offset4(i, ch, 0, 0);
      S g = gamma->value[ch], be = beta->value[ch];
      for (std::int64_t j = 0; j < m; ++j) {
        xh[j] = (xp[j] - mu) * inv;
        op[j] = g * xh[j] + be;
      }
    }
  bool wants = detail::track(tape, {&x, &gamma, &beta});
  auto y = tape.track(std::move(out), wants);
  if (y->requires_grad) {
    tape.push([x, gamma, beta, y, xhat, inv_std, n, c, m, invm] {
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const S* gy = y->grad.data() + y->grad.offset4(i, ch, 0, 0);
          const S* xh = xhat->data() + xhat->offset4(i, ch, 0, 0);
          S sum_gy = S(0), sum_gy_xh = S(0);
          for (std::int64_t j = 0; j < m; ++j) {
            sum_gy += gy[j];
            sum_gy_xh += gy[j] * xh[j];
          }
          if (gamma->requires_grad) gamma->grad[ch] += sum_gy_xh;
          if (beta->requires_grad) beta->grad[ch] += sum_gy;
          if (x->requires_grad) {
            S g = gamma->value[ch];
            S inv = (*inv_std)[static_cast<std::int64_t>(i) * c + ch];
            S mean_gy = sum_gy * invm, mean_gy_xh = sum_gy_xh * invm;
            S* gx = x->grad.data() + x->grad.offset4(i, ch, 0, 0);
            for (std::int64_t j = 0; j < m; ++j)
              gx[j] += g * inv * (gy[j] - mean_gy - xh[j] * mean_gy_xh);
          }
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Pooling / linear head
// ---------------------------------------------------------------------------

template <typename S>
VarPtr<S> global_avg_pool(Tape<S>& tape, const VarPtr<S>& x) {
  const auto& s = x->value.shape();
  require(s.size() == 4, Errc::shape_mismatch, "global_avg_pool: rank-4 expected");
  int n = s[0], c = s[1];
  std::int64_t m = static_cast<std::int64_t>(s[2]) * s[3];
  S invm = S(1) / static_cast<S>(m);
  Tensor<S> out({n, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const S* xp = x->value.data() + x->value.offset4(i, ch, 0, 0);
      S acc = S(0);
      for (std::int64_t j = 0; j < m; ++j) acc += xp[j];
      out[static_cast<std::int64_t>(i) * c + ch] = acc * invm;
    }
  auto y = tape.track(std::move(out), x->requires_grad);
  if (y->requires_grad) {
    tape.push([x, y, n, c, m, invm] {
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          S g = y->grad[static_cast<std::int64_t>(i) * c + ch] * invm;
          S* gx = x->grad.data() + x->grad.offset4(i, ch, 0, 0);
          for (std::int64_t j = 0; j < m; ++j) gx[j] += g;
        }
    });
  }
  return y;
}

/// y = x * W^T + b with x:[N,F], W:[O,F], b:[O].
template <typename S>
VarPtr<S> linear(Tape<S>& tape, const VarPtr<S>& x, const VarPtr<S>& w, const VarPtr<S>& b) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1], Errc::shape_mismatch, "linear: bad shapes");
  int n = xs[0], f = xs[1], o = ws[0];
  require(b->value.size() == o, Errc::shape_mismatch, "linear: bad bias");
  Tensor<S> out({n, o});
  Eigen::Map<const detail::MatRM<S>> xm(x->value.data(), n, f);
  Eigen::Map<const detail::MatRM<S>> wm(w->value.data(), o, f);
  Eigen::Map<detail::MatRM<S>> ym(out.data(), n, o);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) ym(i, j) += b->value[j];
  bool wants = detail::track(tape, {&x, &w, &b});
  auto y = tape.track(std::move(out), wants);
  if (y->requires_grad) {
    tape.push([x, w, b, y, n, f, o] {
      Eigen::Map<const detail::MatRM<S>> xm(x->value.data(), n, f);
      Eigen::Map<const detail::MatRM<S>> wm(w->value.data(), o, f);
      Eigen::Map<const detail::MatRM<S>> dy(y->grad.data(), n, o);
      if (x->requires_grad) {
        Eigen::Map<detail::MatRM<S>> dx(x->grad.data(), n, f);
        dx.noalias() += dy * wm;
      }
      if (w->requires_grad) {
        Eigen::Map<detail::MatRM<S>> dw(w->grad.data(), o, f);
        dw.noalias() += dy.transpose() * xm;
      }
      if (b->requires_grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < o; ++j) b->grad[j] += dy(i, j);
    });
  }
  return y;
}

}  // namespace msnet::ad
