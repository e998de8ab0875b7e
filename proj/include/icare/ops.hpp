#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "icare/params.hpp"
#include "icare/rng.hpp"
#include "icare/tape.hpp"
#include "icare/tensor.hpp"

namespace icare {

template <typename S>
using MatrixR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

/// y[b,o] = sum_i W[o,i] x[b,i] + bias[o], for x of shape [batch x in].
template <typename S>
Var dense_forward(Tape<S>& t, DenseParams<S>& p, Var x) {
  const Tensor<S>& xv = t.value(x);
  if (xv.rank() != 2 || xv.extent(1) != p.in_features())
    throw ShapeError("dense_forward: input " + shape_str(xv.shape()) + " incompatible with weight " +
                     shape_str(p.weight.value.shape()));
  const Index B = xv.extent(0), in = p.in_features(), out = p.out_features();

  Var w = t.param(p.weight);
  Var b = t.param(p.bias);

  Tensor<S> y({B, out});
  y.as_matrix(B, out).noalias() = xv.as_matrix(B, in) * t.value(w).as_matrix(out, in).transpose();
  y.as_matrix(B, out).rowwise() += t.value(b).as_matrix(1, out).row(0);
  ensure_finite(y, "dense_forward");

  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, w, b, yv, B, in, out]() {
    auto gy = t.grad(yv).as_matrix(B, out);
    t.grad(x).as_matrix(B, in).noalias() += gy * t.value(w).as_matrix(out, in);
    t.grad(w).as_matrix(out, in).noalias() += gy.transpose() * t.value(x).as_matrix(B, in);
    t.grad(b).as_matrix(1, out) += gy.colwise().sum();
  });
  return yv;
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

namespace detail {

/// Unpacks one [C x H x W] image into the [C*kh*kw x Ho*Wo] patch matrix.
template <typename S>
void im2col(const S* x, Index C, Index H, Index W, Index kh, Index kw, Index stride, Index pad,
            Index Ho, Index Wo, MatrixR<S>& col) {
  for (Index c = 0; c < C; ++c)
    for (Index ki = 0; ki < kh; ++ki)
      for (Index kj = 0; kj < kw; ++kj) {
        const Index row = (c * kh + ki) * kw + kj;
        S* dst_row = col.data() + row * Ho * Wo;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride + ki - pad;
          S* dst = dst_row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, S(0));
            continue;
          }
          const S* src = x + (c * H + ih) * W;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw = ow * stride + kj - pad;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : S(0);
          }
        }
      }
}

/// Scatters a patch-matrix gradient back onto the [C x H x W] image (+=).
template <typename S>
void col2im_add(const MatrixR<S>& col, Index C, Index H, Index W, Index kh, Index kw, Index stride,
                Index pad, Index Ho, Index Wo, S* dx) {
  for (Index c = 0; c < C; ++c)
    for (Index ki = 0; ki < kh; ++ki)
      for (Index kj = 0; kj < kw; ++kj) {
        const Index row = (c * kh + ki) * kw + kj;
        const S* src_row = col.data() + row * Ho * Wo;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= H) continue;
          const S* src = src_row + oh * Wo;
          S* dst = dx + (c * H + ih) * W;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw = ow * stride + kj - pad;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlates x [B x C x H x W] with p.kernel [O x C x kh x kw];
/// Ho = floor((H + 2*pad - kh)/stride) + 1, likewise Wo.
template <typename S>
Var conv2d_forward(Tape<S>& t, ConvParams<S>& p, Var x) {
  const Tensor<S>& xv = t.value(x);
  if (xv.rank() != 4 || xv.extent(1) != p.in_channels())
    throw ShapeError("conv2d_forward: input " + shape_str(xv.shape()) + " incompatible with kernel " +
                     shape_str(p.kernel.value.shape()));
  const Index B = xv.extent(0), C = xv.extent(1), H = xv.extent(2), W = xv.extent(3);
  const Index O = p.out_channels(), kh = p.kernel.value.extent(2), kw = p.kernel.value.extent(3);
  const Index s = p.stride, pad = p.padding;
  const Index Ho = (H + 2 * pad - kh) / s + 1;
  const Index Wo = (W + 2 * pad - kw) / s + 1;
  if (H + 2 * pad - kh < 0 || W + 2 * pad - kw < 0 || Ho < 1 || Wo < 1)
    throw ConfigError("conv2d_forward: non-positive output extent for input " + shape_str(xv.shape()) +
                      " kernel " + shape_str(p.kernel.value.shape()) + " stride " + std::to_string(s) +
                      " pad " + std::to_string(pad));

  Var w = t.param(p.kernel);
  Var bias = t.param(p.bias);

  Tensor<S> y({B, O, Ho, Wo});
  {
    MatrixR<S> col(C * kh * kw, Ho * Wo);
    auto kmat = t.value(w).as_matrix(O, C * kh * kw);
    const auto& bvec = t.value(bias).array();
    for (Index b = 0; b < B; ++b) {
      detail::im2col(xv.data() + b * C * H * W, C, H, W, kh, kw, s, pad, Ho, Wo, col);
      Eigen::Map<MatrixR<S>> yb(y.data() + b * O * Ho * Wo, O, Ho * Wo);
      yb.noalias() = kmat * col;
      for (Index o = 0; o < O; ++o) yb.row(o).array() += bvec[o];
    }
  }
  ensure_finite(y, "conv2d_forward");

  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, w, bias, yv, B, C, H, W, O, kh, kw, s, pad, Ho, Wo]() {
    const Tensor<S>& xval = t.value(x);
    const Tensor<S>& gyv = t.grad(yv);
    auto kmat = t.value(w).as_matrix(O, C * kh * kw);
    auto gk = t.grad(w).as_matrix(O, C * kh * kw);
    auto& gb = t.grad(bias).array();
    Tensor<S>& gx = t.grad(x);
    MatrixR<S> col(C * kh * kw, Ho * Wo);
    MatrixR<S> gcol(C * kh * kw, Ho * Wo);
    for (Index b = 0; b < B; ++b) {
      Eigen::Map<const MatrixR<S>> gyb(gyv.data() + b * O * Ho * Wo, O, Ho * Wo);
      detail::im2col(xval.data() + b * C * H * W, C, H, W, kh, kw, s, pad, Ho, Wo, col);
      gk.noalias() += gyb * col.transpose();
      for (Index o = 0; o < O; ++o) gb[o] += gyb.row(o).sum();
      gcol.noalias() = kmat.transpose() * gyb;
      detail::col2im_add(gcol, C, H, W, kh, kw, s, pad, Ho, Wo, gx.data() + b * C * H * W);
    }
  });
  return yv;
}

// ---------------------------------------------------------------------------
// pointwise activations
// ---------------------------------------------------------------------------

/// Elementwise max(0, x); subgradient at 0 taken as 0.
template <typename S>
Var relu_forward(Tape<S>& t, Var x) {
  const Tensor<S>& xv = t.value(x);
  Tensor<S> y(xv.shape());
  y.array() = xv.array().max(S(0));
  ensure_finite(y, "relu_forward");
  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, yv]() {
    t.grad(x).array() += t.grad(yv).array() * (t.value(x).array() > S(0)).template cast<S>();
  });
  return yv;
}

/// Elementwise logistic sigmoid, computed in the numerically stable branch form.
template <typename S>
Var sigmoid_forward(Tape<S>& t, Var x) {
  const Tensor<S>& xv = t.value(x);
  Tensor<S> y(xv.shape());
  for (Index i = 0; i < xv.size(); ++i) {
    const S v = xv[i];
    if (v >= S(0)) {
      const S e = std::exp(-v);
      y[i] = S(1) / (S(1) + e);
    } else {
      const S e = std::exp(v);
      y[i] = e / (S(1) + e);
    }
  }
  ensure_finite(y, "sigmoid_forward");
  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, yv]() {
    auto yarr = t.value(yv).array();
    t.grad(x).array() += t.grad(yv).array() * yarr * (S(1) - yarr);
  });
  return yv;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

namespace detail {

/// Both supported layouts reduce to [outer x channels x inner] slabs:
/// rank-2 [B,F] has inner=1, rank-4 [B,C,H,W] has inner=H*W.
struct BnLayout {
  Index outer = 0, channels = 0, inner = 0;
};

template <typename S>
BnLayout bn_layout(const Tensor<S>& x, Index channels) {
  if (x.rank() == 2) {
    if (x.extent(1) != channels)
      throw ShapeError("batchnorm_forward: input " + shape_str(x.shape()) + " has " +
                       std::to_string(x.extent(1)) + " channels, params expect " +
                       std::to_string(channels));
    return {x.extent(0), channels, 1};
  }
  if (x.rank() == 4) {
    if (x.extent(1) != channels)
      throw ShapeError("batchnorm_forward: input " + shape_str(x.shape()) + " has " +
                       std::to_string(x.extent(1)) + " channels, params expect " +
                       std::to_string(channels));
    return {x.extent(0), channels, x.extent(2) * x.extent(3)};
  }
  throw ShapeError("batchnorm_forward: expected rank 2 or 4 input, got " + shape_str(x.shape()));
}

}  // namespace detail

/// Per-channel normalization. Training mode uses batch statistics (biased
/// variance) and updates running stats in-place; inference mode uses the
/// stored running statistics.
template <typename S>
Var batchnorm_forward(Tape<S>& t, BatchNormParams<S>& p, Var x, bool training) {
  const Tensor<S>& xv = t.value(x);
  const auto lay = detail::bn_layout(xv, p.channels());
  const Index B = lay.outer, C = lay.channels, inner = lay.inner;
  const Index N = B * inner;
  if (training && B < 2)
    throw UsageError("batchnorm_forward: training requires batch size >= 2, got " + std::to_string(B));

  Var g = t.param(p.gamma);
  Var be = t.param(p.beta);

  Tensor<S> mean({C}), var({C});
  if (training) {
    for (Index c = 0; c < C; ++c) {
      S sum = 0;
      for (Index b = 0; b < B; ++b)
        sum += xv.array().segment((b * C + c) * inner, inner).sum();
      mean[c] = sum / S(N);
    }
    for (Index c = 0; c < C; ++c) {
      S sq = 0;
      for (Index b = 0; b < B; ++b)
        sq += (xv.array().segment((b * C + c) * inner, inner) - mean[c]).square().sum();
      var[c] = sq / S(N);
    }
    p.running_mean.array() = p.momentum * p.running_mean.array() + (S(1) - p.momentum) * mean.array();
    p.running_var.array() = p.momentum * p.running_var.array() + (S(1) - p.momentum) * var.array();
  } else {
    mean = p.running_mean;
    var = p.running_var;
  }

  Tensor<S> inv_std({C});
  inv_std.array() = (var.array() + p.epsilon).rsqrt();

  Tensor<S> xhat(xv.shape());
  Tensor<S> y(xv.shape());
  const auto& gv = t.value(g);
  const auto& bv = t.value(be);
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const Index off = (b * C + c) * inner;
      xhat.array().segment(off, inner) = (xv.array().segment(off, inner) - mean[c]) * inv_std[c];
      y.array().segment(off, inner) = gv[c] * xhat.array().segment(off, inner) + bv[c];
    }
  ensure_finite(y, "batchnorm_forward");

  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, g, be, yv, B, C, inner, N, training, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)]() {
    const Tensor<S>& gy = t.grad(yv);
    const auto& gv = t.value(g);
    Tensor<S>& gx = t.grad(x);
    Tensor<S>& gg = t.grad(g);
    Tensor<S>& gb = t.grad(be);
    for (Index c = 0; c < C; ++c) {
      S sum_gy = 0, sum_gy_xhat = 0;
      for (Index b = 0; b < B; ++b) {
        const Index off = (b * C + c) * inner;
        sum_gy += gy.array().segment(off, inner).sum();
        sum_gy_xhat += (gy.array().segment(off, inner) * xhat.array().segment(off, inner)).sum();
      }
      gg[c] += sum_gy_xhat;
      gb[c] += sum_gy;
      const S k = gv[c] * inv_std[c];
      if (training) {
        const S mg = sum_gy / S(N), mgx = sum_gy_xhat / S(N);
        for (Index b = 0; b < B; ++b) {
          const Index off = (b * C + c) * inner;
          gx.array().segment(off, inner) +=
              k * (gy.array().segment(off, inner) - mg - xhat.array().segment(off, inner) * mgx);
        }
      } else {
        for (Index b = 0; b < B; ++b) {
          const Index off = (b * C + c) * inner;
          gx.array().segment(off, inner) += k * gy.array().segment(off, inner);
        }
      }
    }
  });
  return yv;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: keep with probability keep_prob, scale kept values by
/// 1/keep_prob. Identity in inference mode.
template <typename S>
Var dropout_forward(Tape<S>& t, const DropoutConfig& cfg, Var x, bool training, RandomStream& rng) {
  if (!(cfg.keep_prob > 0.0 && cfg.keep_prob <= 1.0))
    throw ConfigError("dropout_forward: keep_prob must be in (0,1], got " + std::to_string(cfg.keep_prob));
  if (!training) return x;
  const Tensor<S>& xv = t.value(x);
  Tensor<S> mask(xv.shape());
  const S scale = S(1.0 / cfg.keep_prob);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(cfg.keep_prob) ? scale : S(0);
  Tensor<S> y(xv.shape());
  y.array() = xv.array() * mask.array();
  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, yv, mask = std::move(mask)]() {
    t.grad(x).array() += t.grad(yv).array() * mask.array();
  });
  return yv;
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

template <typename S>
Var reshape(Tape<S>& t, Var x, Shape shape) {
  Tensor<S> y = t.value(x).reshaped(std::move(shape));
  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, yv]() { t.grad(x).array() += t.grad(yv).array(); });
  return yv;
}

/// Selects rows of a [N x D] tensor; duplicate indices accumulate gradient.
template <typename S>
Var gather_rows(Tape<S>& t, Var x, std::vector<Index> rows) {
  const Tensor<S>& xv = t.value(x);
  if (xv.rank() != 2) throw ShapeError("gather_rows: expected rank-2 input, got " + shape_str(xv.shape()));
  const Index N = xv.extent(0), D = xv.extent(1);
  for (Index r : rows)
    if (r < 0 || r >= N) throw UsageError("gather_rows: row " + std::to_string(r) + " out of range [0," +
                                          std::to_string(N) + ")");
  const Index K = static_cast<Index>(rows.size());
  if (K == 0) throw UsageError("gather_rows: empty row selection");
  Tensor<S> y({K, D});
  for (Index k = 0; k < K; ++k)
    y.array().segment(k * D, D) = xv.array().segment(rows[static_cast<std::size_t>(k)] * D, D);
  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, yv, D, rows = std::move(rows)]() {
    const Tensor<S>& gy = t.grad(yv);
    Tensor<S>& gx = t.grad(x);
    for (std::size_t k = 0; k < rows.size(); ++k)
      gx.array().segment(rows[k] * D, D) += gy.array().segment(static_cast<Index>(k) * D, D);
  });
  return yv;
}

/// Selects flat (row-major) elements of any-rank tensor as a [K x 1] column;
/// duplicate indices accumulate gradient.
template <typename S>
Var gather_elements(Tape<S>& t, Var x, std::vector<Index> idx) {
  const Tensor<S>& xv = t.value(x);
  const Index N = xv.size();
  for (Index i : idx)
    if (i < 0 || i >= N)
      throw UsageError("gather_elements: index " + std::to_string(i) + " out of range [0," +
                       std::to_string(N) + ")");
  const Index K = static_cast<Index>(idx.size());
  if (K == 0) throw UsageError("gather_elements: empty selection");
  Tensor<S> y({K, 1});
  for (Index k = 0; k < K; ++k) y[k] = xv[idx[static_cast<std::size_t>(k)]];
  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, x, yv, idx = std::move(idx)]() {
    const Tensor<S>& gy = t.grad(yv);
    Tensor<S>& gx = t.grad(x);
    for (std::size_t k = 0; k < idx.size(); ++k) gx[idx[k]] += gy[static_cast<Index>(k)];
  });
  return yv;
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  const Tensor<S>& av = t.value(a);
  const Tensor<S>& bv = t.value(b);
  if (!av.same_shape(bv))
    throw ShapeError("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  Tensor<S> y(av.shape());
  y.array() = av.array() + bv.array();
  Var yv = t.make(std::move(y), nullptr);
  t.set_backward(yv, [&t, a, b, yv]() {
    t.grad(a).array() += t.grad(yv).array();
    t.grad(b).array() += t.grad(yv).array();
  });
  return yv;
}

// ---------------------------------------------------------------------------
// losses (scalar outputs, mean over elements)
// ---------------------------------------------------------------------------

template <typename S>
Var mse_loss(Tape<S>& t, Var pred, const Tensor<S>& target) {
  const Tensor<S>& pv = t.value(pred);
  if (!pv.same_shape(target))
    throw ShapeError("mse_loss: pred " + shape_str(pv.shape()) + " vs target " + shape_str(target.shape()));
  const Index N = pv.size();
  const S loss = (pv.array() - target.array()).square().sum() / S(N);
  Var yv = t.make(Tensor<S>::scalar(loss), nullptr);
  t.set_backward(yv, [&t, pred, yv, N, target]() {
    const S g = t.grad(yv)[0];
    t.grad(pred).array() += g * S(2) / S(N) * (t.value(pred).array() - target.array());
  });
  return yv;
}

/// -w_important*y*ln(p) - w_not_important*(1-y)*ln(1-p), averaged over
/// elements; p is clamped to [eps_p, 1-eps_p] before the logs.
template <typename S>
Var weighted_bce_loss(Tape<S>& t, const LossConfig& cfg, Var p, const Tensor<S>& y) {
  static constexpr double kEpsP = 1e-7;
  const Tensor<S>& pv = t.value(p);
  if (!pv.same_shape(y))
    throw ShapeError("weighted_bce_loss: p " + shape_str(pv.shape()) + " vs y " + shape_str(y.shape()));
  const Index N = pv.size();
  const S w1 = S(cfg.weight_important), w0 = S(cfg.weight_not_important);
  S total = 0;
  for (Index i = 0; i < N; ++i) {
    const S pc = std::clamp(pv[i], S(kEpsP), S(1.0 - kEpsP));
    total += -w1 * y[i] * std::log(pc) - w0 * (S(1) - y[i]) * std::log(S(1) - pc);
  }
  Var yv = t.make(Tensor<S>::scalar(total / S(N)), nullptr);
  t.set_backward(yv, [&t, p, yv, N, w0, w1, y]() {
    const S g = t.grad(yv)[0] / S(N);
    const Tensor<S>& pv = t.value(p);
    Tensor<S>& gp = t.grad(p);
    for (Index i = 0; i < N; ++i) {
      if (pv[i] < S(kEpsP) || pv[i] > S(1.0 - kEpsP)) continue;  // clamp region: flat
      gp[i] += g * (-w1 * y[i] / pv[i] + w0 * (S(1) - y[i]) / (S(1) - pv[i]));
    }
  });
  return yv;
}

/// Huber-style loss: 0.5*d^2/beta for |d| < beta, else |d| - 0.5*beta;
/// averaged over elements.
template <typename S>
Var smooth_l1_loss(Tape<S>& t, Var pred, const Tensor<S>& target, double beta = 1.0) {
  const Tensor<S>& pv = t.value(pred);
  if (!pv.same_shape(target))
    throw ShapeError("smooth_l1_loss: pred " + shape_str(pv.shape()) + " vs target " +
                     shape_str(target.shape()));
  if (beta <= 0.0) throw ConfigError("smooth_l1_loss: beta must be positive");
  const Index N = pv.size();
  const S b = S(beta);
  S total = 0;
  for (Index i = 0; i < N; ++i) {
    const S d = std::abs(pv[i] - target[i]);
    total += d < b ? S(0.5) * d * d / b : d - S(0.5) * b;
  }
  Var yv = t.make(Tensor<S>::scalar(total / S(N)), nullptr);
  t.set_backward(yv, [&t, pred, yv, N, b, target]() {
    const S g = t.grad(yv)[0] / S(N);
    const Tensor<S>& pv = t.value(pred);
    Tensor<S>& gp = t.grad(pred);
    for (Index i = 0; i < N; ++i) {
      const S d = pv[i] - target[i];
      gp[i] += g * (std::abs(d) < b ? d / b : (d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0))));
    }
  });
  return yv;
}

}  // namespace icare
