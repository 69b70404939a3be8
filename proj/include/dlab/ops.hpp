#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dlab/error.hpp"
#include "dlab/random.hpp"
#include "dlab/tensor.hpp"

// Differentiable free functions over Tensor<Scalar>. Sequence tensors are laid
// out as [batch, time, channels] in row-major order, so a (B*T) x C row-major
// matrix view of the values is always valid.

namespace dlab {

enum class Padding { same, valid };
enum class Mode { train, eval };

namespace detail {

template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
void require_rank(const Tensor<Scalar>& t, Index rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
  }
}

template <typename Scalar>
Index last_dim(const Tensor<Scalar>& t) {
  return t.rank() == 0 ? 1 : t.shape().back();
}

template <typename Scalar>
Node<Scalar>* raw(const Tensor<Scalar>& t) {
  return t.node().get();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  auto* pa = detail::raw(a);
  auto* pb = detail::raw(b);
  return make_result<Scalar>("add", a.shape(), a.value() + b.value(), {a, b},
                             [pa, pb](const Array<Scalar>& g) {
                               pa->accumulate(g);
                               pb->accumulate(g);
                             });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  auto* pa = detail::raw(a);
  auto* pb = detail::raw(b);
  return make_result<Scalar>("mul", a.shape(), a.value() * b.value(), {a, b},
                             [pa, pb](const Array<Scalar>& g) {
                               if (pa->requires_grad) pa->accumulate(g * pb->value);
                               if (pb->requires_grad) pb->accumulate(g * pa->value);
                             });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  auto* pa = detail::raw(a);
  return make_result<Scalar>("scale", a.shape(), a.value() * factor, {a},
                             [pa, factor](const Array<Scalar>& g) { pa->accumulate(g * factor); });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  auto* pa = detail::raw(a);
  const Index n = a.size();
  return make_result<Scalar>("sum", {}, Array<Scalar>::Constant(1, a.value().sum()), {a},
                             [pa, n](const Array<Scalar>& g) {
                               pa->accumulate(Array<Scalar>::Constant(n, g[0]));
                             });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  auto* pa = detail::raw(a);
  return make_result<Scalar>("reshape", std::move(shape), a.value(), {a},
                             [pa](const Array<Scalar>& g) { pa->accumulate(g); });
}

/// Elementwise clamp; the gradient is zero wherever the bound is active.
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi) {
  auto* pa = detail::raw(a);
  return make_result<Scalar>("clamp", a.shape(), a.value().max(lo).min(hi), {a},
                             [pa, lo, hi](const Array<Scalar>& g) {
                               const auto& v = pa->value;
                               pa->accumulate((v >= lo && v <= hi).select(g, Scalar(0)));
                             });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  Array<Scalar> out = a.value().unaryExpr([](Scalar v) {
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  auto* pa = detail::raw(a);
  return make_result<Scalar>("sigmoid", a.shape(), out, {a},
                             [pa, out](const Array<Scalar>& g) {
                               pa->accumulate(g * out * (Scalar(1) - out));
                             });
}

// ---------------------------------------------------------------------------
// Sequence layers

/// Cross-correlation along time. x: [B,T,Cin], weights: [k,Cin,Cout], bias: [Cout].
/// `same` zero-pads (k-1)/2 frames on the left and the rest on the right.
template <typename Scalar>
Tensor<Scalar> conv_time(const Tensor<Scalar>& x, const Tensor<Scalar>& weights,
                         const Tensor<Scalar>& bias, Padding padding = Padding::same) {
  detail::require_rank(x, 3, "conv_time");
  detail::require_rank(weights, 3, "conv_time weights");
  const Index B = x.dim(0), T = x.dim(1), Cin = x.dim(2);
  const Index k = weights.dim(0), Cout = weights.dim(2);
  if (k < 1) throw ShapeError("conv_time: kernel size must be >= 1");
  if (weights.dim(1) != Cin) {
    throw ShapeError("conv_time: input has " + std::to_string(Cin) + " channels, weights expect " +
                     std::to_string(weights.dim(1)));
  }
  if (bias.size() != Cout) throw ShapeError("conv_time: bias size does not match output channels");
  const Index pad = padding == Padding::same ? (k - 1) / 2 : 0;
  const Index Tout = padding == Padding::same ? T : T - k + 1;
  if (Tout < 1) throw ShapeError("conv_time: sequence shorter than kernel");

  // im2col: row (b,t) holds the k input frames feeding output frame t.
  RowMatrix<Scalar> col = RowMatrix<Scalar>::Zero(B * Tout, k * Cin);
  detail::ConstRowMap<Scalar> xm(x.data(), B * T, Cin);
  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t < Tout; ++t) {
      for (Index j = 0; j < k; ++j) {
        const Index s = t + j - pad;
        if (s < 0 || s >= T) continue;
        col.block(b * Tout + t, j * Cin, 1, Cin) = xm.row(b * T + s);
      }
    }
  }
  detail::ConstRowMap<Scalar> wm(weights.data(), k * Cin, Cout);
  Array<Scalar> out(B * Tout * Cout);
  detail::RowMap<Scalar> ym(out.data(), B * Tout, Cout);
  ym.noalias() = col * wm;
  ym.rowwise() += bias.value().matrix().transpose();

  auto* px = detail::raw(x);
  auto* pw = detail::raw(weights);
  auto* pb = detail::raw(bias);
  return make_result<Scalar>(
      "conv_time", {B, Tout, Cout}, std::move(out), {x, weights, bias},
      [=, col = std::move(col)](const Array<Scalar>& g) {
        detail::ConstRowMap<Scalar> gm(g.data(), B * Tout, Cout);
        if (pw->requires_grad) {
          Array<Scalar> gw(k * Cin * Cout);
          detail::RowMap<Scalar>(gw.data(), k * Cin, Cout).noalias() = col.transpose() * gm;
          pw->accumulate(gw);
        }
        if (pb->requires_grad) pb->accumulate(gm.colwise().sum().transpose().array());
        if (px->requires_grad) {
          detail::ConstRowMap<Scalar> w(pw->value.data(), k * Cin, Cout);
          RowMatrix<Scalar> gcol = gm * w.transpose();
          Array<Scalar> gx = Array<Scalar>::Zero(B * T * Cin);
          detail::RowMap<Scalar> gxm(gx.data(), B * T, Cin);
          for (Index b = 0; b < B; ++b) {
            for (Index t = 0; t < Tout; ++t) {
              for (Index j = 0; j < k; ++j) {
                const Index s = t + j - pad;
                if (s < 0 || s >= T) continue;
                gxm.row(b * T + s) += gcol.block(b * Tout + t, j * Cin, 1, Cin);
              }
            }
          }
          px->accumulate(gx);
        }
      });
}

/// Per-channel max over non-overlapping windows of `size` frames.
template <typename Scalar>
Tensor<Scalar> max_pool_time(const Tensor<Scalar>& x, Index size) {
  detail::require_rank(x, 3, "max_pool_time");
  const Index B = x.dim(0), T = x.dim(1), C = x.dim(2);
  if (size < 1 || T % size != 0) {
    throw ShapeError("max_pool_time: length " + std::to_string(T) + " not divisible by " +
                     std::to_string(size));
  }
  const Index Tout = T / size;
  Array<Scalar> out(B * Tout * C);
  std::vector<Index> source(static_cast<std::size_t>(out.size()));
  const Scalar* xv = x.data();
  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t < Tout; ++t) {
      for (Index c = 0; c < C; ++c) {
        Index best = (b * T + t * size) * C + c;
        for (Index r = 1; r < size; ++r) {
          const Index i = (b * T + t * size + r) * C + c;
          if (xv[i] > xv[best]) best = i;
        }
        const Index o = (b * Tout + t) * C + c;
        out[o] = xv[best];
        source[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  auto* px = detail::raw(x);
  const Index n = x.size();
  return make_result<Scalar>("max_pool_time", {B, Tout, C}, std::move(out), {x},
                             [px, n, source = std::move(source)](const Array<Scalar>& g) {
                               Array<Scalar> gx = Array<Scalar>::Zero(n);
                               for (std::size_t o = 0; o < source.size(); ++o) {
                                 gx[source[o]] += g[static_cast<Index>(o)];
                               }
                               px->accumulate(gx);
                             });
}

/// Nearest-neighbour repetition of every frame `factor` times.
template <typename Scalar>
Tensor<Scalar> upsample_time(const Tensor<Scalar>& x, Index factor) {
  detail::require_rank(x, 3, "upsample_time");
  if (factor < 1) throw ShapeError("upsample_time: factor must be >= 1");
  const Index B = x.dim(0), T = x.dim(1), C = x.dim(2);
  const Index Tout = T * factor;
  Array<Scalar> out(B * Tout * C);
  detail::ConstRowMap<Scalar> xm(x.data(), B * T, C);
  detail::RowMap<Scalar> ym(out.data(), B * Tout, C);
  for (Index r = 0; r < B * T; ++r) {
    ym.middleRows(r * factor, factor).rowwise() = xm.row(r);
  }
  auto* px = detail::raw(x);
  return make_result<Scalar>("upsample_time", {B, Tout, C}, std::move(out), {x},
                             [=](const Array<Scalar>& g) {
                               detail::ConstRowMap<Scalar> gm(g.data(), B * Tout, C);
                               Array<Scalar> gx(B * T * C);
                               detail::RowMap<Scalar> gxm(gx.data(), B * T, C);
                               for (Index r = 0; r < B * T; ++r) {
                                 gxm.row(r) = gm.middleRows(r * factor, factor).colwise().sum();
                               }
                               px->accumulate(gx);
                             });
}

/// Concatenation along the last (channel) axis; leading dimensions must agree.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() < 1 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const Index Ca = a.shape().back(), Cb = b.shape().back();
  const Index rows = a.size() / std::max<Index>(Ca, 1);
  Shape shape = a.shape();
  shape.back() = Ca + Cb;
  Array<Scalar> out(rows * (Ca + Cb));
  detail::RowMap<Scalar> om(out.data(), rows, Ca + Cb);
  om.leftCols(Ca) = detail::ConstRowMap<Scalar>(a.data(), rows, Ca);
  om.rightCols(Cb) = detail::ConstRowMap<Scalar>(b.data(), rows, Cb);
  auto* pa = detail::raw(a);
  auto* pb = detail::raw(b);
  return make_result<Scalar>("concat_channels", std::move(shape), std::move(out), {a, b},
                             [=](const Array<Scalar>& g) {
                               detail::ConstRowMap<Scalar> gm(g.data(), rows, Ca + Cb);
                               if (pa->requires_grad) {
                                 Array<Scalar> ga(rows * Ca);
                                 detail::RowMap<Scalar>(ga.data(), rows, Ca) = gm.leftCols(Ca);
                                 pa->accumulate(ga);
                               }
                               if (pb->requires_grad) {
                                 Array<Scalar> gb(rows * Cb);
                                 detail::RowMap<Scalar>(gb.data(), rows, Cb) = gm.rightCols(Cb);
                                 pb->accumulate(gb);
                               }
                             });
}

template <typename Scalar>
struct BatchNormOptions {
  Scalar momentum = Scalar(0.99);
  Scalar epsilon = Scalar(1e-3);
  /// Train mode only: fold batch statistics into the running estimates.
  bool update_running = true;
};

/// Per-channel normalisation over the batch and time axes.
///
/// Train mode normalises with the (biased) batch statistics and, unless
/// disabled, updates running = momentum * running + (1 - momentum) * batch.
/// Eval mode uses the running statistics and leaves them untouched.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Mode mode, const Tensor<Scalar>& running_mean,
                          const Tensor<Scalar>& running_var,
                          const BatchNormOptions<Scalar>& opts = {}) {
  const Index C = detail::last_dim(x);
  if (x.rank() < 2 || gamma.size() != C || beta.size() != C || running_mean.size() != C ||
      running_var.size() != C) {
    throw ShapeError("batch_norm: parameter sizes do not match channels of " +
                     shape_string(x.shape()));
  }
  const Index N = x.size() / C;
  detail::ConstRowMap<Scalar> xm(x.data(), N, C);
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mu, var;
  if (mode == Mode::train) {
    mu = xm.colwise().mean();
    var = (xm.rowwise() - mu).array().square().colwise().mean().matrix();
    if (opts.update_running) {
      auto& rm = running_mean.mutable_value();
      auto& rv = running_var.mutable_value();
      rm = opts.momentum * rm + (Scalar(1) - opts.momentum) * mu.transpose().array();
      rv = opts.momentum * rv + (Scalar(1) - opts.momentum) * var.transpose().array();
    }
  } else {
    mu = running_mean.value().matrix().transpose();
    var = running_var.value().matrix().transpose();
  }
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inv_std =
      (var.array() + opts.epsilon).rsqrt().matrix();
  RowMatrix<Scalar> xhat = (xm.rowwise() - mu).array().rowwise() * inv_std.array();
  Array<Scalar> out(N * C);
  detail::RowMap<Scalar> ym(out.data(), N, C);
  ym = (xhat.array().rowwise() * gamma.value().transpose()).rowwise() + beta.value().transpose();

  auto* px = detail::raw(x);
  auto* pg = detail::raw(gamma);
  auto* pb = detail::raw(beta);
  const bool train = mode == Mode::train;
  return make_result<Scalar>(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat)](const Array<Scalar>& g) {
        detail::ConstRowMap<Scalar> gm(g.data(), N, C);
        if (pg->requires_grad) {
          pg->accumulate((gm.array() * xhat.array()).colwise().sum().transpose());
        }
        if (pb->requires_grad) pb->accumulate(gm.colwise().sum().transpose().array());
        if (px->requires_grad) {
          RowMatrix<Scalar> gxhat = gm.array().rowwise() * pg->value.transpose();
          Array<Scalar> gx(N * C);
          detail::RowMap<Scalar> gxm(gx.data(), N, C);
          if (train) {
            const auto sum_g = gxhat.colwise().sum();
            const auto sum_gx = (gxhat.array() * xhat.array()).colwise().sum().matrix();
            const Scalar inv_n = Scalar(1) / static_cast<Scalar>(N);
            gxm = ((gxhat.array() * static_cast<Scalar>(N)).rowwise() - sum_g.array() -
                   xhat.array().rowwise() * sum_gx.array())
                      .rowwise() *
                  (inv_std.array() * inv_n);
          } else {
            gxm = gxhat.array().rowwise() * inv_std.array();
          }
          px->accumulate(gx);
        }
      });
}

/// y = x for x >= 0, slope[c] * x otherwise; slope has one entry per channel.
template <typename Scalar>
Tensor<Scalar> prelu(const Tensor<Scalar>& x, const Tensor<Scalar>& slope) {
  const Index C = detail::last_dim(x);
  if (slope.size() != C) throw ShapeError("prelu: slope size does not match channels");
  const Index N = x.size() / C;
  detail::ConstRowMap<Scalar> xm(x.data(), N, C);
  Array<Scalar> out(N * C);
  detail::RowMap<Scalar> ym(out.data(), N, C);
  ym = (xm.array() >= Scalar(0))
           .select(xm.array(), xm.array().rowwise() * slope.value().transpose());
  auto* px = detail::raw(x);
  auto* ps = detail::raw(slope);
  return make_result<Scalar>(
      "prelu", x.shape(), std::move(out), {x, slope}, [=](const Array<Scalar>& g) {
        detail::ConstRowMap<Scalar> gm(g.data(), N, C);
        detail::ConstRowMap<Scalar> xv(px->value.data(), N, C);
        const auto negative = xv.array() < Scalar(0);
        if (ps->requires_grad) {
          ps->accumulate(negative.select(gm.array() * xv.array(), Scalar(0)).colwise().sum().transpose());
        }
        if (px->requires_grad) {
          Array<Scalar> gx(N * C);
          detail::RowMap<Scalar>(gx.data(), N, C) =
              negative.select(gm.array().rowwise() * ps->value.transpose(), gm.array());
          px->accumulate(gx);
        }
      });
}

/// Drops whole channels (every frame of a channel in one sample) with
/// probability `rate` and rescales survivors by 1/(1-rate). Identity in eval
/// mode. Masks are drawn in (batch, channel) order from `rng`.
template <typename Scalar>
Tensor<Scalar> spatial_dropout(const Tensor<Scalar>& x, double rate, Mode mode, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("spatial_dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  detail::require_rank(x, 3, "spatial_dropout");
  if (rng == nullptr) throw ConfigError("spatial_dropout: train mode requires an rng");
  const Index B = x.dim(0), T = x.dim(1), C = x.dim(2);
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  Array<Scalar> mask(B * C);
  for (Index i = 0; i < B * C; ++i) mask[i] = uniform01(*rng) < rate ? Scalar(0) : keep_scale;
  Array<Scalar> full(x.size());
  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t < T; ++t) {
      full.segment((b * T + t) * C, C) = mask.segment(b * C, C);
    }
  }
  auto* px = detail::raw(x);
  return make_result<Scalar>("spatial_dropout", x.shape(), x.value() * full, {x},
                             [px, full](const Array<Scalar>& g) { px->accumulate(g * full); });
}

/// Softmax over the last axis, stabilised by subtracting each row's max.
template <typename Scalar>
Tensor<Scalar> softmax_over_classes(const Tensor<Scalar>& x) {
  const Index K = detail::last_dim(x);
  const Index N = x.size() / K;
  detail::ConstRowMap<Scalar> xm(x.data(), N, K);
  Array<Scalar> out(N * K);
  detail::RowMap<Scalar> ym(out.data(), N, K);
  ym = (xm.colwise() - xm.rowwise().maxCoeff()).array().exp().matrix();
  ym.array().colwise() /= ym.rowwise().sum().array();
  auto* px = detail::raw(x);
  return make_result<Scalar>("softmax", x.shape(), out, {x}, [=](const Array<Scalar>& g) {
    detail::ConstRowMap<Scalar> gm(g.data(), N, K);
    detail::ConstRowMap<Scalar> p(out.data(), N, K);
    const auto dot = (gm.array() * p.array()).rowwise().sum();
    Array<Scalar> gx(N * K);
    detail::RowMap<Scalar>(gx.data(), N, K) = p.array() * (gm.array().colwise() - dot);
    px->accumulate(gx);
  });
}

}  // namespace dlab
