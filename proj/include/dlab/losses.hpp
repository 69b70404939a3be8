#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dlab/error.hpp"
#include "dlab/models.hpp"
#include "dlab/ops.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

struct LossConfig {
  /// Weight of the focal term against the discounted adversarial term.
  double lambda = 100.0;
  /// Focal exponent.
  double gamma = 2.0;
  /// Per-class focal weights; empty means uniform 1.
  std::vector<double> alpha;
  /// Lower clamp for the dice discount.
  double beta_floor = 0.01;
  /// Treat the discount as a constant per batch (no gradient through it).
  bool beta_detached = true;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("loss: lambda must be >= 0");
    if (!(gamma >= 0.0)) throw ConfigError("loss: gamma must be >= 0");
    for (double a : alpha) {
      if (!(a > 0.0)) throw ConfigError("loss: alpha values must be > 0");
    }
    if (!(beta_floor > 0.0 && beta_floor <= 1.0)) {
      throw ConfigError("loss: beta_floor must be in (0, 1]");
    }
  }
};

inline constexpr double kProbClamp = 1e-7;

/// Per-class weights proportional to inverse class frequency, normalised to
/// mean 1 over the classes that occur. Absent classes get weight 1.
inline std::vector<double> inverse_frequency_alpha(const std::vector<long long>& counts) {
  std::vector<double> alpha(counts.size(), 1.0);
  double total = 0.0;
  std::size_t present = 0;
  for (auto c : counts) {
    if (c > 0) {
      total += static_cast<double>(c);
      ++present;
    }
  }
  if (present == 0) return alpha;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) alpha[i] = total / (static_cast<double>(present) * counts[i]);
  }
  return alpha;
}

namespace detail {

/// Index of the hot class per row; throws unless every row is exactly one-hot.
template <typename Scalar>
std::vector<Index> hot_indices(const Tensor<Scalar>& y, const char* op) {
  const Index K = last_dim(y);
  const Index N = y.size() / K;
  std::vector<Index> hot(static_cast<std::size_t>(N));
  const Scalar* v = y.data();
  for (Index r = 0; r < N; ++r) {
    Index idx = -1;
    for (Index c = 0; c < K; ++c) {
      const Scalar e = v[r * K + c];
      if (e == Scalar(1) && idx < 0) {
        idx = c;
      } else if (e != Scalar(0)) {
        idx = -2;
        break;
      }
    }
    if (idx < 0) throw ShapeError(std::string(op) + ": target row " + std::to_string(r) + " is not one-hot");
    hot[static_cast<std::size_t>(r)] = idx;
  }
  return hot;
}

/// -mean(log(clamp(s))) with `complement` selecting log(1 - s).
template <typename Scalar>
Tensor<Scalar> mean_log(const Tensor<Scalar>& s, bool complement) {
  const Index n = s.size();
  if (n == 0) throw ShapeError("mean_log: empty scores");
  const auto lo = static_cast<Scalar>(kProbClamp);
  const auto hi = static_cast<Scalar>(1.0 - kProbClamp);
  Array<Scalar> q = complement ? Array<Scalar>(Scalar(1) - s.value()) : Array<Scalar>(s.value());
  const Array<Scalar> qc = q.max(lo).min(hi);
  const Scalar value = -qc.log().mean();
  auto* ps = raw(s);
  return make_result<Scalar>(
      complement ? "neg_mean_log1m" : "neg_mean_log", {}, Array<Scalar>::Constant(1, value), {s},
      [=](const Array<Scalar>& g) {
        const Scalar sign = complement ? Scalar(1) : Scalar(-1);
        Array<Scalar> gs = (q >= lo && q <= hi).select(sign * g[0] / (qc * static_cast<Scalar>(n)), Scalar(0));
        ps->accumulate(gs);
      });
}

}  // namespace detail

/// Mean over frames of -alpha_c (1 - p_t)^gamma log p_t, p_t being the
/// probability of the true class clamped to [1e-7, 1 - 1e-7].
template <typename Scalar>
Tensor<Scalar> focal_loss(const Tensor<Scalar>& probs, const Tensor<Scalar>& y, const LossConfig& cfg) {
  if (probs.shape() != y.shape() || probs.rank() < 1) {
    throw ShapeError("focal_loss: probs " + shape_string(probs.shape()) + " vs target " +
                     shape_string(y.shape()));
  }
  const Index K = detail::last_dim(probs);
  const Index N = probs.size() / K;
  if (!cfg.alpha.empty() && static_cast<Index>(cfg.alpha.size()) != K) {
    throw ConfigError("focal_loss: alpha has " + std::to_string(cfg.alpha.size()) +
                      " entries for " + std::to_string(K) + " classes");
  }
  const auto hot = detail::hot_indices(y, "focal_loss");
  const auto gamma = static_cast<Scalar>(cfg.gamma);
  const auto lo = static_cast<Scalar>(kProbClamp);
  const auto hi = static_cast<Scalar>(1.0 - kProbClamp);
  const Scalar* p = probs.data();
  Array<Scalar> dloss_dp(N);  // derivative of each frame's term w.r.t. its p_t
  Scalar total = 0;
  for (Index r = 0; r < N; ++r) {
    const Index c = hot[static_cast<std::size_t>(r)];
    const Scalar a = cfg.alpha.empty() ? Scalar(1) : static_cast<Scalar>(cfg.alpha[static_cast<std::size_t>(c)]);
    const Scalar raw_p = p[r * K + c];
    const Scalar pt = std::clamp(raw_p, lo, hi);
    const Scalar one_minus = Scalar(1) - pt;
    const Scalar logp = std::log(pt);
    const Scalar mod = gamma == Scalar(0) ? Scalar(1) : std::pow(one_minus, gamma);
    total += -a * mod * logp;
    if (raw_p < lo || raw_p > hi) {
      dloss_dp[r] = 0;
    } else {
      const Scalar dmod = gamma == Scalar(0) ? Scalar(0) : gamma * std::pow(one_minus, gamma - Scalar(1));
      dloss_dp[r] = a * (dmod * logp - mod / pt);
    }
  }
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(N);
  auto* pp = detail::raw(probs);
  return make_result<Scalar>(
      "focal_loss", {}, Array<Scalar>::Constant(1, total * inv_n), {probs, y},
      [=, hot = hot, dloss_dp = std::move(dloss_dp)](const Array<Scalar>& g) {
        Array<Scalar> gp = Array<Scalar>::Zero(N * K);
        for (Index r = 0; r < N; ++r) gp[r * K + hot[static_cast<std::size_t>(r)]] = g[0] * inv_n * dloss_dp[r];
        pp->accumulate(gp);
      });
}

/// Discriminator side of the conditional GAN objective:
/// -mean(log D(x, y)) - mean(log(1 - D(x, G(x)))).
template <typename Scalar>
Tensor<Scalar> cgan_d_loss(const Tensor<Scalar>& real_scores, const Tensor<Scalar>& fake_scores) {
  return add(detail::mean_log(real_scores, false), detail::mean_log(fake_scores, true));
}

/// Generator's adversarial term in non-saturating form: -mean(log D(x, G(x))).
template <typename Scalar>
Tensor<Scalar> cgan_g_adv_loss(const Tensor<Scalar>& fake_scores) {
  return detail::mean_log(fake_scores, false);
}

/// Soft dice loss 1 - 2 sum(y * g) / (sum(y) + sum(g)) as a graph node.
template <typename Scalar>
Tensor<Scalar> soft_dice_loss(const Tensor<Scalar>& y, const Tensor<Scalar>& g) {
  if (y.shape() != g.shape()) {
    throw ShapeError("soft_dice_loss: " + shape_string(y.shape()) + " vs " + shape_string(g.shape()));
  }
  const Scalar inter = (y.value() * g.value()).sum();
  const Scalar denom = y.value().sum() + g.value().sum();
  const Scalar value = denom > Scalar(0) ? Scalar(1) - Scalar(2) * inter / denom : Scalar(0);
  auto* pg = detail::raw(g);
  auto* py = detail::raw(y);
  return make_result<Scalar>("soft_dice_loss", {}, Array<Scalar>::Constant(1, value), {y, g},
                             [=](const Array<Scalar>& grad) {
                               if (!(denom > Scalar(0))) return;
                               const Scalar d2 = denom * denom;
                               if (pg->requires_grad) {
                                 pg->accumulate(grad[0] * Scalar(-2) * (py->value * denom - inter) / d2);
                               }
                               if (py->requires_grad) {
                                 py->accumulate(grad[0] * Scalar(-2) * (pg->value * denom - inter) / d2);
                               }
                             });
}

/// Dice discount on the adversarial term: the soft dice loss between the
/// one-hot target and the probability map, clamped to [beta_floor, 1].
template <typename Scalar>
double dice_discount(const Tensor<Scalar>& y, const Tensor<Scalar>& g, const LossConfig& cfg) {
  NoGradGuard guard;
  const double raw = static_cast<double>(soft_dice_loss(y, g).item());
  return std::clamp(raw, cfg.beta_floor, 1.0);
}

template <typename Scalar>
struct ObjectiveTerms {
  Tensor<Scalar> total;
  Tensor<Scalar> probs;  // G(x)
  double beta = 1.0;
  double adversarial = 0.0;
  double focal = 0.0;
};

/// beta * L_adv(D(x, G(x))) + lambda * L_focal(G(x), y).
template <typename Scalar>
ObjectiveTerms<Scalar> generator_objective(const Tensor<Scalar>& x, const Tensor<Scalar>& y,
                                           const Generator<Scalar>& generator,
                                           const Discriminator<Scalar>& discriminator,
                                           const LossConfig& cfg, const ForwardOptions& gen_opts,
                                           const ForwardOptions& disc_opts) {
  ObjectiveTerms<Scalar> out;
  out.probs = generator.forward(x, gen_opts);
  const Tensor<Scalar> focal = focal_loss(out.probs, y, cfg);
  const Tensor<Scalar> adv = cgan_g_adv_loss(discriminator.forward(x, out.probs, disc_opts));
  Tensor<Scalar> discounted;
  if (cfg.beta_detached) {
    out.beta = dice_discount(y, out.probs, cfg);
    discounted = scale(adv, static_cast<Scalar>(out.beta));
  } else {
    const Tensor<Scalar> beta = clamp(soft_dice_loss(y, out.probs), static_cast<Scalar>(cfg.beta_floor), Scalar(1));
    out.beta = static_cast<double>(beta.item());
    discounted = mul(beta, adv);
  }
  out.total = add(discounted, scale(focal, static_cast<Scalar>(cfg.lambda)));
  out.adversarial = static_cast<double>(adv.item());
  out.focal = static_cast<double>(focal.item());
  return out;
}

}  // namespace dlab
