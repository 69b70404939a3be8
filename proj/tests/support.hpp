#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "dlab/ops.hpp"
#include "dlab/random.hpp"
#include "dlab/tensor.hpp"

namespace dlab::testing {

using T64 = Tensor<double>;

inline T64 random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  const Index n = shape_size(shape);
  Array<double> v(n);
  for (Index i = 0; i < n; ++i) v[i] = uniform(rng, lo, hi);
  return T64::from_values(std::move(shape), std::move(v), grad);
}

/// Values bounded away from zero, for ops with a kink at the origin.
inline T64 random_nonzero(Shape shape, Rng& rng, double min_abs = 0.05, double max_abs = 1.0) {
  const Index n = shape_size(shape);
  Array<double> v(n);
  for (Index i = 0; i < n; ++i) {
    const double m = uniform(rng, min_abs, max_abs);
    v[i] = uniform01(rng) < 0.5 ? -m : m;
  }
  return T64::from_values(std::move(shape), std::move(v), true);
}

/// One-hot rows [.., K] with random hot classes.
inline T64 random_one_hot(Shape shape, Rng& rng) {
  const Index K = shape.back();
  const Index rows = shape_size(shape) / K;
  Array<double> v = Array<double>::Zero(rows * K);
  for (Index r = 0; r < rows; ++r) v[r * K + static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(K)))] = 1.0;
  return T64::from_values(std::move(shape), std::move(v), false);
}

/// Rows of a strictly positive distribution over the last axis.
inline T64 random_simplex(Shape shape, Rng& rng, double floor = 0.05) {
  const Index K = shape.back();
  const Index rows = shape_size(shape) / K;
  Array<double> v(rows * K);
  for (Index r = 0; r < rows; ++r) {
    double s = 0;
    for (Index k = 0; k < K; ++k) s += v[r * K + k] = uniform(rng, floor, 1.0);
    v.segment(r * K, K) /= s;
  }
  return T64::from_values(std::move(shape), std::move(v), true);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  Index checked = 0;
  /// Entries whose +-h stencil changes a PReLU sign or a max-pool argmax.
  Index straddled = 0;
};

/// PReLU input signs and max-pool argmax positions of every such node in the
/// graph of `loss`, in a fixed traversal order. Two evaluations with equal
/// signatures lie on the same smooth piece of the function.
inline std::vector<Index> branch_signature(const T64& loss) {
  std::vector<Index> sig;
  std::vector<const Node<double>*> stack{loss.node().get()};
  std::unordered_set<const Node<double>*> seen{loss.node().get()};
  while (!stack.empty()) {
    const Node<double>* n = stack.back();
    stack.pop_back();
    if (n->op == "prelu") {
      const auto& x = n->parents[0]->value;
      for (Index i = 0; i < x.size(); ++i) sig.push_back(x[i] < 0.0 ? 1 : 0);
    } else if (n->op == "max_pool_time") {
      const auto& in = *n->parents[0];
      const Index B = in.shape[0], T = in.shape[1], C = in.shape[2];
      const Index size = T / n->shape[1];
      for (Index b = 0; b < B; ++b) {
        for (Index t = 0; t < T; t += size) {
          for (Index c = 0; c < C; ++c) {
            Index best = 0;
            for (Index r = 1; r < size; ++r) {
              if (in.value[(b * T + t + r) * C + c] > in.value[(b * T + t + best) * C + c]) best = r;
            }
            sig.push_back(best);
          }
        }
      }
    }
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  return sig;
}

/// Central differences of f() against reverse mode for every entry of every
/// input. rel = |a - n| / max(|a|, |n|, floor).
///
/// With `kink_aware`, the differences are evaluated with graph recording on
/// and entries whose stencil changes the branch signature are counted in
/// `straddled` instead of being compared.
template <typename F>
GradCheck grad_check(const std::vector<T64>& inputs, F&& f, double h = 1e-4, double floor = 1e-6,
                     bool kink_aware = false) {
  for (const auto& t : inputs) t.zero_grad();
  const T64 loss = f();
  backward(loss);
  const std::vector<Index> base_sig = kink_aware ? branch_signature(loss) : std::vector<Index>{};
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const T64& t = inputs[i];
    const Array<double> analytic = t.has_grad() ? Array<double>(t.grad()) : Array<double>::Zero(t.size());
    for (Index j = 0; j < t.size(); ++j) {
      double& v = t.mutable_value()[j];
      const double saved = v;
      double fp = 0, fm = 0;
      bool straddles = false;
      if (kink_aware) {
        v = saved + h;
        const T64 lp = f();
        v = saved - h;
        const T64 lm = f();
        fp = lp.item();
        fm = lm.item();
        straddles = branch_signature(lp) != base_sig || branch_signature(lm) != base_sig;
      } else {
        NoGradGuard guard;
        v = saved + h;
        fp = f().item();
        v = saved - h;
        fm = f().item();
      }
      v = saved;
      if (straddles) {
        ++out.straddled;
        continue;
      }
      const double numeric = (fp - fm) / (2 * h);
      const double rel = std::abs(analytic[j] - numeric) / std::max({std::abs(analytic[j]), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = "input " + std::to_string(i) + "[" + std::to_string(j) + "] analytic " +
                    std::to_string(analytic[j]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

inline constexpr double kGradTol = 1e-4;
inline constexpr int kGradSeeds = 20;

/// Reduces any tensor to a scalar with fixed random weights, so every
/// output entry contributes a distinct upstream gradient.
inline T64 weighted_sum(const T64& t, std::uint64_t seed) {
  Rng rng(seed);
  const T64 w = random_tensor(t.shape(), rng, -1.0, 1.0, false);
  return sum(mul(t, w));
}

}  // namespace dlab::testing
