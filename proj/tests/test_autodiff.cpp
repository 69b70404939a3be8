#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dlab/losses.hpp"
#include "dlab/models.hpp"
#include "support.hpp"

using namespace dlab;
using namespace dlab::testing;

namespace {

template <typename Build>
void check_op(const char* name, Build&& build) {
  for (int seed = 0; seed < kGradSeeds; ++seed) {
    Rng rng(1000 + static_cast<std::uint64_t>(seed));
    auto [inputs, f] = build(rng, static_cast<std::uint64_t>(seed));
    const GradCheck r = grad_check(inputs, f);
    INFO(name << " seed " << seed << ": " << r.worst);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < kGradTol);
  }
}

using Fn = std::function<T64()>;
using Case = std::pair<std::vector<T64>, Fn>;

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  check_op("add", [](Rng& rng, std::uint64_t s) -> Case {
    auto a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 3, 2}, rng);
    return {{a, b}, [=] { return weighted_sum(add(a, b), s); }};
  });
  check_op("mul", [](Rng& rng, std::uint64_t s) -> Case {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    return {{a, b}, [=] { return weighted_sum(mul(a, b), s); }};
  });
  check_op("mul shared operand", [](Rng& rng, std::uint64_t s) -> Case {
    auto a = random_tensor({5}, rng);
    return {{a}, [=] { return weighted_sum(mul(a, add(a, a)), s); }};
  });
  check_op("scale", [](Rng& rng, std::uint64_t s) -> Case {
    auto a = random_tensor({4, 2}, rng);
    const double f = uniform(rng, -3.0, 3.0);
    return {{a}, [=] { return weighted_sum(scale(a, f), s); }};
  });
  check_op("sum", [](Rng& rng, std::uint64_t) -> Case {
    auto a = random_tensor({3, 3}, rng);
    return {{a}, [=] { auto t = sum(a); return mul(t, t); }};
  });
  check_op("mean", [](Rng& rng, std::uint64_t) -> Case {
    auto a = random_tensor({2, 5}, rng);
    return {{a}, [=] { auto t = mean(a); return mul(t, sigmoid(t)); }};
  });
  check_op("reshape", [](Rng& rng, std::uint64_t s) -> Case {
    auto a = random_tensor({2, 6}, rng);
    return {{a}, [=] { return weighted_sum(reshape(a, {3, 2, 2}), s); }};
  });
  check_op("clamp", [](Rng& rng, std::uint64_t s) -> Case {
    // Entries kept at least 0.01 from either bound so no perturbation crosses one.
    const Index n = 12;
    Array<double> v(n);
    for (Index i = 0; i < n; ++i) {
      const double u = uniform01(rng);
      v[i] = u < 0.3 ? uniform(rng, -1.0, -0.51) : (u < 0.7 ? uniform(rng, -0.49, 0.49) : uniform(rng, 0.51, 1.0));
    }
    auto a = T64::from_values({n}, v, true);
    return {{a}, [=] { return weighted_sum(clamp(a, -0.5, 0.5), s); }};
  });
  check_op("sigmoid", [](Rng& rng, std::uint64_t s) -> Case {
    auto a = random_tensor({3, 4}, rng, -6.0, 6.0);
    return {{a}, [=] { return weighted_sum(sigmoid(a), s); }};
  });
  check_op("softmax", [](Rng& rng, std::uint64_t s) -> Case {
    auto a = random_tensor({2, 3, 4}, rng, -3.0, 3.0);
    return {{a}, [=] { return weighted_sum(softmax_over_classes(a), s); }};
  });
}

TEST_CASE("sequence ops match finite differences") {
  for (Index k : {1, 2, 3, 4, 5}) {
    for (Padding pad : {Padding::same, Padding::valid}) {
      check_op("conv_time", [=](Rng& rng, std::uint64_t s) -> Case {
        auto x = random_tensor({2, 7, 3}, rng);
        auto w = random_tensor({k, 3, 2}, rng);
        auto b = random_tensor({2}, rng);
        return {{x, w, b}, [=] { return weighted_sum(conv_time(x, w, b, pad), s); }};
      });
    }
  }
  check_op("max_pool_time", [](Rng& rng, std::uint64_t s) -> Case {
    // Distinct values 0.01 apart: no tie is within reach of a perturbation.
    const Index n = 2 * 8 * 3;
    Array<double> v(n);
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
    for (Index i = 0; i < n; ++i) v[i] = 0.01 * static_cast<double>(perm[static_cast<std::size_t>(i)]) - 0.4;
    auto x = T64::from_values({2, 8, 3}, v, true);
    const Index size = s % 2 == 0 ? 2 : 4;
    return {{x}, [=] { return weighted_sum(max_pool_time(x, size), s); }};
  });
  check_op("upsample_time", [](Rng& rng, std::uint64_t s) -> Case {
    auto x = random_tensor({2, 3, 2}, rng);
    const Index f = 1 + static_cast<Index>(s % 3);
    return {{x}, [=] { return weighted_sum(upsample_time(x, f), s); }};
  });
  check_op("concat_channels", [](Rng& rng, std::uint64_t s) -> Case {
    auto a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 3, 3}, rng);
    return {{a, b}, [=] { return weighted_sum(concat_channels(a, b), s); }};
  });
}

TEST_CASE("normalisation, activation and dropout match finite differences") {
  for (Mode mode : {Mode::train, Mode::eval}) {
    check_op("batch_norm", [=](Rng& rng, std::uint64_t s) -> Case {
      auto x = random_tensor({3, 4, 2}, rng, -2.0, 2.0);
      auto gamma = random_tensor({2}, rng, 0.5, 1.5), beta = random_tensor({2}, rng);
      auto rm = random_tensor({2}, rng, -0.5, 0.5, false), rv = random_tensor({2}, rng, 0.5, 2.0, false);
      BatchNormOptions<double> opts;
      opts.update_running = false;
      return {{x, gamma, beta}, [=] { return weighted_sum(batch_norm(x, gamma, beta, mode, rm, rv, opts), s); }};
    });
  }
  check_op("prelu", [](Rng& rng, std::uint64_t s) -> Case {
    auto x = random_nonzero({2, 5, 3}, rng);
    auto slope = random_tensor({3}, rng, 0.0, 0.5);
    return {{x, slope}, [=] { return weighted_sum(prelu(x, slope), s); }};
  });
  check_op("spatial_dropout", [](Rng& rng, std::uint64_t s) -> Case {
    auto x = random_tensor({3, 4, 5}, rng);
    return {{x}, [=] {
              Rng mask_rng(s);
              return weighted_sum(spatial_dropout(x, 0.4, Mode::train, &mask_rng), s);
            }};
  });
}

TEST_CASE("losses match finite differences") {
  for (double gamma : {0.0, 0.5, 2.0, 3.0}) {
    check_op("focal_loss", [=](Rng& rng, std::uint64_t s) -> Case {
      auto p = random_simplex({2, 5, 3}, rng);
      auto y = random_one_hot({2, 5, 3}, rng);
      LossConfig cfg;
      cfg.gamma = gamma;
      if (s % 2 == 1) cfg.alpha = {0.5, 1.0, 2.0};
      return {{p}, [=] { return focal_loss(p, y, cfg); }};
    });
  }
  for (bool complement : {false, true}) {
    check_op("mean_log", [=](Rng& rng, std::uint64_t) -> Case {
      auto sc = random_tensor({2, 6}, rng, 0.02, 0.98);
      return {{sc}, [=] { return detail::mean_log(sc, complement); }};
    });
  }
  check_op("cgan_d_loss", [](Rng& rng, std::uint64_t) -> Case {
    auto real = random_tensor({2, 4}, rng, 0.02, 0.98), fake = random_tensor({2, 4}, rng, 0.02, 0.98);
    return {{real, fake}, [=] { return cgan_d_loss(real, fake); }};
  });
  check_op("cgan_g_adv_loss", [](Rng& rng, std::uint64_t) -> Case {
    auto fake = random_tensor({3, 2}, rng, 0.02, 0.98);
    return {{fake}, [=] { return cgan_g_adv_loss(fake); }};
  });
  check_op("soft_dice_loss", [](Rng& rng, std::uint64_t) -> Case {
    auto y = random_tensor({2, 4, 3}, rng, 0.0, 1.0), g = random_simplex({2, 4, 3}, rng);
    return {{y, g}, [=] { return soft_dice_loss(y, g); }};
  });
}

namespace {

GeneratorConfig tiny_generator() {
  GeneratorConfig g;
  g.window_length = 16;
  g.in_channels = 2;
  g.num_classes = 3;
  g.depth = 2;
  g.base_filters = 2;
  g.kernel_size = 3;
  g.dropout_rate = 0.2;
  g.dropout_block = 2;
  return g;
}

DiscriminatorConfig tiny_discriminator() {
  DiscriminatorConfig d;
  d.window_length = 16;
  d.in_channels = 2;
  d.num_classes = 3;
  d.filters = {2, 3, 2};
  return d;
}

std::vector<T64> parameter_tensors(const ParamSet<double>& p) {
  std::vector<T64> out;
  for (const auto& e : p.parameters()) out.push_back(e.tensor);
  return out;
}

constexpr Index kBatch = 4;
/// Random instances whose base point lies within stencil reach of a PReLU or
/// max-pool kink are redrawn; at most this many per test.
constexpr int kMaxRedraws = 20;
/// Whole-model losses are O(1); entries below this magnitude are held to an
/// absolute error of kGradTol * kModelFloor.
constexpr double kModelFloor = 1e-4;

/// Runs `check(seed)` on successive seeds until kGradSeeds kink-free
/// instances have been compared.
template <typename Check>
void over_instances(const std::string& name, Check&& check) {
  int accepted = 0, redrawn = 0;
  for (std::uint64_t seed = 0; accepted < kGradSeeds && redrawn <= kMaxRedraws; ++seed) {
    const GradCheck r = check(seed);
    if (r.straddled > 0) {
      ++redrawn;
      continue;
    }
    ++accepted;
    INFO(name << " seed " << seed << ": " << r.worst);
    CHECK(r.max_rel_error < kGradTol);
  }
  INFO(name << ": " << redrawn << " instances redrawn");
  CHECK(accepted == kGradSeeds);
}

}  // namespace

TEST_CASE("discriminator loss composition matches finite differences") {
  over_instances("cgan_d_loss(D)", [](std::uint64_t seed) {
    Rng rng(500 + seed);
    Discriminator<double> d(tiny_discriminator(), seed);
    const T64 x = random_tensor({kBatch, 16, 2}, rng, -1, 1, false);
    const T64 y = random_one_hot({kBatch, 16, 3}, rng);
    const T64 fake = random_simplex({kBatch, 16, 3}, rng).detach();
    const auto f = [&] {
      const ForwardOptions o{Mode::train, false, nullptr};
      return cgan_d_loss(d.forward(x, y, o), d.forward(x, fake, o));
    };
    return grad_check(parameter_tensors(d.params()), f, 1e-4, kModelFloor, true);
  });
}

TEST_CASE("generator objective matches finite differences") {
  for (bool detached : {false, true}) {
    over_instances(detached ? "objective, detached beta" : "objective, live beta", [&](std::uint64_t seed) {
      Rng rng(900 + seed);
      Generator<double> g(tiny_generator(), seed);
      Discriminator<double> d(tiny_discriminator(), 77 + seed);
      const T64 x = random_tensor({kBatch, 16, 2}, rng, -1, 1, false);
      const T64 y = random_one_hot({kBatch, 16, 3}, rng);
      LossConfig cfg;
      cfg.lambda = 3.0;
      cfg.beta_detached = detached;
      const ForwardOptions dopt{Mode::train, false, nullptr};
      const auto objective = [&] {
        Rng drop(seed);
        return generator_objective(x, y, g, d, cfg, {Mode::train, false, &drop}, dopt);
      };
      // A detached discount is a constant of the gradient: the reference holds
      // it at its value at the unperturbed point.
      const double beta0 = objective().beta;
      const auto reference = [&] {
        if (!detached) return objective().total;
        Rng drop(seed);
        const T64 probs = g.forward(x, {Mode::train, false, &drop});
        return add(scale(cgan_g_adv_loss(d.forward(x, probs, dopt)), beta0),
                   scale(focal_loss(probs, y, cfg), cfg.lambda));
      };
      const auto params = parameter_tensors(g.params());
      for (const auto& p : params) p.zero_grad();
      backward(objective().total);
      std::vector<Array<double>> analytic;
      for (const auto& p : params) analytic.push_back(p.grad());
      const GradCheck r = grad_check(params, reference, 1e-4, kModelFloor, true);
      for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK((analytic[i] - params[i].grad()).abs().maxCoeff() <= 1e-12);
      }
      return r;
    });
  }
}

TEST_CASE("backward semantics") {
  SUBCASE("non-scalar loss is rejected") {
    auto a = T64::zeros({2}, true);
    CHECK_THROWS_AS(backward(a), ShapeError);
  }
  SUBCASE("leaf gradients accumulate until zero_grad") {
    auto a = T64::full({3}, 2.0, true);
    backward(sum(a));
    backward(sum(a));
    CHECK(a.grad().isApproxToConstant(2.0));
    a.zero_grad();
    CHECK_FALSE(a.has_grad());
  }
  SUBCASE("no graph is recorded under NoGradGuard") {
    auto a = T64::full({3}, 1.0, true);
    NoGradGuard guard;
    const auto b = sum(mul(a, a));
    CHECK_FALSE(b.requires_grad());
    CHECK(b.node()->parents.empty());
  }
  SUBCASE("detach cuts history") {
    auto a = T64::full({2}, 3.0, true);
    const auto b = mul(a, a).detach();
    backward(sum(mul(b, a)));
    CHECK(a.grad().isApproxToConstant(9.0));
  }
  SUBCASE("constants receive no gradient") {
    auto a = T64::full({2}, 1.0, true);
    auto c = T64::full({2}, 5.0, false);
    backward(sum(mul(a, c)));
    CHECK_FALSE(c.has_grad());
    CHECK(a.grad().isApproxToConstant(5.0));
  }
}
