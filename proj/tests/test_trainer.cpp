#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include "dlab/evaluate.hpp"
#include "dlab/trainer.hpp"

using namespace dlab;

namespace {

constexpr Index kT = 32, kC = 3, kK = 3;

std::vector<Window> synth_windows(std::uint64_t seed, Index frames = 1024) {
  SynthSpec spec;
  spec.classes = {{20, 60, 1.0, 1.0, 0.2}, {20, 60, 4.0, 2.0, 0.2}, {20, 60, 0.3, 0.5, 0.2}};
  spec.channels = kC;
  spec.total_frames = frames;
  spec.seed = seed;
  return make_windows(synth_generate(spec), kT, kT, kK, 4);
}

TrainInputs small_inputs() {
  TrainInputs in;
  in.generator.window_length = kT;
  in.generator.in_channels = kC;
  in.generator.num_classes = kK;
  in.generator.depth = 2;
  in.generator.base_filters = 4;
  in.discriminator.window_length = kT;
  in.discriminator.in_channels = kC;
  in.discriminator.num_classes = kK;
  in.discriminator.filters = {4, 4, 4};
  in.train.total_steps = 12;
  in.train.batch_size = 4;
  in.train.eval_every = 4;
  in.train.seed = 5;
  in.class_names = {"a", "b", "c"};
  return in;
}

DatasetSplit small_split() {
  DatasetSplit s;
  auto w = synth_windows(3);
  for (std::size_t i = 0; i < w.size(); ++i) (i % 3 == 0 ? s.validation : i % 3 == 1 ? s.test : s.train).push_back(w[i]);
  return s;
}

Batch first_batch(const std::vector<Window>& ws, std::size_t n) {
  std::vector<const Window*> ptrs;
  for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&ws[i]);
  return make_batch(ptrs);
}

std::vector<NamedTensor> with_buffers(const ParamSet<float>& p) { return snapshot(p); }

}  // namespace

TEST_CASE("discriminator step") {
  const auto in = small_inputs();
  AdversarialTrainer tr(in.generator, in.discriminator, in.loss, in.train);
  const auto ws = synth_windows(11);
  const Batch batch = first_batch(ws, 4);
  const auto g_before = with_buffers(tr.generator().params());
  const auto d_before = with_buffers(tr.discriminator()->params());
  const double first = tr.step_d(batch, 1e-3);
  double last = first;
  for (int i = 0; i < 60; ++i) last = tr.step_d(batch, 1e-3);
  CHECK(last < first);
  CHECK(with_buffers(tr.generator().params()) == g_before);
  CHECK(with_buffers(tr.discriminator()->params()) != d_before);
  CHECK(tr.d_steps() == 61);
  CHECK(std::isfinite(tr.step_d(first_batch(ws, 1), 1e-3)));
}

TEST_CASE("generator step") {
  const auto in = small_inputs();
  AdversarialTrainer tr(in.generator, in.discriminator, in.loss, in.train);
  const auto ws = synth_windows(12);
  const Batch batch = first_batch(ws, 4);
  const auto d_before = with_buffers(tr.discriminator()->params());
  const auto g_before = with_buffers(tr.generator().params());
  const auto s = tr.step_g(batch, 1e-3);
  CHECK(with_buffers(tr.discriminator()->params()) == d_before);
  CHECK(with_buffers(tr.generator().params()) != g_before);
  CHECK(s.total == doctest::Approx(s.beta * s.adversarial + in.loss.lambda * s.focal).epsilon(1e-5));
  for (const auto& e : tr.discriminator()->params().parameters()) CHECK_FALSE(e.tensor.has_grad());
  CHECK(std::isfinite(tr.step_g(first_batch(ws, 1), 1e-3).total));

  SUBCASE("focal-only configuration") {
    auto cfg = in.train;
    cfg.adversarial = false;
    AdversarialTrainer plain(in.generator, in.discriminator, in.loss, cfg);
    CHECK(plain.discriminator() == nullptr);
    CHECK_THROWS_AS(plain.step_d(batch, 1e-3), ConfigError);
    const auto p = plain.step_g(batch, 1e-3);
    CHECK(p.total == doctest::Approx(in.loss.lambda * p.focal).epsilon(1e-6));
    CHECK(std::isnan(p.adversarial));
  }
}

TEST_CASE("single-batch overfit reduces focal loss tenfold") {
  const auto in = small_inputs();
  AdversarialTrainer tr(in.generator, in.discriminator, in.loss, in.train);
  const auto ws = synth_windows(13);
  const Batch batch = first_batch(ws, 4);
  double first = 0, last = 0;
  for (int i = 0; i < 200; ++i) {
    tr.step_d(batch, 1e-3);
    const auto s = tr.step_g(batch, 1e-3);
    if (i == 0) first = s.focal;
    last = s.focal;
  }
  CAPTURE(first);
  CAPTURE(last);
  CHECK(last * 10.0 <= first);
  CHECK(std::abs(tr.d_steps() - tr.g_steps()) <= 1);
}

TEST_CASE("training loop") {
  const auto in = small_inputs();
  const auto split = small_split();
  REQUIRE(split.train.size() >= 4);

  SUBCASE("zero steps return the initial parameters") {
    auto zero = in;
    zero.train.total_steps = 0;
    const auto r = train(split, zero);
    Generator<float> fresh(in.generator, in.train.seed);
    CHECK(r.best.generator_tensors == snapshot(fresh.params()));
    CHECK(r.best.step == 0);
    REQUIRE(r.log.size() == 1);
    CHECK(r.log[0].step == 0);
    CHECK(r.best.best_metric == doctest::Approx(validation_accuracy(fresh, split.validation)).epsilon(1e-12));
  }
  SUBCASE("determinism, selection and checkpoint round trip") {
    std::vector<LogRecord> streamed;
    const auto a = train(split, in, [&](const LogRecord& r) { streamed.push_back(r); });
    const auto b = train(split, in);
    CHECK(training_log_csv(a.log) == training_log_csv(b.log));
    CHECK(a.best.generator_tensors == b.best.generator_tensors);
    CHECK(training_log_csv(streamed) == training_log_csv(a.log));
    CHECK(a.log.size() == 12);

    double best = -1;
    std::int64_t best_step = -1;
    for (const auto& r : a.log) {
      CHECK(std::isfinite(r.d_loss));
      CHECK(std::isfinite(r.g_adv));
      CHECK(r.lr == doctest::Approx(in.train.lr.rate(r.step - 1)).epsilon(1e-12));
      const bool evaluated = r.step % 4 == 0 || r.step == 12;
      CHECK(std::isnan(r.val_metric) != evaluated);
      if (evaluated && r.val_metric > best) {
        best = r.val_metric;
        best_step = r.step;
      }
    }
    CHECK(a.best.best_metric == best);
    CHECK(a.best.step == best_step);

    const auto g = generator_from(a.best);
    CHECK(std::abs(validation_accuracy(g, split.validation) - a.best.best_metric) <= 1e-6);

    const std::string bytes = serialize_checkpoint(a.best);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.generator_tensors == a.best.generator_tensors);
    CHECK(back.discriminator_tensors == a.best.discriminator_tensors);
    CHECK(back.class_names == a.best.class_names);
    CHECK(back.step == a.best.step);
    CHECK(back.best_metric == a.best.best_metric);
    CHECK(back.generator.depth == 2);
    CHECK(back.discriminator->filters == std::vector<Index>{4, 4, 4});
    CHECK(back.train.seed == 5);

    const auto path = std::filesystem::temp_directory_path() / ("dlab_ck_" + std::to_string(::getpid()) + ".dlab");
    save_checkpoint(a.best, path);
    CHECK(serialize_checkpoint(load_checkpoint(path)) == bytes);
    std::filesystem::remove(path);

    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad), doctest::Contains("DLAB1"), CheckpointError);
    bad = bytes;
    bad[5] = 9;
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad), doctest::Contains("version"), CheckpointError);
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), doctest::Contains("truncated"),
                         CheckpointError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), CheckpointError);
  }
  SUBCASE("focal-only runs log no adversarial terms") {
    auto plain = in;
    plain.train.adversarial = false;
    const auto r = train(split, plain);
    for (const auto& rec : r.log) {
      CHECK(std::isnan(rec.d_loss));
      CHECK(std::isfinite(rec.focal));
    }
    CHECK_FALSE(r.best.discriminator.has_value());
    CHECK(deserialize_checkpoint(serialize_checkpoint(r.best)).discriminator_tensors.empty());
  }
  SUBCASE("input validation") {
    DatasetSplit empty;
    CHECK_THROWS_AS(train(empty, in), ConfigError);
    auto wrong = in;
    wrong.generator.window_length = 64;
    wrong.discriminator.window_length = 64;
    CHECK_THROWS_AS(train(split, wrong), ShapeError);
    auto bad = in;
    bad.train.eval_every = 100;
    CHECK_THROWS_AS(train(split, bad), ConfigError);
  }
  SUBCASE("empty validation split falls back to training windows") {
    auto s = split;
    s.validation.clear();
    const auto r = train(s, in);
    CHECK(std::abs(validation_accuracy(generator_from(r.best), s.train) - r.best.best_metric) <= 1e-6);
  }
}

TEST_CASE("evaluation") {
  const auto ws = synth_windows(21);
  const auto in = small_inputs();
  Generator<float> g(in.generator, 1);
  const auto p = predict_windows(g, ws, 3);
  CHECK(p.truth.size() == ws.size() * kT);
  CHECK(p.predicted.size() == p.truth.size());
  CHECK(p.probs.size() == p.truth.size() * kK);
  CHECK(predict_windows(g, ws, 64).predicted == p.predicted);

  DensePrediction self{p.truth, p.truth, {}};
  const auto e = evaluate_predictions(self, kK);
  CHECK(e.metrics.accuracy == 1.0);
  CHECK(e.misalignment.overall.errors() == 0);
  long long support = 0;
  for (auto s : e.metrics.support) support += s;
  CHECK(support == static_cast<long long>(p.truth.size()));
}
