#include "dlab/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "dlab/evaluate.hpp"

namespace dlab {

namespace {

constexpr std::uint64_t kDiscSeedOffset = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kDropoutSeedOffset = 0xD1B54A32D192ED03ULL;
constexpr std::uint64_t kSamplingSeedOffset = 0x94D049BB133111EBULL;

}  // namespace

Batch make_batch(const std::vector<const Window*>& windows) {
  auto [x, y] = stack_windows<float>(windows);
  return {std::move(x), std::move(y)};
}

AdversarialTrainer::AdversarialTrainer(const GeneratorConfig& gen, const DiscriminatorConfig& disc,
                                       const LossConfig& loss, const TrainConfig& train)
    : train_(train), loss_(loss), generator_(gen, train.seed), dropout_rng_(train.seed ^ kDropoutSeedOffset) {
  train_.validate();
  loss_.validate();
  if (train_.adversarial) {
    if (disc.window_length != gen.window_length || disc.in_channels != gen.in_channels ||
        disc.num_classes != gen.num_classes) {
      throw ConfigError("trainer: discriminator and generator shapes disagree");
    }
    discriminator_.emplace(disc, train.seed ^ kDiscSeedOffset);
  }
}

double AdversarialTrainer::step_d(const Batch& batch, double lr) {
  if (!discriminator_) throw ConfigError("step_d: trainer is not adversarial");
  Tensor<float> fake;
  {
    NoGradGuard no_grad;
    fake = generator_.forward(batch.x, {Mode::train, false, &dropout_rng_});
  }
  auto& d = *discriminator_;
  d.params().zero_grad();
  const Tensor<float> real_scores = d.forward(batch.x, batch.y, {Mode::train, true, nullptr});
  const Tensor<float> fake_scores = d.forward(batch.x, fake, {Mode::train, true, nullptr});
  const Tensor<float> loss = cgan_d_loss(real_scores, fake_scores);
  backward(loss);
  adam_step(d.params(), lr, train_.adam);
  ++d_steps_;
  return loss.item();
}

GeneratorStep AdversarialTrainer::step_g(const Batch& batch, double lr) {
  generator_.params().zero_grad();
  GeneratorStep out;
  const ForwardOptions gen_opts{Mode::train, true, &dropout_rng_};
  if (discriminator_) {
    const auto terms = generator_objective(batch.x, batch.y, generator_, *discriminator_, loss_, gen_opts,
                                           {Mode::train, false, nullptr});
    backward(terms.total);
    out.total = terms.total.item();
    out.beta = terms.beta;
    out.adversarial = terms.adversarial;
    out.focal = terms.focal;
    // D received gradients through the graph; they are discarded, never applied.
    discriminator_->params().zero_grad();
  } else {
    const Tensor<float> probs = generator_.forward(batch.x, gen_opts);
    const Tensor<float> focal = focal_loss(probs, batch.y, loss_);
    const Tensor<float> total = scale(focal, static_cast<float>(loss_.lambda));
    backward(total);
    out.total = total.item();
    out.focal = focal.item();
  }
  adam_step(generator_.params(), lr, train_.adam);
  ++g_steps_;
  return out;
}

std::string training_log_csv(const std::vector<LogRecord>& log) {
  std::ostringstream os;
  os << "step,lr,d_loss,g_adv,focal,beta,val_metric\n";
  char buf[40];
  const auto field = [&](double v) {
    if (std::isnan(v)) return std::string();
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (const auto& r : log) {
    os << r.step << ',' << field(r.lr) << ',' << field(r.d_loss) << ',' << field(r.g_adv) << ','
       << field(r.focal) << ',' << field(r.beta) << ',' << field(r.val_metric) << '\n';
  }
  return os.str();
}

TrainResult train(const DatasetSplit& split, const TrainInputs& in,
                  const std::function<void(const LogRecord&)>& on_record) {
  if (split.train.empty()) throw ConfigError("train: empty training split");
  for (const auto* part : {&split.train, &split.validation}) {
    for (const auto& w : *part) {
      if (w.x.rows() != in.generator.window_length || w.x.cols() != in.generator.in_channels ||
          w.y.cols() != in.generator.num_classes) {
        throw ShapeError("train: window (" + std::to_string(w.x.rows()) + "x" + std::to_string(w.x.cols()) +
                         ", K=" + std::to_string(w.y.cols()) + ") does not match the model configuration");
      }
    }
  }
  const TrainConfig& tc = in.train;
  AdversarialTrainer trainer(in.generator, in.discriminator, in.loss, tc);
  const std::vector<Window>& val = split.validation.empty() ? split.train : split.validation;

  TrainResult result;
  result.best.generator = in.generator;
  if (tc.adversarial) result.best.discriminator = in.discriminator;
  result.best.loss = in.loss;
  result.best.train = tc;
  result.best.class_names = in.class_names;
  result.best.norm = in.norm;

  const auto keep = [&](std::int64_t step, double metric) {
    result.best.step = step;
    result.best.best_metric = metric;
    result.best.generator_tensors = snapshot(trainer.generator().params());
    result.best.discriminator_tensors.clear();
    if (auto* d = trainer.discriminator()) result.best.discriminator_tensors = snapshot(d->params());
  };

  if (tc.total_steps == 0) {
    LogRecord rec;
    rec.lr = tc.lr.rate(0);
    rec.val_metric = validation_accuracy(trainer.generator(), val);
    keep(0, rec.val_metric);
    result.log.push_back(rec);
    if (on_record) on_record(rec);
    return result;
  }

  Rng sampler(tc.seed ^ kSamplingSeedOffset);
  std::vector<const Window*> batch_windows(static_cast<std::size_t>(tc.batch_size));
  const auto n_train = static_cast<std::uint64_t>(split.train.size());
  for (std::int64_t step = 1; step <= tc.total_steps; ++step) {
    LogRecord rec;
    rec.step = step;
    rec.lr = tc.lr.rate(step - 1);
    for (auto& w : batch_windows) w = &split.train[uniform_index(sampler, n_train)];
    const Batch batch = make_batch(batch_windows);
    if (tc.adversarial) {
      for (int k = 0; k < tc.d_steps_per_g; ++k) rec.d_loss = trainer.step_d(batch, rec.lr);
    }
    const GeneratorStep g = trainer.step_g(batch, rec.lr);
    rec.g_adv = g.adversarial;
    rec.focal = g.focal;
    rec.beta = g.beta;
    if (step % tc.eval_every == 0 || step == tc.total_steps) {
      rec.val_metric = validation_accuracy(trainer.generator(), val);
      if (rec.val_metric > result.best.best_metric) keep(step, rec.val_metric);
    }
    result.log.push_back(rec);
    if (on_record) on_record(rec);
  }
  return result;
}

}  // namespace dlab
