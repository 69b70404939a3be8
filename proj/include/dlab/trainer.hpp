#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dlab/dataio.hpp"
#include "dlab/losses.hpp"
#include "dlab/models.hpp"
#include "dlab/trainer_config.hpp"

namespace dlab {

/// Parameter or buffer value captured for persistence.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

std::vector<NamedTensor> snapshot(const ParamSet<float>& params);
/// Names, order and shapes must match the set exactly.
void restore(ParamSet<float>& params, const std::vector<NamedTensor>& tensors);

struct Checkpoint {
  static constexpr std::uint8_t kVersion = 1;

  GeneratorConfig generator;
  std::optional<DiscriminatorConfig> discriminator;
  LossConfig loss;
  TrainConfig train;
  std::vector<NamedTensor> generator_tensors;
  std::vector<NamedTensor> discriminator_tensors;
  std::int64_t step = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::vector<std::string> class_names;
  std::optional<NormStats> norm;
};

/// Binary layout (little endian):
///   "DLAB1" | u8 version | u32 n, n bytes config text (key = value lines)
///   | u32 tensor count | per tensor: u32 n, name | u32 rank | i64 dims[rank] | f32 values
/// Generator tensors are prefixed "generator/", discriminator tensors "discriminator/".
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

Generator<float> generator_from(const Checkpoint& c);

struct Batch {
  Tensor<float> x;  // [B, T, C]
  Tensor<float> y;  // [B, T, K] one-hot
};

Batch make_batch(const std::vector<const Window*>& windows);

struct GeneratorStep {
  double total = 0.0;
  double beta = std::numeric_limits<double>::quiet_NaN();
  double adversarial = std::numeric_limits<double>::quiet_NaN();
  double focal = 0.0;
};

/// One generator and (when adversarial) one discriminator with their Adam
/// states, updated by alternating steps.
class AdversarialTrainer {
 public:
  AdversarialTrainer(const GeneratorConfig& gen, const DiscriminatorConfig& disc, const LossConfig& loss,
                     const TrainConfig& train);

  /// Discriminator update on (x, y) real pairs and (x, G(x)) fake pairs.
  /// The generator runs without gradient tracking or running-stat updates.
  double step_d(const Batch& batch, double lr);
  /// Generator update on beta * adversarial + lambda * focal (focal only when
  /// not adversarial). Discriminator parameters and statistics are untouched.
  GeneratorStep step_g(const Batch& batch, double lr);

  Generator<float>& generator() { return generator_; }
  const Generator<float>& generator() const { return generator_; }
  Discriminator<float>* discriminator() { return discriminator_ ? &*discriminator_ : nullptr; }
  const LossConfig& loss_config() const { return loss_; }
  const TrainConfig& train_config() const { return train_; }
  long long d_steps() const { return d_steps_; }
  long long g_steps() const { return g_steps_; }

 private:
  TrainConfig train_;
  LossConfig loss_;
  Generator<float> generator_;
  std::optional<Discriminator<float>> discriminator_;
  Rng dropout_rng_;
  long long d_steps_ = 0;
  long long g_steps_ = 0;
};

struct LogRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double d_loss = std::numeric_limits<double>::quiet_NaN();
  double g_adv = std::numeric_limits<double>::quiet_NaN();
  double focal = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  double val_metric = std::numeric_limits<double>::quiet_NaN();
};

/// CSV with columns step,lr,d_loss,g_adv,focal,beta,val_metric (empty = not applicable).
std::string training_log_csv(const std::vector<LogRecord>& log);

struct TrainResult {
  Checkpoint best;
  std::vector<LogRecord> log;
};

struct TrainInputs {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossConfig loss;
  TrainConfig train;
  std::vector<std::string> class_names;
  std::optional<NormStats> norm;
};

/// Samples batches uniformly with replacement, runs d_steps_per_g D steps
/// and one G step per iteration, measures validation frame accuracy every
/// eval_every steps and at the final step (step 0 when total_steps is 0),
/// and keeps the first checkpoint reaching the best value. An empty
/// validation split falls back to the training windows.
TrainResult train(const DatasetSplit& split, const TrainInputs& inputs,
                  const std::function<void(const LogRecord&)>& on_record = {});

}  // namespace dlab
