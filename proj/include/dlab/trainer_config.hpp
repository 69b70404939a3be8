#pragma once

#include <cstdint>

#include "dlab/error.hpp"
#include "dlab/optim.hpp"

namespace dlab {

struct TrainConfig {
  std::int64_t total_steps = 70000;
  Index batch_size = 100;
  LrSchedule lr;
  std::int64_t eval_every = 500;
  /// Off: focal-only training, no discriminator.
  bool adversarial = true;
  int d_steps_per_g = 1;
  std::uint64_t seed = 42;
  AdamConfig adam;

  void validate() const {
    if (total_steps < 0) throw ConfigError("train: total_steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    if (total_steps > 0 && eval_every > total_steps) {
      throw ConfigError("train: eval_every (" + std::to_string(eval_every) + ") exceeds total_steps (" +
                        std::to_string(total_steps) + ")");
    }
    if (d_steps_per_g < 1) throw ConfigError("train: d_steps_per_g must be >= 1");
    lr.validate();
  }
};

}  // namespace dlab
