#pragma once

#include <vector>

#include "dlab/dataio.hpp"
#include "dlab/evalkit.hpp"
#include "dlab/models.hpp"
#include "dlab/trainer.hpp"

namespace dlab {

struct DensePrediction {
  std::vector<int> truth;      // concatenated window labels
  std::vector<int> predicted;  // argmax, lowest id on ties
  std::vector<float> probs;    // frames x K
};

/// Eval-mode generator over windows in their given order.
DensePrediction predict_windows(const Generator<float>& generator, const std::vector<Window>& windows,
                                Index batch_size = 64);

/// Frame accuracy of eval-mode predictions on `windows`.
double validation_accuracy(const Generator<float>& generator, const std::vector<Window>& windows,
                           Index batch_size = 64);

struct ModelEvaluation {
  MetricsReport metrics;
  MisalignmentReport misalignment;
};

ModelEvaluation evaluate_model(const Checkpoint& checkpoint, const std::vector<Window>& windows);
ModelEvaluation evaluate_predictions(const DensePrediction& p, int num_classes);

}  // namespace dlab
