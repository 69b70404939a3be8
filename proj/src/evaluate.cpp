#include "dlab/evaluate.hpp"

#include <algorithm>

namespace dlab {

DensePrediction predict_windows(const Generator<float>& generator, const std::vector<Window>& windows,
                                Index batch_size) {
  NoGradGuard no_grad;
  const Index K = generator.config().num_classes;
  DensePrediction out;
  std::vector<const Window*> chunk;
  for (std::size_t i = 0; i < windows.size(); i += static_cast<std::size_t>(batch_size)) {
    chunk.clear();
    for (std::size_t j = i; j < std::min(windows.size(), i + static_cast<std::size_t>(batch_size)); ++j) {
      chunk.push_back(&windows[j]);
      out.truth.insert(out.truth.end(), windows[j].labels.begin(), windows[j].labels.end());
    }
    const Batch b = make_batch(chunk);
    const Tensor<float> probs = generator.forward(b.x, {Mode::eval, false, nullptr});
    out.probs.insert(out.probs.end(), probs.data(), probs.data() + probs.size());
  }
  out.predicted = harden(out.probs, static_cast<int>(K));
  return out;
}

double validation_accuracy(const Generator<float>& generator, const std::vector<Window>& windows,
                           Index batch_size) {
  const auto p = predict_windows(generator, windows, batch_size);
  return frame_accuracy(p.truth, p.predicted);
}

ModelEvaluation evaluate_predictions(const DensePrediction& p, int num_classes) {
  return {f1_scores(p.truth, p.predicted, num_classes),
          misalignment_decompose(p.truth, p.predicted, num_classes)};
}

ModelEvaluation evaluate_model(const Checkpoint& checkpoint, const std::vector<Window>& windows) {
  const Generator<float> g = generator_from(checkpoint);
  return evaluate_predictions(predict_windows(g, windows), static_cast<int>(checkpoint.generator.num_classes));
}

}  // namespace dlab
