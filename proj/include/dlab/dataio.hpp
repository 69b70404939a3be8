#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dlab/random.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kUnlabeled = -1;

/// Contiguous sensor frames (T x C) with one class id per frame (-1 = unlabeled).
struct LabeledSequence {
  FrameMatrix frames;
  std::vector<int> labels;
  std::string source_id;
  double sample_rate_hz = 50.0;
  std::vector<std::string> channel_names;

  Index length() const { return frames.rows(); }
  Index channels() const { return frames.cols(); }
};

/// Fixed-length, fully labelled slice of a sequence.
struct Window {
  FrameMatrix x;         // T_w x C
  FrameMatrix y;         // T_w x K, rows one-hot
  std::vector<int> labels;
  std::string source_id;
  Index start_frame = 0;
};

struct DatasetSplit {
  std::vector<Window> train, validation, test;
  std::uint64_t seed = 42;
  double train_fraction = 0.4356;
  double validation_fraction = 0.2178;
};

enum class SplitMode { window, source };

/// Per-channel z-score statistics.
struct NormStats {
  std::vector<std::string> channel_names;
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Synthetic generator parameters: per class a sinusoid (frequency,
/// amplitude) plus Gaussian noise, with uniform segment durations.
struct SynthClass {
  Index min_duration = 50;
  Index max_duration = 200;
  double frequency_hz = 1.0;
  double amplitude = 1.0;
  double noise_sigma = 0.1;
};

struct SynthSpec {
  std::vector<SynthClass> classes;
  Index channels = 3;
  Index total_frames = 10000;
  double sample_rate_hz = 50.0;
  /// Label boundaries are displaced from the waveform change by up to this
  /// many frames (uniform in [-jitter, jitter]).
  Index boundary_jitter = 0;
  std::uint64_t seed = 1;
};

/// HAPT activity names in activity-id order (activity id a maps to class a - 1).
const std::vector<std::string>& hapt_class_names();

/// Reads RawData/acc_expNN_userUU.txt, the paired gyro file and labels.txt.
/// One 6-channel sequence per experiment. labels.txt rows are
/// "experiment user activity start end" with inclusive frame indices.
std::vector<LabeledSequence> load_hapt(const std::filesystem::path& root);

struct CsvSchema {
  std::vector<std::string> channel_columns;  // empty: every column but the label column
  std::string label_column = "label";
  std::vector<std::string> classes;          // label strings in class-id order
  double sample_rate_hz = 50.0;
};

/// Header row required. An empty label cell means unlabeled.
LabeledSequence load_csv(const std::filesystem::path& file, const CsvSchema& schema);
void write_csv(const LabeledSequence& seq, const std::vector<std::string>& classes,
               const std::filesystem::path& file);

NormStats compute_norm_stats(const std::vector<Window>& windows,
                             const std::vector<std::string>& channel_names = {});
NormStats compute_norm_stats(const std::vector<LabeledSequence>& seqs);
/// z = (v - mean) / max(std, 1e-8). Not idempotent.
void apply_norm(const NormStats& stats, FrameMatrix& frames);
void apply_norm(const NormStats& stats, std::vector<Window>& windows);
void save_norm_stats(const NormStats& stats, const std::filesystem::path& file);
NormStats load_norm_stats(const std::filesystem::path& file);

/// Windows drawn from maximal labelled spans only; partial tails are dropped.
/// `required_multiple` is the model's pooling divisor (2^depth).
std::vector<Window> make_windows(const LabeledSequence& seq, Index length, Index stride,
                                 Index num_classes, Index required_multiple = 1);

/// Shuffle then cut: floor(0.4356 N) train, floor(0.2178 N) validation, rest test.
/// Source mode assigns whole source_ids to one split (cut on source count).
DatasetSplit split_windows(std::vector<Window> windows, std::uint64_t seed,
                           SplitMode mode = SplitMode::window);

LabeledSequence synth_generate(const SynthSpec& spec);

/// Stacks windows into [B, T, C] inputs and [B, T, K] one-hot targets.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> stack_windows(const std::vector<const Window*>& batch) {
  if (batch.empty()) throw ShapeError("stack_windows: empty batch");
  const Index B = static_cast<Index>(batch.size());
  const Index T = batch.front()->x.rows(), C = batch.front()->x.cols(), K = batch.front()->y.cols();
  Array<Scalar> xs(B * T * C), ys(B * T * K);
  for (Index b = 0; b < B; ++b) {
    const Window& w = *batch[static_cast<std::size_t>(b)];
    if (w.x.rows() != T || w.x.cols() != C || w.y.cols() != K) {
      throw ShapeError("stack_windows: windows of differing shape in one batch");
    }
    for (Index i = 0; i < T * C; ++i) xs[b * T * C + i] = static_cast<Scalar>(w.x.data()[i]);
    for (Index i = 0; i < T * K; ++i) ys[b * T * K + i] = static_cast<Scalar>(w.y.data()[i]);
  }
  return {Tensor<Scalar>::from_values({B, T, C}, std::move(xs)),
          Tensor<Scalar>::from_values({B, T, K}, std::move(ys))};
}

}  // namespace dlab
