#pragma once

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

#include "dlab/dataio.hpp"

namespace dlab {

inline constexpr int kFrequencyMagnitudes = 10;
inline constexpr int kScalarFeatures = 15;
inline constexpr int kFeaturesPerChannel = kScalarFeatures + kFrequencyMagnitudes;

/// Handcrafted statistics of one channel of a window.
struct ChannelFeatures {
  double max = 0, min = 0, mean = 0, stddev = 0, median = 0, p25 = 0, p75 = 0;
  double mean_lowpass = 0, mean_rect_highpass = 0, skewness = 0, kurtosis = 0;
  double zero_crossing_rate = 0, principal_frequency = 0, spectral_energy = 0, frequency_entropy = 0;
  std::array<double, kFrequencyMagnitudes> frequency_magnitudes{};

  std::array<double, kFeaturesPerChannel> flatten() const;
};

struct FeatureVector {
  std::vector<ChannelFeatures> channels;
  int label = -1;

  std::vector<double> flatten() const;
};

/// Names in flatten() order, e.g. "acc_x_max", ..., "acc_x_mag10".
std::vector<std::string> feature_names(const std::vector<std::string>& channel_names);

/// Features for a single channel. Requires at least 8 samples.
///
/// std uses N-1; percentiles interpolate linearly; skewness and (excess)
/// kurtosis are the biased moment ratios (0 for a constant signal). The
/// low-pass signal is a centred width-5 moving average truncated at the
/// edges; high-pass = signal - low-pass. Spectral features use the one-sided
/// DFT magnitude |X_k|, k = 0..T/2: principal frequency is the largest
/// non-DC bin (0 Hz if all are zero) times fs/T, spectral energy is
/// sum_k |X_k|^2 / T over the full spectrum, entropy is the natural-log
/// Shannon entropy of the normalised one-sided power spectrum, and the
/// magnitudes are |X_1|..|X_10| (zero beyond T/2).
ChannelFeatures channel_features(const Eigen::Ref<const Eigen::VectorXd>& signal, double sample_rate_hz);

/// frames: T x C. The label is left at -1.
FeatureVector extract_window_features(const FrameMatrix& frames, double sample_rate_hz);

/// Modal label; ties go to the lowest class id.
int majority_label(const std::vector<int>& labels);

std::vector<int> expand_window_prediction(int label, Index length);

/// Feature rows for non-overlapping fully labelled windows, labelled by majority.
std::vector<FeatureVector> feature_windows(const LabeledSequence& seq, Index length, Index num_classes);

/// Header row of feature names followed by one row per vector with its label.
std::string features_csv(const std::vector<FeatureVector>& rows, const std::vector<std::string>& channel_names);

}  // namespace dlab
