#include "dlab/features.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <sstream>

#include "dlab/error.hpp"

namespace dlab {

namespace {

constexpr std::array<const char*, kScalarFeatures> kScalarNames = {
    "max",         "min",       "mean",     "std",       "median",
    "p25",         "p75",       "mean_lowpass", "mean_rect_highpass", "skewness",
    "kurtosis",    "zcr",       "principal_frequency", "spectral_energy", "frequency_entropy"};

double percentile(std::vector<double> sorted, double q) {
  // Linear interpolation between closest ranks.
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::array<double, kFeaturesPerChannel> ChannelFeatures::flatten() const {
  std::array<double, kFeaturesPerChannel> v = {max, min, mean, stddev, median, p25, p75,
                                               mean_lowpass, mean_rect_highpass, skewness, kurtosis,
                                               zero_crossing_rate, principal_frequency, spectral_energy,
                                               frequency_entropy};
  std::copy(frequency_magnitudes.begin(), frequency_magnitudes.end(), v.begin() + kScalarFeatures);
  return v;
}

std::vector<double> FeatureVector::flatten() const {
  std::vector<double> out;
  out.reserve(channels.size() * kFeaturesPerChannel);
  for (const auto& c : channels) {
    const auto f = c.flatten();
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

std::vector<std::string> feature_names(const std::vector<std::string>& channel_names) {
  std::vector<std::string> out;
  for (const auto& ch : channel_names) {
    for (const char* n : kScalarNames) out.push_back(ch + "_" + n);
    for (int k = 1; k <= kFrequencyMagnitudes; ++k) out.push_back(ch + "_mag" + std::to_string(k));
  }
  return out;
}

ChannelFeatures channel_features(const Eigen::Ref<const Eigen::VectorXd>& x, double fs) {
  const Index T = x.size();
  if (T < 8) throw ShapeError("feature extraction needs at least 8 samples, got " + std::to_string(T));
  const double n = static_cast<double>(T);
  ChannelFeatures f;
  f.max = x.maxCoeff();
  f.min = x.minCoeff();
  f.mean = x.mean();
  const Eigen::VectorXd centred = x.array() - f.mean;
  const double m2 = centred.squaredNorm() / n;
  f.stddev = std::sqrt(centred.squaredNorm() / (n - 1.0));
  if (m2 > 0.0) {
    const double m3 = centred.array().cube().sum() / n;
    const double m4 = centred.array().square().square().sum() / n;
    f.skewness = m3 / std::pow(m2, 1.5);
    f.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  std::vector<double> sorted(x.data(), x.data() + T);
  std::sort(sorted.begin(), sorted.end());
  f.median = percentile(sorted, 0.5);
  f.p25 = percentile(sorted, 0.25);
  f.p75 = percentile(sorted, 0.75);

  Eigen::VectorXd low(T);
  for (Index t = 0; t < T; ++t) {
    const Index a = std::max<Index>(0, t - 2), b = std::min<Index>(T - 1, t + 2);
    low[t] = x.segment(a, b - a + 1).mean();
  }
  f.mean_lowpass = low.mean();
  f.mean_rect_highpass = (x - low).cwiseAbs().mean();

  Index crossings = 0;
  for (Index t = 1; t < T; ++t) crossings += (x[t - 1] < 0.0) != (x[t] < 0.0);
  f.zero_crossing_rate = static_cast<double>(crossings) / (n - 1.0);

  Eigen::FFT<double> fft;
  std::vector<double> in(x.data(), x.data() + T);
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, in);  // full length T (Eigen mirrors the half spectrum)
  const Index half = T / 2;
  std::vector<double> mag(static_cast<std::size_t>(half + 1));
  for (Index k = 0; k <= half; ++k) mag[static_cast<std::size_t>(k)] = std::abs(spectrum[static_cast<std::size_t>(k)]);

  Index best = 0;
  for (Index k = 1; k <= half; ++k) {
    if (mag[static_cast<std::size_t>(k)] > (best ? mag[static_cast<std::size_t>(best)] : 0.0)) best = k;
  }
  f.principal_frequency = static_cast<double>(best) * fs / n;

  double energy = 0.0;
  for (const auto& c : spectrum) energy += std::norm(c);
  f.spectral_energy = energy / n;

  double power_total = 0.0;
  for (double m : mag) power_total += m * m;
  if (power_total > 0.0) {
    for (double m : mag) {
      const double p = m * m / power_total;
      if (p > 0.0) f.frequency_entropy -= p * std::log(p);
    }
  }
  for (int k = 1; k <= kFrequencyMagnitudes; ++k) {
    f.frequency_magnitudes[static_cast<std::size_t>(k - 1)] = k <= half ? mag[static_cast<std::size_t>(k)] : 0.0;
  }
  return f;
}

FeatureVector extract_window_features(const FrameMatrix& frames, double fs) {
  FeatureVector v;
  for (Index c = 0; c < frames.cols(); ++c) {
    const Eigen::VectorXd col = frames.col(c).cast<double>();
    v.channels.push_back(channel_features(col, fs));
  }
  return v;
}

int majority_label(const std::vector<int>& labels) {
  if (labels.empty()) throw ShapeError("majority_label: empty window");
  std::map<int, long long> counts;
  for (int l : labels) ++counts[l];
  int best = counts.begin()->first;
  long long best_count = counts.begin()->second;
  for (const auto& [l, c] : counts) {
    if (c > best_count) {
      best = l;
      best_count = c;
    }
  }
  return best;
}

std::vector<int> expand_window_prediction(int label, Index length) {
  if (length < 1) throw ShapeError("expand_window_prediction: length must be >= 1");
  return std::vector<int>(static_cast<std::size_t>(length), label);
}

std::vector<FeatureVector> feature_windows(const LabeledSequence& seq, Index length, Index num_classes) {
  std::vector<FeatureVector> out;
  for (const auto& w : make_windows(seq, length, length, num_classes)) {
    FeatureVector v = extract_window_features(w.x, seq.sample_rate_hz);
    v.label = majority_label(w.labels);
    out.push_back(std::move(v));
  }
  return out;
}

std::string features_csv(const std::vector<FeatureVector>& rows, const std::vector<std::string>& channel_names) {
  std::ostringstream os;
  for (const auto& n : feature_names(channel_names)) os << n << ',';
  os << "label\n";
  char buf[32];
  for (const auto& r : rows) {
    for (double v : r.flatten()) {
      std::snprintf(buf, sizeof buf, "%.10g", v);
      os << buf << ',';
    }
    os << r.label << '\n';
  }
  return os.str();
}

}  // namespace dlab
