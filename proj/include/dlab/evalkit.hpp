#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dlab/error.hpp"
#include "json.hpp"

namespace dlab {

struct MetricsReport {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<long long> support;  // ground-truth frames per class
  long long total_frames = 0;
};

enum class Misalignment : int { correct = 0, fragmentation, substitution, overfill, underfill };

inline constexpr std::array<const char*, 5> kMisalignmentNames = {
    "correct", "fragmentation", "substitution", "overfill", "underfill"};

/// Frame counts per category. Categories partition the frames, so the
/// counts always sum to total_frames.
struct MisalignmentCounts {
  std::array<long long, 5> counts{};

  long long& operator[](Misalignment m) { return counts[static_cast<std::size_t>(m)]; }
  long long operator[](Misalignment m) const { return counts[static_cast<std::size_t>(m)]; }
  long long total() const;
  long long errors() const { return total() - (*this)[Misalignment::correct]; }
};

struct MisalignmentReport {
  MisalignmentCounts overall;
  /// Breakdown by ground-truth class of each frame.
  std::vector<MisalignmentCounts> per_class;

  long long total_frames() const { return overall.total(); }
  double rate(Misalignment m) const;
};

/// Fraction of frames with pred == gt. Empty or unequal inputs throw.
double frame_accuracy(std::span<const int> gt, std::span<const int> pred);

/// Per-class F1 (0 when precision + recall = 0) and support-weighted mean.
MetricsReport f1_scores(std::span<const int> gt, std::span<const int> pred, int num_classes);

/// Category of every frame. gt is cut into maximal runs; misclassified frames
/// form error runs cut at gt boundaries. A run covering its whole gt segment
/// is substitution; one touching neither segment edge is fragmentation; one
/// touching exactly one edge is, per frame, overfill when the prediction
/// equals the gt class across that edge and underfill otherwise; a touched
/// edge that is the sequence edge means underfill.
std::vector<Misalignment> misalignment_labels(std::span<const int> gt, std::span<const int> pred);

MisalignmentReport misalignment_decompose(std::span<const int> gt, std::span<const int> pred,
                                          int num_classes);

/// Argmax per frame with lowest-index tie-break. probs: rows of `num_classes`.
std::vector<int> harden(std::span<const float> probs, int num_classes);

nlohmann::json to_json(const MetricsReport& m, const std::vector<std::string>& class_names);
nlohmann::json to_json(const MisalignmentReport& r, const std::vector<std::string>& class_names);
/// One row per class plus a totals row: counts and rates for each category.
std::string misalignment_csv(const MisalignmentReport& r, const std::vector<std::string>& class_names);
/// category,frames,rate rows (correct excluded) for composition plots.
std::string composition_csv(const MisalignmentReport& r);

}  // namespace dlab
