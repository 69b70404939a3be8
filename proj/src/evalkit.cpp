#include "dlab/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dlab/error.hpp"

namespace dlab {

namespace {

void check_pair(std::span<const int> gt, std::span<const int> pred, const char* what) {
  if (gt.size() != pred.size()) {
    throw ShapeError(std::string(what) + ": ground truth has " + std::to_string(gt.size()) +
                     " frames, prediction " + std::to_string(pred.size()));
  }
}

std::string class_name(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : std::to_string(c);
}

}  // namespace

long long MisalignmentCounts::total() const {
  return std::accumulate(counts.begin(), counts.end(), 0LL);
}

double MisalignmentReport::rate(Misalignment m) const {
  const long long n = total_frames();
  return n > 0 ? static_cast<double>(overall[m]) / static_cast<double>(n) : 0.0;
}

double frame_accuracy(std::span<const int> gt, std::span<const int> pred) {
  check_pair(gt, pred, "frame_accuracy");
  if (gt.empty()) throw ShapeError("frame_accuracy: empty sequences");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hits += gt[i] == pred[i];
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

MetricsReport f1_scores(std::span<const int> gt, std::span<const int> pred, int num_classes) {
  check_pair(gt, pred, "f1_scores");
  if (gt.empty()) throw ShapeError("f1_scores: empty sequences");
  const auto K = static_cast<std::size_t>(num_classes);
  std::vector<long long> tp(K, 0), fp(K, 0), fn(K, 0);
  MetricsReport r;
  r.support.assign(K, 0);
  long long hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i], p = pred[i];
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes) {
      throw ShapeError("f1_scores: class id outside 0.." + std::to_string(num_classes - 1) +
                       " at frame " + std::to_string(i));
    }
    ++r.support[static_cast<std::size_t>(g)];
    if (g == p) {
      ++tp[static_cast<std::size_t>(g)];
      ++hits;
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(g)];
    }
  }
  r.total_frames = static_cast<long long>(gt.size());
  r.accuracy = static_cast<double>(hits) / static_cast<double>(r.total_frames);
  r.per_class_f1.assign(K, 0.0);
  for (std::size_t c = 0; c < K; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    // 2PR/(P+R) == 2TP/(2TP+FP+FN); zero when P+R == 0.
    r.per_class_f1[c] = tp[c] > 0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    r.weighted_f1 += static_cast<double>(r.support[c]) / static_cast<double>(r.total_frames) * r.per_class_f1[c];
  }
  return r;
}

std::vector<Misalignment> misalignment_labels(std::span<const int> gt, std::span<const int> pred) {
  check_pair(gt, pred, "misalignment_decompose");
  const std::size_t n = gt.size();
  std::vector<Misalignment> out(n, Misalignment::correct);
  std::size_t seg_begin = 0;
  while (seg_begin < n) {
    std::size_t seg_end = seg_begin;
    while (seg_end < n && gt[seg_end] == gt[seg_begin]) ++seg_end;
    const bool has_left = seg_begin > 0;
    const bool has_right = seg_end < n;
    const int left_class = has_left ? gt[seg_begin - 1] : -1;
    const int right_class = has_right ? gt[seg_end] : -1;

    std::size_t i = seg_begin;
    while (i < seg_end) {
      if (pred[i] == gt[i]) {
        ++i;
        continue;
      }
      std::size_t e = i;
      while (e < seg_end && pred[e] != gt[e]) ++e;
      const bool at_left = i == seg_begin;
      const bool at_right = e == seg_end;
      for (std::size_t f = i; f < e; ++f) {
        Misalignment m;
        if (at_left && at_right) {
          m = Misalignment::substitution;
        } else if (!at_left && !at_right) {
          m = Misalignment::fragmentation;
        } else {
          const bool edge_has_neighbour = at_left ? has_left : has_right;
          const int neighbour = at_left ? left_class : right_class;
          m = edge_has_neighbour && pred[f] == neighbour ? Misalignment::overfill
                                                         : Misalignment::underfill;
        }
        out[f] = m;
      }
      i = e;
    }
    seg_begin = seg_end;
  }
  return out;
}

MisalignmentReport misalignment_decompose(std::span<const int> gt, std::span<const int> pred,
                                          int num_classes) {
  const auto labels = misalignment_labels(gt, pred);
  MisalignmentReport r;
  r.per_class.resize(static_cast<std::size_t>(std::max(num_classes, 0)));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++r.overall[labels[i]];
    const int g = gt[i];
    if (g >= 0 && g < num_classes) ++r.per_class[static_cast<std::size_t>(g)][labels[i]];
  }
  return r;
}

std::vector<int> harden(std::span<const float> probs, int num_classes) {
  const auto K = static_cast<std::size_t>(num_classes);
  if (K == 0 || probs.size() % K != 0) throw ShapeError("harden: probability map size not a multiple of K");
  std::vector<int> out(probs.size() / K);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = probs.subspan(r * K, K);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

nlohmann::json to_json(const MetricsReport& m, const std::vector<std::string>& class_names) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < m.per_class_f1.size(); ++c) {
    per_class[class_name(class_names, c)] = {{"f1", m.per_class_f1[c]}, {"support", m.support[c]}};
  }
  return {{"accuracy", m.accuracy},
          {"weighted_f1", m.weighted_f1},
          {"total_frames", m.total_frames},
          {"per_class", per_class}};
}

nlohmann::json to_json(const MisalignmentReport& r, const std::vector<std::string>& class_names) {
  nlohmann::json j;
  j["total_frames"] = r.total_frames();
  nlohmann::json counts, rates;
  for (std::size_t k = 0; k < kMisalignmentNames.size(); ++k) {
    const auto m = static_cast<Misalignment>(k);
    counts[kMisalignmentNames[k]] = r.overall[m];
    rates[kMisalignmentNames[k]] = r.rate(m);
  }
  j["counts"] = counts;
  j["rates"] = rates;
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    nlohmann::json pc;
    for (std::size_t k = 0; k < kMisalignmentNames.size(); ++k) {
      pc[kMisalignmentNames[k]] = r.per_class[c].counts[k];
    }
    per_class[class_name(class_names, c)] = pc;
  }
  j["per_class"] = per_class;
  return j;
}

std::string misalignment_csv(const MisalignmentReport& r, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "class,frames";
  for (const char* n : kMisalignmentNames) os << ',' << n;
  for (const char* n : kMisalignmentNames) os << ',' << n << "_rate";
  os << '\n';
  char buf[32];
  const auto row = [&](const std::string& name, const MisalignmentCounts& c) {
    const long long total = c.total();
    os << name << ',' << total;
    for (auto v : c.counts) os << ',' << v;
    for (auto v : c.counts) {
      std::snprintf(buf, sizeof buf, "%.10g", total > 0 ? static_cast<double>(v) / total : 0.0);
      os << ',' << buf;
    }
    os << '\n';
  };
  for (std::size_t c = 0; c < r.per_class.size(); ++c) row(class_name(class_names, c), r.per_class[c]);
  row("total", r.overall);
  return os.str();
}

std::string composition_csv(const MisalignmentReport& r) {
  std::ostringstream os;
  os << "category,frames,rate\n";
  char buf[32];
  for (std::size_t k = 1; k < kMisalignmentNames.size(); ++k) {
    const auto m = static_cast<Misalignment>(k);
    std::snprintf(buf, sizeof buf, "%.10g", r.rate(m));
    os << kMisalignmentNames[k] << ',' << r.overall[m] << ',' << buf << '\n';
  }
  return os.str();
}

}  // namespace dlab
