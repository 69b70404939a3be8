#include "dlab/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

#include "dlab/error.hpp"

namespace dlab {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_double(std::string_view s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size() && std::isfinite(out);
}

std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string location(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

/// Whitespace-separated float rows with a fixed column count.
FrameMatrix read_float_rows(const fs::path& file, Index columns) {
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open " + file.string());
  std::vector<float> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto toks = split_ws(line);
    if (static_cast<Index>(toks.size()) != columns) {
      throw IngestError(location(file, lineno) + ": expected " + std::to_string(columns) +
                        " values, got " + std::to_string(toks.size()));
    }
    for (const auto& t : toks) {
      double v = 0;
      if (!parse_double(t, v)) throw IngestError(location(file, lineno) + ": bad number '" + t + "'");
      values.push_back(static_cast<float>(v));
    }
  }
  const Index rows = static_cast<Index>(values.size()) / columns;
  FrameMatrix m(rows, columns);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

std::size_t floor_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace

const std::vector<std::string>& hapt_class_names() {
  static const std::vector<std::string> names = {
      "WALKING",      "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS", "SITTING",
      "STANDING",     "LAYING",           "STAND_TO_SIT",       "SIT_TO_STAND",
      "SIT_TO_LIE",   "LIE_TO_SIT",       "STAND_TO_LIE",       "LIE_TO_STAND"};
  return names;
}

std::vector<LabeledSequence> load_hapt(const fs::path& root) {
  fs::path raw = root / "RawData";
  if (!fs::is_directory(raw)) raw = root;
  fs::path labels_file = raw / "labels.txt";
  if (!fs::exists(labels_file)) labels_file = root / "labels.txt";
  if (!fs::exists(labels_file)) throw IngestError("labels.txt not found under " + root.string());

  static const std::regex acc_name(R"(acc_exp(\d+)_user(\d+)\.txt)");
  std::map<int, LabeledSequence> by_experiment;
  for (const auto& entry : fs::directory_iterator(raw)) {
    const std::string name = entry.path().filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, acc_name)) continue;
    const int exp = std::stoi(m[1].str());
    const fs::path gyro = raw / ("gyro_exp" + m[1].str() + "_user" + m[2].str() + ".txt");
    if (!fs::exists(gyro)) throw IngestError("missing paired gyro file " + gyro.string());
    const FrameMatrix acc = read_float_rows(entry.path(), 3);
    const FrameMatrix gyr = read_float_rows(gyro, 3);
    if (acc.rows() != gyr.rows()) {
      throw IngestError(gyro.string() + ": " + std::to_string(gyr.rows()) + " frames, " +
                        entry.path().string() + " has " + std::to_string(acc.rows()));
    }
    LabeledSequence seq;
    seq.frames.resize(acc.rows(), 6);
    seq.frames.leftCols(3) = acc;
    seq.frames.rightCols(3) = gyr;
    seq.labels.assign(static_cast<std::size_t>(acc.rows()), kUnlabeled);
    seq.source_id = "exp" + m[1].str() + "_user" + m[2].str();
    seq.sample_rate_hz = 50.0;
    seq.channel_names = {"acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"};
    by_experiment.emplace(exp, std::move(seq));
  }

  std::ifstream in(labels_file);
  if (!in) throw IngestError("cannot open " + labels_file.string());
  std::string line;
  std::size_t lineno = 0;
  const int num_classes = static_cast<int>(hapt_class_names().size());
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto toks = split_ws(line);
    long long f[5];
    bool ok = toks.size() == 5;
    for (std::size_t i = 0; ok && i < 5; ++i) {
      const auto [p, ec] = std::from_chars(toks[i].data(), toks[i].data() + toks[i].size(), f[i]);
      ok = ec == std::errc() && p == toks[i].data() + toks[i].size();
    }
    if (!ok) throw IngestError(location(labels_file, lineno) + ": expected 5 integers");
    const auto it = by_experiment.find(static_cast<int>(f[0]));
    if (it == by_experiment.end()) {
      throw IngestError(location(labels_file, lineno) + ": no raw data for experiment " +
                        std::to_string(f[0]));
    }
    if (f[2] < 1 || f[2] > num_classes) {
      throw IngestError(location(labels_file, lineno) + ": activity id " + std::to_string(f[2]) +
                        " out of range");
    }
    auto& seq = it->second;
    if (f[3] < 0 || f[4] < f[3] || f[4] >= seq.length()) {
      throw IngestError(location(labels_file, lineno) + ": interval " + std::to_string(f[3]) + ".." +
                        std::to_string(f[4]) + " outside " + std::to_string(seq.length()) + " frames");
    }
    std::fill(seq.labels.begin() + f[3], seq.labels.begin() + f[4] + 1, static_cast<int>(f[2] - 1));
  }

  std::vector<LabeledSequence> out;
  for (auto& [exp, seq] : by_experiment) out.push_back(std::move(seq));
  if (out.empty()) throw IngestError("no acc_expNN_userUU.txt files under " + raw.string());
  return out;
}

LabeledSequence load_csv(const fs::path& file, const CsvSchema& schema) {
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw IngestError(file.string() + ": empty file (header row required)");
  }
  const auto header = split_on(line, ',');
  const auto column_of = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IngestError(file.string() + ": no column named '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t label_col = column_of(schema.label_column);
  std::vector<std::size_t> channel_cols;
  std::vector<std::string> channel_names;
  if (schema.channel_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i != label_col) {
        channel_cols.push_back(i);
        channel_names.push_back(header[i]);
      }
    }
  } else {
    for (const auto& c : schema.channel_columns) {
      channel_cols.push_back(column_of(c));
      channel_names.push_back(c);
    }
  }
  if (channel_cols.empty()) throw IngestError(file.string() + ": no channel columns");

  std::vector<float> values;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_on(line, ',');
    if (cells.size() != header.size()) {
      throw IngestError(location(file, lineno) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(cells.size()));
    }
    for (auto c : channel_cols) {
      double v = 0;
      if (!parse_double(cells[c], v)) {
        throw IngestError(location(file, lineno) + ": non-numeric value '" + cells[c] + "' in column '" +
                          header[c] + "'");
      }
      values.push_back(static_cast<float>(v));
    }
    const std::string& lab = cells[label_col];
    if (lab.empty()) {
      labels.push_back(kUnlabeled);
      continue;
    }
    const auto it = std::find(schema.classes.begin(), schema.classes.end(), lab);
    if (it == schema.classes.end()) {
      throw IngestError(location(file, lineno) + ": unknown label '" + lab + "'");
    }
    labels.push_back(static_cast<int>(it - schema.classes.begin()));
  }
  if (labels.empty()) throw IngestError(file.string() + ": no data rows");

  LabeledSequence seq;
  const auto C = static_cast<Index>(channel_cols.size());
  seq.frames.resize(static_cast<Index>(labels.size()), C);
  std::copy(values.begin(), values.end(), seq.frames.data());
  seq.labels = std::move(labels);
  seq.source_id = file.stem().string();
  seq.sample_rate_hz = schema.sample_rate_hz;
  seq.channel_names = std::move(channel_names);
  return seq;
}

void write_csv(const LabeledSequence& seq, const std::vector<std::string>& classes, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw IngestError("cannot write " + file.string());
  for (Index c = 0; c < seq.channels(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    out << (ci < seq.channel_names.size() ? seq.channel_names[ci] : "ch" + std::to_string(c)) << ',';
  }
  out << "label\n";
  char buf[32];
  for (Index t = 0; t < seq.length(); ++t) {
    for (Index c = 0; c < seq.channels(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(seq.frames(t, c)));
      out << buf << ',';
    }
    const int l = seq.labels[static_cast<std::size_t>(t)];
    if (l >= 0) {
      out << (static_cast<std::size_t>(l) < classes.size() ? classes[static_cast<std::size_t>(l)]
                                                           : std::to_string(l));
    }
    out << '\n';
  }
  if (!out) throw IngestError("write failed for " + file.string());
}

namespace {

NormStats stats_from_accumulators(const std::vector<double>& s, const std::vector<double>& s2,
                                  double n, std::vector<std::string> names) {
  NormStats st;
  st.channel_names = std::move(names);
  for (std::size_t c = 0; c < s.size(); ++c) {
    const double m = n > 0 ? s[c] / n : 0.0;
    const double var = n > 0 ? std::max(0.0, s2[c] / n - m * m) : 0.0;
    st.mean.push_back(m);
    st.stddev.push_back(std::sqrt(var));
    if (st.channel_names.size() <= c) st.channel_names.push_back("ch" + std::to_string(c));
  }
  return st;
}

}  // namespace

NormStats compute_norm_stats(const std::vector<Window>& windows, const std::vector<std::string>& names) {
  if (windows.empty()) throw ConfigError("normalization: no windows to compute statistics from");
  const auto C = static_cast<std::size_t>(windows.front().x.cols());
  // Two-pass for accuracy: mean first, then centred second moment.
  std::vector<double> sum(C, 0.0);
  double n = 0;
  for (const auto& w : windows) {
    for (Index t = 0; t < w.x.rows(); ++t) {
      for (std::size_t c = 0; c < C; ++c) sum[c] += w.x(t, static_cast<Index>(c));
    }
    n += static_cast<double>(w.x.rows());
  }
  std::vector<double> mean(C), sq(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) mean[c] = sum[c] / n;
  for (const auto& w : windows) {
    for (Index t = 0; t < w.x.rows(); ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const double d = w.x(t, static_cast<Index>(c)) - mean[c];
        sq[c] += d * d;
      }
    }
  }
  NormStats st;
  st.channel_names = names;
  for (std::size_t c = 0; c < C; ++c) {
    st.mean.push_back(mean[c]);
    st.stddev.push_back(std::sqrt(sq[c] / n));
    if (st.channel_names.size() <= c) st.channel_names.push_back("ch" + std::to_string(c));
  }
  return st;
}

NormStats compute_norm_stats(const std::vector<LabeledSequence>& seqs) {
  if (seqs.empty()) throw ConfigError("normalization: no sequences");
  const auto C = static_cast<std::size_t>(seqs.front().channels());
  std::vector<double> s(C, 0.0), s2(C, 0.0);
  double n = 0;
  for (const auto& q : seqs) {
    for (Index t = 0; t < q.length(); ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const double v = q.frames(t, static_cast<Index>(c));
        s[c] += v;
        s2[c] += v * v;
      }
    }
    n += static_cast<double>(q.length());
  }
  return stats_from_accumulators(s, s2, n, seqs.front().channel_names);
}

void apply_norm(const NormStats& stats, FrameMatrix& frames) {
  if (static_cast<std::size_t>(frames.cols()) != stats.mean.size()) {
    throw ShapeError("normalization: " + std::to_string(frames.cols()) + " channels, stats have " +
                     std::to_string(stats.mean.size()));
  }
  for (Index c = 0; c < frames.cols(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const double sd = std::max(stats.stddev[ci], 1e-8);
    for (Index t = 0; t < frames.rows(); ++t) {
      frames(t, c) = static_cast<float>((frames(t, c) - stats.mean[ci]) / sd);
    }
  }
}

void apply_norm(const NormStats& stats, std::vector<Window>& windows) {
  for (auto& w : windows) apply_norm(stats, w.x);
}

void save_norm_stats(const NormStats& stats, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw IngestError("cannot write " + file.string());
  out << "dlab-norm-stats v1\n";
  char buf[96];
  for (std::size_t c = 0; c < stats.mean.size(); ++c) {
    std::snprintf(buf, sizeof buf, " %.17g %.17g\n", stats.mean[c], stats.stddev[c]);
    out << stats.channel_names[c] << buf;
  }
  if (!out) throw IngestError("write failed for " + file.string());
}

NormStats load_norm_stats(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "dlab-norm-stats v1") {
    throw IngestError(file.string() + ": not a normalization stats file (expected 'dlab-norm-stats v1')");
  }
  NormStats st;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto toks = split_ws(line);
    double m = 0, s = 0;
    if (toks.size() != 3 || !parse_double(toks[1], m) || !parse_double(toks[2], s)) {
      throw IngestError(location(file, lineno) + ": expected 'name mean std'");
    }
    st.channel_names.push_back(toks[0]);
    st.mean.push_back(m);
    st.stddev.push_back(s);
  }
  return st;
}

std::vector<Window> make_windows(const LabeledSequence& seq, Index length, Index stride,
                                 Index num_classes, Index required_multiple) {
  if (length < 1) throw ConfigError("window length must be >= 1");
  if (required_multiple > 1 && length % required_multiple != 0) {
    throw ConfigError("window length " + std::to_string(length) + " is not a multiple of " +
                      std::to_string(required_multiple) + " required by the model's pooling depth");
  }
  if (stride <= 0) stride = length;
  if (static_cast<std::size_t>(seq.length()) != seq.labels.size()) {
    throw ShapeError("sequence " + seq.source_id + ": frame and label counts differ");
  }
  std::vector<Window> out;
  const Index T = seq.length();
  Index t = 0;
  while (t < T) {
    if (seq.labels[static_cast<std::size_t>(t)] == kUnlabeled) {
      ++t;
      continue;
    }
    Index end = t;
    while (end < T && seq.labels[static_cast<std::size_t>(end)] != kUnlabeled) ++end;
    for (Index start = t; start + length <= end; start += stride) {
      Window w;
      w.x = seq.frames.middleRows(start, length);
      w.y = FrameMatrix::Zero(length, num_classes);
      w.labels.assign(seq.labels.begin() + start, seq.labels.begin() + start + length);
      for (Index i = 0; i < length; ++i) {
        const int l = w.labels[static_cast<std::size_t>(i)];
        if (l < 0 || l >= num_classes) {
          throw ConfigError("sequence " + seq.source_id + ": class id " + std::to_string(l) +
                            " outside 0.." + std::to_string(num_classes - 1));
        }
        w.y(i, l) = 1.0f;
      }
      w.source_id = seq.source_id;
      w.start_frame = start;
      out.push_back(std::move(w));
    }
    t = end;
  }
  return out;
}

DatasetSplit split_windows(std::vector<Window> windows, std::uint64_t seed, SplitMode mode) {
  const std::size_t N = windows.size();
  if (N < 3) throw ConfigError("split: need at least 3 windows, got " + std::to_string(N));
  DatasetSplit split;
  split.seed = seed;
  Rng rng(seed);
  if (mode == SplitMode::window) {
    const auto order = permutation(N, rng);
    const std::size_t n_train = floor_count(split.train_fraction, N);
    const std::size_t n_val = floor_count(split.validation_fraction, N);
    for (std::size_t i = 0; i < N; ++i) {
      Window& w = windows[order[i]];
      if (i < n_train) {
        split.train.push_back(std::move(w));
      } else if (i < n_train + n_val) {
        split.validation.push_back(std::move(w));
      } else {
        split.test.push_back(std::move(w));
      }
    }
    return split;
  }
  std::vector<std::string> sources;
  for (const auto& w : windows) {
    if (std::find(sources.begin(), sources.end(), w.source_id) == sources.end()) {
      sources.push_back(w.source_id);
    }
  }
  if (sources.size() < 3) throw ConfigError("split: source mode needs at least 3 sources");
  const auto order = permutation(sources.size(), rng);
  const std::size_t n_train = std::max<std::size_t>(1, floor_count(split.train_fraction, sources.size()));
  const std::size_t n_val = std::max<std::size_t>(1, floor_count(split.validation_fraction, sources.size()));
  std::map<std::string, int> bucket;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    bucket[sources[order[i]]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  }
  for (auto& w : windows) {
    const int b = bucket[w.source_id];
    (b == 0 ? split.train : b == 1 ? split.validation : split.test).push_back(std::move(w));
  }
  return split;
}

LabeledSequence synth_generate(const SynthSpec& spec) {
  const auto K = static_cast<Index>(spec.classes.size());
  if (K < 1) throw ConfigError("synth: need at least one class");
  for (const auto& c : spec.classes) {
    if (c.min_duration < 1 || c.max_duration < c.min_duration) {
      throw ConfigError("synth: class durations must satisfy 1 <= min <= max");
    }
  }
  if (spec.channels < 1 || spec.total_frames < 1) throw ConfigError("synth: need channels and frames");
  Rng rng(spec.seed);

  struct Segment {
    Index start, length;
    int cls;
  };
  std::vector<Segment> segments;
  Index t = 0;
  int prev = -1;
  while (t < spec.total_frames) {
    int cls = 0;
    if (K == 1) {
      cls = 0;
    } else if (prev < 0) {
      cls = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(K)));
    } else {
      cls = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(K - 1)));
      if (cls >= prev) ++cls;
    }
    const auto& c = spec.classes[static_cast<std::size_t>(cls)];
    const Index len = c.min_duration + static_cast<Index>(uniform_index(
                                           rng, static_cast<std::uint64_t>(c.max_duration - c.min_duration + 1)));
    segments.push_back({t, len, cls});
    t += len;
    prev = cls;
  }

  LabeledSequence seq;
  const Index T = spec.total_frames;
  seq.frames.resize(T, spec.channels);
  seq.labels.resize(static_cast<std::size_t>(T));
  seq.sample_rate_hz = spec.sample_rate_hz;
  seq.source_id = "synth_" + std::to_string(spec.seed);
  for (Index c = 0; c < spec.channels; ++c) seq.channel_names.push_back("ch" + std::to_string(c));

  // Waveform boundaries optionally displaced from the label boundaries.
  std::vector<Index> wave_start(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    Index s = segments[i].start;
    if (i > 0 && spec.boundary_jitter > 0) {
      const auto span = static_cast<std::uint64_t>(2 * spec.boundary_jitter + 1);
      s += static_cast<Index>(uniform_index(rng, span)) - spec.boundary_jitter;
      s = std::clamp(s, wave_start[i - 1] + 1, segments[i].start + segments[i].length - 1);
    }
    wave_start[i] = s;
  }
  std::size_t seg = 0, wave = 0;
  const double two_pi = 2.0 * std::numbers::pi;
  for (Index f = 0; f < T; ++f) {
    while (seg + 1 < segments.size() && f >= segments[seg + 1].start) ++seg;
    while (wave + 1 < segments.size() && f >= wave_start[wave + 1]) ++wave;
    seq.labels[static_cast<std::size_t>(f)] = segments[seg].cls;
    const auto& c = spec.classes[static_cast<std::size_t>(segments[wave].cls)];
    const double time = static_cast<double>(f) / spec.sample_rate_hz;
    for (Index ch = 0; ch < spec.channels; ++ch) {
      const double phase = two_pi * static_cast<double>(ch) / static_cast<double>(spec.channels);
      const double v = c.amplitude * std::sin(two_pi * c.frequency_hz * time + phase) +
                       (c.noise_sigma > 0 ? c.noise_sigma * normal01(rng) : 0.0);
      seq.frames(f, ch) = static_cast<float>(v);
    }
  }
  return seq;
}

}  // namespace dlab
