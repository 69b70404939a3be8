#include "dlab/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "dlab/config.hpp"
#include "dlab/evaluate.hpp"
#include "dlab/features.hpp"
#include "dlab/trainer.hpp"

namespace dlab {

namespace {

namespace fs = std::filesystem;

fs::path temp_sibling(const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  return tmp;
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <typename WriteTo>
void write_atomic_with(const fs::path& path, WriteTo&& write_to) {
  const fs::path tmp = temp_sibling(path);
  write_to(tmp);
  fs::rename(tmp, path);
}

std::string format_prob(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Corpus {
  std::vector<LabeledSequence> sequences;
  std::vector<std::string> class_names;
};

SynthSpec synth_spec(const RunConfig& cfg) {
  SynthSpec spec;
  const long long K = cfg.get_int("synth_classes");
  if (K < 1) throw ConfigError("synth_classes must be >= 1");
  const auto freqs = cfg.get_list("synth_frequencies");
  const auto amps = cfg.get_list("synth_amplitudes");
  if (freqs.empty() || amps.empty()) throw ConfigError("synth_frequencies and synth_amplitudes must be non-empty");
  for (long long k = 0; k < K; ++k) {
    SynthClass c;
    c.min_duration = cfg.get_int("synth_min_duration");
    c.max_duration = cfg.get_int("synth_max_duration");
    c.frequency_hz = kv_double({{"f", freqs[static_cast<std::size_t>(k) % freqs.size()]}}, "f");
    c.amplitude = kv_double({{"a", amps[static_cast<std::size_t>(k) % amps.size()]}}, "a");
    c.noise_sigma = cfg.get_double("synth_noise");
    spec.classes.push_back(c);
  }
  spec.channels = cfg.get_int("synth_channels");
  spec.total_frames = cfg.get_int("synth_total_frames");
  spec.sample_rate_hz = cfg.get_double("sample_rate_hz");
  spec.boundary_jitter = cfg.get_int("synth_boundary_jitter");
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("synth_seed"));
  return spec;
}

std::vector<std::string> synth_class_names(const RunConfig& cfg) {
  auto names = cfg.get_list("classes");
  const auto K = static_cast<std::size_t>(cfg.get_int("synth_classes"));
  if (names.empty()) {
    for (std::size_t k = 0; k < K; ++k) names.push_back("c" + std::to_string(k));
  } else if (names.size() != K) {
    throw ConfigError("classes lists " + std::to_string(names.size()) + " names but synth_classes is " +
                      std::to_string(K));
  }
  return names;
}

CsvSchema csv_schema(const RunConfig& cfg) {
  CsvSchema schema;
  schema.channel_columns = cfg.get_list("csv_channels");
  schema.label_column = cfg.get("csv_label_column");
  schema.classes = cfg.get_list("classes");
  schema.sample_rate_hz = cfg.get_double("sample_rate_hz");
  return schema;
}

Corpus load_corpus(const RunConfig& cfg) {
  const std::string& dataset = cfg.get("dataset");
  Corpus corpus;
  if (dataset == "synth") {
    corpus.sequences.push_back(synth_generate(synth_spec(cfg)));
    corpus.class_names = synth_class_names(cfg);
  } else if (dataset == "hapt") {
    if (cfg.get("data_path").empty()) throw ConfigError("dataset = hapt requires data_path (the HAPT root)");
    corpus.sequences = load_hapt(cfg.get("data_path"));
    corpus.class_names = hapt_class_names();
  } else if (dataset == "csv") {
    const fs::path path = cfg.get("data_path");
    if (path.empty()) throw ConfigError("dataset = csv requires data_path (a CSV file or directory)");
    const CsvSchema schema = csv_schema(cfg);
    if (schema.classes.empty()) throw ConfigError("dataset = csv requires classes (label names in id order)");
    if (fs::is_directory(path)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(path)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) throw IngestError(path.string() + ": no .csv files");
      for (const auto& f : files) corpus.sequences.push_back(load_csv(f, schema));
    } else {
      corpus.sequences.push_back(load_csv(path, schema));
    }
    corpus.class_names = schema.classes;
  } else {
    throw ConfigError("dataset must be hapt, csv or synth (got '" + dataset + "')");
  }
  const Index C = corpus.sequences.front().channels();
  for (const auto& s : corpus.sequences) {
    if (s.channels() != C) {
      throw IngestError("source '" + s.source_id + "' has " + std::to_string(s.channels()) + " channels, expected " +
                        std::to_string(C));
    }
  }
  return corpus;
}

SplitMode split_mode(const RunConfig& cfg) {
  const std::string& m = cfg.get("split_mode");
  if (m == "window") return SplitMode::window;
  if (m == "source") return SplitMode::source;
  throw ConfigError("split_mode must be window or source (got '" + m + "')");
}

struct Prepared {
  Corpus corpus;
  DatasetSplit split;
  NormStats norm;
  Index channels = 0;
  Index num_classes = 0;
};

/// Load, window, split, and z-score with training statistics (or `fixed`).
Prepared prepare(const RunConfig& cfg, Index required_multiple, const NormStats* fixed) {
  Prepared p;
  p.corpus = load_corpus(cfg);
  p.channels = p.corpus.sequences.front().channels();
  p.num_classes = static_cast<Index>(p.corpus.class_names.size());
  const Index length = cfg.get_int("window_length");
  Index stride = cfg.get_int("window_stride");
  if (stride == 0) stride = length;
  std::vector<Window> windows;
  for (const auto& seq : p.corpus.sequences) {
    auto w = make_windows(seq, length, stride, p.num_classes, required_multiple);
    std::move(w.begin(), w.end(), std::back_inserter(windows));
  }
  if (windows.empty()) {
    throw IngestError("no fully labelled window of " + std::to_string(length) + " frames in the data");
  }
  p.split = split_windows(std::move(windows), static_cast<std::uint64_t>(cfg.get_int("split_seed")), split_mode(cfg));
  p.norm = fixed ? *fixed : compute_norm_stats(p.split.train, p.corpus.sequences.front().channel_names);
  if (p.norm.mean.size() != static_cast<std::size_t>(p.channels)) {
    throw ShapeError("normalisation statistics cover " + std::to_string(p.norm.mean.size()) +
                     " channels, data has " + std::to_string(p.channels));
  }
  apply_norm(p.norm, p.split.train);
  apply_norm(p.norm, p.split.validation);
  apply_norm(p.norm, p.split.test);
  return p;
}

Index pool_multiple(const RunConfig& cfg) { return Index{1} << cfg.get_int("gen_depth"); }

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir = cfg.get("out_dir");
  fs::create_directories(dir);
  return dir;
}

nlohmann::json members(const std::vector<Window>& ws) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& w : ws) a.push_back({{"source", w.source_id}, {"start_frame", w.start_frame}});
  return a;
}

int cmd_prepare(const RunConfig& cfg) {
  const Prepared p = prepare(cfg, pool_multiple(cfg), nullptr);
  const fs::path dir = out_dir(cfg);
  write_atomic_with(dir / "norm_stats.txt", [&](const fs::path& f) { save_norm_stats(p.norm, f); });
  nlohmann::json j;
  j["seed"] = cfg.get_int("split_seed");
  j["mode"] = cfg.get("split_mode");
  j["window_length"] = cfg.get_int("window_length");
  j["classes"] = p.corpus.class_names;
  j["channels"] = p.norm.channel_names;
  j["counts"] = {{"train", p.split.train.size()},
                 {"validation", p.split.validation.size()},
                 {"test", p.split.test.size()}};
  j["train"] = members(p.split.train);
  j["validation"] = members(p.split.validation);
  j["test"] = members(p.split.test);
  write_atomic(dir / "split.json", j.dump(2) + "\n");
  std::cout << "windows: train " << p.split.train.size() << ", validation " << p.split.validation.size()
            << ", test " << p.split.test.size() << "\n";
  return 0;
}

LossConfig resolve_loss(const RunConfig& cfg, const std::vector<Window>& train, Index K) {
  KeyValues kv = cfg.values();
  if (kv_string(kv, "loss_alpha") != "inverse_frequency") return loss_config(kv);
  kv["loss_alpha"] = "uniform";
  LossConfig loss = loss_config(kv);
  std::vector<long long> counts(static_cast<std::size_t>(K), 0);
  for (const auto& w : train) {
    for (int l : w.labels) ++counts[static_cast<std::size_t>(l)];
  }
  loss.alpha = inverse_frequency_alpha(counts);
  return loss;
}

int cmd_train(const RunConfig& cfg) {
  const Prepared p = prepare(cfg, pool_multiple(cfg), nullptr);
  const KeyValues& kv = cfg.values();
  TrainInputs in;
  in.generator = generator_config(kv, p.channels, p.num_classes);
  in.discriminator = discriminator_config(kv, p.channels, p.num_classes);
  in.loss = resolve_loss(cfg, p.split.train, p.num_classes);
  in.train = train_config(kv);
  in.class_names = p.corpus.class_names;
  in.norm = p.norm;
  const fs::path dir = out_dir(cfg);
  const TrainResult r = train(p.split, in, [](const LogRecord& rec) {
    if (!std::isnan(rec.val_metric)) {
      std::cout << "step " << rec.step << " validation accuracy " << format_prob(rec.val_metric) << "\n";
    }
  });
  save_checkpoint(r.best, dir / "best.dlab");
  write_atomic(dir / "training_log.csv", training_log_csv(r.log));
  write_atomic_with(dir / "norm_stats.txt", [&](const fs::path& f) { save_norm_stats(p.norm, f); });
  std::cout << "best step " << r.best.step << " validation accuracy " << format_prob(r.best.best_metric) << "\n";
  return 0;
}

const std::vector<Window>& pick_split(const DatasetSplit& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "validation") return s.validation;
  if (name == "test") return s.test;
  throw ConfigError("--split must be train, validation or test (got '" + name + "')");
}

void check_compatible(const Checkpoint& ck, Index channels, Index num_classes, Index window_length) {
  const auto& g = ck.generator;
  if (g.in_channels != channels || g.num_classes != num_classes || g.window_length != window_length) {
    throw ShapeError("checkpoint expects " + std::to_string(g.window_length) + " frames x " +
                     std::to_string(g.in_channels) + " channels, " + std::to_string(g.num_classes) +
                     " classes; data gives " + std::to_string(window_length) + " x " + std::to_string(channels) +
                     ", " + std::to_string(num_classes));
  }
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint, const std::string& split_name) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Prepared p = prepare(cfg, Index{1} << ck.generator.depth, ck.norm ? &*ck.norm : nullptr);
  check_compatible(ck, p.channels, p.num_classes, cfg.get_int("window_length"));
  const auto& windows = pick_split(p.split, split_name);
  if (windows.empty()) throw IngestError("split '" + split_name + "' holds no windows");
  const ModelEvaluation ev = evaluate_model(ck, windows);
  const auto& names = p.corpus.class_names;
  nlohmann::json j;
  j["split"] = split_name;
  j["windows"] = windows.size();
  j["checkpoint_step"] = ck.step;
  j["metrics"] = to_json(ev.metrics, names);
  j["misalignment"] = to_json(ev.misalignment, names);
  const fs::path dir = out_dir(cfg);
  write_atomic(dir / "metrics.json", j.dump(2) + "\n");
  write_atomic(dir / "misalignment.csv", misalignment_csv(ev.misalignment, names));
  write_atomic(dir / "composition.csv", composition_csv(ev.misalignment));
  std::cout << split_name << ": accuracy " << format_prob(ev.metrics.accuracy) << ", weighted F1 "
            << format_prob(ev.metrics.weighted_f1) << "\n";
  return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint, const std::string& input, std::string output) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  CsvSchema schema = csv_schema(cfg);
  schema.classes = ck.class_names;
  if (ck.norm && schema.channel_columns.empty()) schema.channel_columns = ck.norm->channel_names;
  LabeledSequence seq = load_csv(input, schema);
  if (ck.norm) apply_norm(*ck.norm, seq.frames);
  const Index L = ck.generator.window_length;
  const Index C = seq.channels();
  const Index K = ck.generator.num_classes;
  const Index N = seq.length();
  if (C != ck.generator.in_channels) {
    throw ShapeError(input + " has " + std::to_string(C) + " channels, checkpoint expects " +
                     std::to_string(ck.generator.in_channels));
  }
  if (N < L) throw ShapeError(input + " has " + std::to_string(N) + " frames, fewer than one window of " + std::to_string(L));

  std::vector<Index> starts;
  for (Index s = 0; s + L <= N; s += L) starts.push_back(s);
  if (starts.back() + L < N) starts.push_back(N - L);

  const Generator<float> g = generator_from(ck);
  std::vector<float> probs(static_cast<std::size_t>(N * K));
  Index covered = 0;
  for (Index s : starts) {
    NoGradGuard no_grad;
    Array<float> x(L * C);
    Eigen::Map<FrameMatrix>(x.data(), L, C) = seq.frames.middleRows(s, L);
    const Tensor<float> out = g.forward(Tensor<float>::from_values({1, L, C}, std::move(x)), {Mode::eval, false, nullptr});
    const Index from = std::max(covered, s);
    std::copy(out.data() + (from - s) * K, out.data() + L * K, probs.begin() + from * K);
    covered = s + L;
  }
  const std::vector<int> predicted = harden(probs, static_cast<int>(K));
  const auto name = [&](int c) { return c < 0 ? std::string() : ck.class_names.at(static_cast<std::size_t>(c)); };

  std::ostringstream os;
  os << "frame_index,true_class,predicted_class";
  for (const auto& n : ck.class_names) os << ",p_" << n;
  os << '\n';
  for (Index t = 0; t < N; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    os << t << ',' << name(seq.labels[ti]) << ',' << name(predicted[ti]);
    for (Index k = 0; k < K; ++k) os << ',' << format_prob(probs[static_cast<std::size_t>(t * K + k)]);
    os << '\n';
  }
  if (output.empty()) output = (out_dir(cfg) / "predictions.csv").string();
  write_atomic(output, os.str());
  std::cout << "wrote " << N << " frame predictions to " << output << "\n";
  return 0;
}

std::vector<std::string> read_label_column(const fs::path& file, const std::string& column) {
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestError(file.string() + ": empty file (header row required)");
  const auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      cells.push_back(cell);
    }
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  const auto header = split(line);
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) throw IngestError(file.string() + ": no column named '" + column + "'");
  const auto col = static_cast<std::size_t>(it - header.begin());
  std::vector<std::string> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (col >= cells.size() || cells[col].empty()) {
      throw IngestError(file.string() + ":" + std::to_string(lineno) + ": missing label in column '" + column + "'");
    }
    labels.push_back(cells[col]);
  }
  return labels;
}

int cmd_misalign(const RunConfig& cfg, const std::string& gt_file, const std::string& pred_file,
                 const std::string& gt_column, const std::string& pred_column) {
  const auto gt_names = read_label_column(gt_file, gt_column.empty() ? cfg.get("csv_label_column") : gt_column);
  const auto pred_names = read_label_column(pred_file, pred_column.empty() ? cfg.get("csv_label_column") : pred_column);
  if (gt_names.size() != pred_names.size()) {
    throw ShapeError("ground truth has " + std::to_string(gt_names.size()) + " frames, prediction has " +
                     std::to_string(pred_names.size()));
  }
  if (gt_names.empty()) throw IngestError(gt_file + ": no data rows");
  std::vector<std::string> classes = cfg.get_list("classes");
  if (classes.empty()) {
    std::set<std::string> seen(gt_names.begin(), gt_names.end());
    seen.insert(pred_names.begin(), pred_names.end());
    classes.assign(seen.begin(), seen.end());
  }
  const auto ids = [&](const std::vector<std::string>& names, const std::string& file) {
    std::vector<int> out;
    for (const auto& n : names) {
      const auto it = std::find(classes.begin(), classes.end(), n);
      if (it == classes.end()) throw IngestError(file + ": label '" + n + "' is not in classes");
      out.push_back(static_cast<int>(it - classes.begin()));
    }
    return out;
  };
  const auto gt = ids(gt_names, gt_file);
  const auto pred = ids(pred_names, pred_file);
  const int K = static_cast<int>(classes.size());
  const MetricsReport m = f1_scores(gt, pred, K);
  const MisalignmentReport r = misalignment_decompose(gt, pred, K);
  nlohmann::json j;
  j["metrics"] = to_json(m, classes);
  j["misalignment"] = to_json(r, classes);
  const fs::path dir = out_dir(cfg);
  write_atomic(dir / "misalignment.json", j.dump(2) + "\n");
  write_atomic(dir / "misalignment.csv", misalignment_csv(r, classes));
  write_atomic(dir / "composition.csv", composition_csv(r));
  std::cout << "misclassified " << r.overall.errors() << " of " << r.total_frames() << " frames\n";
  return 0;
}

int cmd_features(const RunConfig& cfg) {
  const Corpus corpus = load_corpus(cfg);
  const Index L = cfg.get_int("window_length");
  const auto K = static_cast<Index>(corpus.class_names.size());
  std::vector<FeatureVector> rows;
  for (const auto& seq : corpus.sequences) {
    auto r = feature_windows(seq, L, K);
    std::move(r.begin(), r.end(), std::back_inserter(rows));
  }
  write_atomic(out_dir(cfg) / "features.csv", features_csv(rows, corpus.sequences.front().channel_names));
  std::cout << "wrote " << rows.size() << " feature rows\n";
  return 0;
}

int cmd_synth(const RunConfig& cfg, std::string output) {
  const LabeledSequence seq = synth_generate(synth_spec(cfg));
  if (output.empty()) output = (out_dir(cfg) / "synth.csv").string();
  write_atomic_with(output, [&](const fs::path& f) { write_csv(seq, synth_class_names(cfg), f); });
  std::cout << "wrote " << seq.length() << " frames to " << output << "\n";
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Dense per-frame activity labeling: U-Net generator with a conditional GAN."};
  app.name("dlab");
  app.require_subcommand(1);
  app.fallthrough();
  app.footer("Settings resolve as defaults, then --config, then --key flags (flags win).");

  std::string config_file;
  app.add_option("--config", config_file, "configuration file of `key = value` lines");

  const auto& keys = RunConfig::keys();
  std::vector<std::string> flag_values(keys.size());
  std::vector<CLI::Option*> flag_options;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& k = keys[i];
    std::string names = "--" + k.name;
    std::string dashed = k.name;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    if (dashed != k.name) names += ",--" + dashed;
    const std::string shown = k.default_value.empty() ? "empty" : k.default_value;
    flag_options.push_back(app.add_option(names, flag_values[i], k.help + " (default: " + shown + ")")
                               ->group("Settings"));
  }

  auto* prepare_cmd = app.add_subcommand("prepare-data", "window, split and normalise; writes norm_stats.txt, split.json");
  auto* train_cmd = app.add_subcommand("train", "train; writes best.dlab, training_log.csv, norm_stats.txt");
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint; writes metrics.json, misalignment.csv, composition.csv");
  auto* predict_cmd = app.add_subcommand("predict", "dense predictions for one CSV recording");
  auto* misalign_cmd = app.add_subcommand("misalign", "misalignment decomposition of two label files");
  auto* features_cmd = app.add_subcommand("features", "window features; writes features.csv");
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic labelled recording as CSV");

  std::string checkpoint, split_name = "test", input, output, gt_file, pred_file, gt_column, pred_column;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--split", split_name, "train | validation | test")->capture_default_str();
  predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict_cmd->add_option("--input", input, "CSV recording (label column may be empty)")->required();
  predict_cmd->add_option("--output", output, "output CSV (default: <out_dir>/predictions.csv)");
  misalign_cmd->add_option("--gt", gt_file, "ground-truth label CSV")->required();
  misalign_cmd->add_option("--pred", pred_file, "predicted label CSV")->required();
  misalign_cmd->add_option("--gt-column", gt_column, "label column of --gt (default: csv_label_column)");
  misalign_cmd->add_option("--pred-column", pred_column, "label column of --pred (default: csv_label_column)");
  synth_cmd->add_option("--output", output, "output CSV (default: <out_dir>/synth.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "dlab: error: " << one_line(e.what()) << "\n";
    return e.get_exit_code();
  }

  try {
    RunConfig cfg;
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (flag_options[i]->count() > 0) cfg.set(keys[i].name, flag_values[i]);
    }
    write_atomic(out_dir(cfg) / "config.effective.cfg", cfg.to_text());

    if (prepare_cmd->parsed()) return cmd_prepare(cfg);
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) return cmd_evaluate(cfg, checkpoint, split_name);
    if (predict_cmd->parsed()) return cmd_predict(cfg, checkpoint, input, output);
    if (misalign_cmd->parsed()) return cmd_misalign(cfg, gt_file, pred_file, gt_column, pred_column);
    if (features_cmd->parsed()) return cmd_features(cfg);
    if (synth_cmd->parsed()) return cmd_synth(cfg, output);
  } catch (const std::exception& e) {
    std::cerr << "dlab: error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 1;
}

}  // namespace dlab
