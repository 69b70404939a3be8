// Acceptance run: one PASS/FAIL/SKIP line per criterion.
//
//   dlab_acceptance [--only N[,N...]] [--suite-dir DIR]
//
// Criteria 1, 2, 3, 7 and 8 are carried by the unit suites and are run here
// as subprocesses restricted to the relevant test cases. Criteria 4, 5 and 6
// train models directly. Exit status: 0 when nothing failed, 1 on any
// failure, 77 when every selected criterion was skipped.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dlab/dataio.hpp"
#include "dlab/evaluate.hpp"
#include "dlab/trainer.hpp"

using namespace dlab;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome judge(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

fs::path g_suite_dir;

/// Runs a doctest binary on the named test cases; passes when it exits 0.
Outcome run_suite(const std::string& binary, const std::string& cases) {
  const fs::path exe = g_suite_dir / binary;
  if (!fs::exists(exe)) return {Verdict::fail, exe.string() + " not built"};
  const std::string cmd = "\"" + exe.string() + "\" --test-case=\"" + cases + "\" --no-version 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {Verdict::fail, "cannot start " + binary};
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  std::string summary;
  std::istringstream lines(out);
  for (std::string line; std::getline(lines, line);) {
    const auto at = line.find("assertions:");
    if (at == std::string::npos) continue;
    summary = line.substr(at);
    while (!summary.empty() && (summary.back() == ' ' || summary.back() == '|')) summary.pop_back();
  }
  return judge(status == 0, binary + " [" + cases + "] " + summary);
}

double fragmentation_rate(const Checkpoint& ck, const std::vector<Window>& windows) {
  const auto ev = evaluate_model(ck, windows);
  return ev.misalignment.rate(Misalignment::fragmentation);
}

Outcome criterion4() {
  SynthSpec spec;
  spec.classes = {{30, 90, 1.0, 1.0, 0.3}, {30, 90, 3.0, 1.5, 0.3}, {30, 90, 0.5, 0.7, 0.3}};
  spec.channels = 3;
  spec.total_frames = 8 * 128;
  spec.seed = 4;
  auto windows = make_windows(synth_generate(spec), 128, 128, 3, 8);
  if (windows.size() != 8) return {Verdict::fail, "expected 8 windows, got " + std::to_string(windows.size())};
  apply_norm(compute_norm_stats(windows), windows);
  DatasetSplit split;
  split.train = windows;
  split.validation = windows;

  TrainInputs in;
  in.generator.window_length = 128;
  in.generator.in_channels = 3;
  in.generator.num_classes = 3;
  in.generator.depth = 3;
  in.generator.base_filters = 8;
  in.discriminator.window_length = 128;
  in.discriminator.in_channels = 3;
  in.discriminator.num_classes = 3;
  in.train.total_steps = 2000;
  in.train.batch_size = 8;
  in.train.eval_every = 100;
  in.train.adversarial = false;
  in.train.seed = 4;

  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train(split, in);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::int64_t reached = -1;
  for (const auto& rec : r.log) {
    if (!std::isnan(rec.val_metric) && rec.val_metric >= 0.99 && reached < 0) reached = rec.step;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "best train frame accuracy %.4f (first >= 0.99 at step %lld), %.1f s", r.best.best_metric,
                static_cast<long long>(reached), secs);
  return judge(r.best.best_metric >= 0.99 && secs < 300.0, buf);
}

Outcome criterion5() {
  SynthSpec spec;
  spec.classes = {{40, 160, 1.0, 1.0, 0.6}, {40, 160, 2.5, 1.4, 0.6}, {40, 160, 0.5, 0.8, 0.6}};
  spec.channels = 3;
  spec.total_frames = 120 * 64;
  spec.boundary_jitter = 12;
  spec.seed = 5;
  auto split = split_windows(make_windows(synth_generate(spec), 64, 64, 3, 8), 42);
  const auto stats = compute_norm_stats(split.train);
  apply_norm(stats, split.train);
  apply_norm(stats, split.validation);
  apply_norm(stats, split.test);

  TrainInputs in;
  in.generator.window_length = 64;
  in.generator.in_channels = 3;
  in.generator.num_classes = 3;
  in.generator.depth = 3;
  in.generator.base_filters = 8;
  in.discriminator.window_length = 64;
  in.discriminator.in_channels = 3;
  in.discriminator.num_classes = 3;
  in.discriminator.filters = {8, 16, 16};
  in.train.total_steps = 5000;
  in.train.batch_size = 16;
  in.train.eval_every = 500;

  double frag[2] = {0, 0}, acc[2] = {0, 0};
  for (std::uint64_t seed : {1, 2, 3}) {
    for (int adversarial = 0; adversarial < 2; ++adversarial) {
      in.train.seed = seed;
      in.train.adversarial = adversarial == 1;
      const auto r = train(split, in);
      frag[adversarial] += fragmentation_rate(r.best, split.test) / 3.0;
      acc[adversarial] += evaluate_model(r.best, split.test).metrics.accuracy / 3.0;
    }
  }
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "mean test fragmentation cGAN %.5f vs focal-only %.5f (accuracy %.4f vs %.4f), 3 seeds x 5000 steps",
                frag[1], frag[0], acc[1], acc[0]);
  return judge(frag[1] <= frag[0], buf);
}

Outcome criterion6() {
  std::vector<Window> dummy(1000);
  for (std::size_t i = 0; i < dummy.size(); ++i) dummy[i].start_frame = static_cast<Index>(i);
  const auto s = split_windows(dummy, 42);
  const bool counts_ok = s.train.size() == 435 && s.validation.size() == 217 && s.test.size() == 348;
  const std::string counts = "N=1000 -> " + std::to_string(s.train.size()) + "/" + std::to_string(s.validation.size()) +
                             "/" + std::to_string(s.test.size());
  if (!counts_ok) return {Verdict::fail, counts};

  const char* root = std::getenv("DLAB_HAPT_DIR");
  if (root == nullptr || !fs::exists(root)) {
    return {Verdict::skip, counts + "; HAPT data not available (set DLAB_HAPT_DIR to the dataset root)"};
  }
  std::vector<Window> windows;
  for (const auto& seq : load_hapt(root)) {
    auto w = make_windows(seq, 256, 256, 12, 16);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  auto split = split_windows(std::move(windows), 42);
  const auto stats = compute_norm_stats(split.train);
  apply_norm(stats, split.train);
  apply_norm(stats, split.validation);
  apply_norm(stats, split.test);

  TrainInputs in;
  in.generator.window_length = 256;
  in.generator.in_channels = 6;
  in.generator.num_classes = 12;
  in.generator.base_filters = 16;
  in.discriminator.window_length = 256;
  in.discriminator.in_channels = 6;
  in.discriminator.num_classes = 12;
  in.train.total_steps = 5000;
  in.train.seed = 42;
  const auto r = train(split, in);
  const double acc = evaluate_model(r.best, split.test).metrics.accuracy;
  char buf[200];
  std::snprintf(buf, sizeof buf, "; windows %zu/%zu/%zu, test frame accuracy %.4f", split.train.size(),
                split.validation.size(), split.test.size(), acc);
  return judge(acc >= 0.85, counts + buf);
}

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria; one line per criterion."};
  std::vector<int> only;
  std::string suite_dir;
  app.add_option("--only", only, "criterion ids to run (default: all)")->delimiter(',');
  app.add_option("--suite-dir", suite_dir, "directory holding the unit-suite binaries (default: next to this binary)");
  CLI11_PARSE(app, argc, argv);
  g_suite_dir = suite_dir.empty() ? fs::absolute(argv[0]).parent_path() : fs::path(suite_dir);

  const std::vector<Criterion> criteria = {
      {1, "gradient suite",
       [] {
         return run_suite("test_autodiff", "*finite differences*");
       }},
      {2, "loss unit values", [] { return run_suite("test_losses", "focal loss unit values,dice discount"); }},
      {3, "misalignment oracle", [] { return run_suite("test_evalkit", "misalignment*"); }},
      {4, "overfit smoke", criterion4},
      {5, "adversarial fragmentation", criterion5},
      {6, "HAPT desk-scale", criterion6},
      {7, "determinism and persistence",
       [] {
         const auto a = run_suite("test_trainer", "training loop");
         const auto b = run_suite("test_cli", "end-to-end workflow");
         return Outcome{a.verdict == Verdict::pass && b.verdict == Verdict::pass ? Verdict::pass : Verdict::fail,
                        a.detail + "; " + b.detail};
       }},
      {8, "feature oracle", [] { return run_suite("test_features", "spectral*,scale equivariance"); }},
  };

  const std::set<int> selected(only.begin(), only.end());
  int failed = 0, ran = 0, skipped = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    ++ran;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("error: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
    failed += o.verdict == Verdict::fail;
    skipped += o.verdict == Verdict::skip;
    std::cout << "criterion " << c.id << " " << tag << " " << c.title << ": " << o.detail << std::endl;
  }
  if (failed > 0) return 1;
  if (ran > 0 && skipped == ran) return 77;
  return 0;
}
