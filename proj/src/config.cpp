#include "dlab/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dlab/error.hpp"

namespace dlab {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

const std::string& lookup(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

KeyValues parse_key_values(std::string_view text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
  return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(trim(item));
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

const std::vector<RunConfig::Key>& RunConfig::keys() {
  static const std::vector<Key> k = {
      {"dataset", "synth", "data source: hapt | csv | synth"},
      {"data_path", "", "HAPT root directory or CSV file (unused for synth)"},
      {"csv_channels", "", "comma list of channel columns (empty: all but the label column)"},
      {"csv_label_column", "label", "label column name"},
      {"classes", "", "comma list of class names in id order (csv; synth defaults to c0..cK-1)"},
      {"sample_rate_hz", "50", "sampling rate of csv / synth data"},
      {"window_length", "256", "frames per window (multiple of 2^gen_depth)"},
      {"window_stride", "0", "window stride in frames (0: equal to window_length)"},
      {"split_seed", "42", "seed of the train/validation/test shuffle"},
      {"split_mode", "window", "window | source (keep each source id in one split)"},
      {"gen_depth", "4", "contraction levels of the U-Net"},
      {"gen_base_filters", "32", "filters of the first level (doubling per level)"},
      {"gen_kernel_size", "3", "temporal kernel size of generator convolutions"},
      {"gen_block_style", "modified", "modified | plain"},
      {"gen_dropout_rate", "0.2", "spatial dropout rate"},
      {"gen_dropout_block", "2", "block index receiving dropout, or none"},
      {"disc_filters", "32,64,128", "filters per discriminator block"},
      {"disc_kernel_size", "3", "temporal kernel size of discriminator convolutions"},
      {"disc_pool_size", "2", "discriminator pooling factor"},
      {"loss_lambda", "100", "weight of the focal term"},
      {"loss_gamma", "2", "focal exponent"},
      {"loss_alpha", "uniform", "uniform | inverse_frequency | comma list of per-class weights"},
      {"loss_beta_floor", "0.01", "lower clamp of the dice discount"},
      {"loss_beta_detached", "true", "treat the dice discount as a constant"},
      {"train_steps", "70000", "training iterations"},
      {"batch_size", "100", "windows per batch"},
      {"lr_initial", "0.0005", "initial learning rate"},
      {"lr_decay_rate", "0.96", "exponential decay rate"},
      {"lr_decay_steps", "300000", "decay steps"},
      {"lr_staircase", "false", "floor the decay exponent"},
      {"eval_every", "500", "validation interval in steps"},
      {"adversarial", "true", "train with the discriminator (false: focal only)"},
      {"d_steps_per_g", "1", "discriminator updates per generator update"},
      {"seed", "42", "seed for initialisation, batch sampling and dropout"},
      {"out_dir", "out", "directory receiving artifacts"},
      {"synth_classes", "3", "synthetic data: number of classes"},
      {"synth_channels", "3", "synthetic data: channels"},
      {"synth_total_frames", "20000", "synthetic data: frames"},
      {"synth_min_duration", "40", "synthetic data: minimum segment length"},
      {"synth_max_duration", "200", "synthetic data: maximum segment length"},
      {"synth_frequencies", "0.5,1.0,2.0", "synthetic data: per-class frequency in Hz (cycled)"},
      {"synth_amplitudes", "1.0", "synthetic data: per-class amplitude (cycled)"},
      {"synth_noise", "0.3", "synthetic data: Gaussian noise sigma"},
      {"synth_boundary_jitter", "0", "synthetic data: label boundary jitter in frames"},
      {"synth_seed", "1", "synthetic data: seed"},
  };
  return k;
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::merge_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : parse_key_values(ss.str(), file.string())) {
    if (values_.count(k) == 0) throw ConfigError(file.string() + ": unknown config key '" + k + "'");
    values_[k] = v;
  }
}

const std::string& RunConfig::get(const std::string& key) const { return lookup(values_, key); }
long long RunConfig::get_int(const std::string& key) const { return kv_int(values_, key); }
double RunConfig::get_double(const std::string& key) const { return kv_double(values_, key); }
bool RunConfig::get_bool(const std::string& key) const { return kv_bool(values_, key); }
std::vector<std::string> RunConfig::get_list(const std::string& key) const { return split_list(get(key)); }
std::string RunConfig::to_text() const { return format_key_values(values_); }

long long kv_int(const KeyValues& kv, const std::string& key) {
  const std::string& s = lookup(kv, key);
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
  }
  return v;
}

double kv_double(const KeyValues& kv, const std::string& key) {
  const std::string& s = lookup(kv, key);
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  }
  return v;
}

bool kv_bool(const KeyValues& kv, const std::string& key) {
  const std::string& s = lookup(kv, key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected true|false, got '" + s + "'");
}

const std::string& kv_string(const KeyValues& kv, const std::string& key) { return lookup(kv, key); }

GeneratorConfig generator_config(const KeyValues& kv, Index in_channels, Index num_classes) {
  GeneratorConfig c;
  c.window_length = kv_int(kv, "window_length");
  c.in_channels = kv.count("gen_in_channels") ? kv_int(kv, "gen_in_channels") : in_channels;
  c.num_classes = kv.count("gen_num_classes") ? kv_int(kv, "gen_num_classes") : num_classes;
  c.depth = kv_int(kv, "gen_depth");
  c.base_filters = kv_int(kv, "gen_base_filters");
  c.kernel_size = kv_int(kv, "gen_kernel_size");
  c.block_style = parse_block_style(kv_string(kv, "gen_block_style"));
  c.dropout_rate = kv_double(kv, "gen_dropout_rate");
  const std::string& block = kv_string(kv, "gen_dropout_block");
  if (block == "none" || block.empty()) {
    c.dropout_block.reset();
  } else {
    c.dropout_block = static_cast<int>(kv_int(kv, "gen_dropout_block"));
  }
  c.validate();
  return c;
}

DiscriminatorConfig discriminator_config(const KeyValues& kv, Index in_channels, Index num_classes) {
  DiscriminatorConfig c;
  c.window_length = kv_int(kv, "window_length");
  c.in_channels = kv.count("gen_in_channels") ? kv_int(kv, "gen_in_channels") : in_channels;
  c.num_classes = kv.count("gen_num_classes") ? kv_int(kv, "gen_num_classes") : num_classes;
  c.filters.clear();
  for (const auto& f : split_list(kv_string(kv, "disc_filters"))) {
    KeyValues one{{"f", f}};
    c.filters.push_back(kv_int(one, "f"));
  }
  c.kernel_size = kv_int(kv, "disc_kernel_size");
  c.pool_size = kv_int(kv, "disc_pool_size");
  c.validate();
  return c;
}

LossConfig loss_config(const KeyValues& kv) {
  LossConfig c;
  c.lambda = kv_double(kv, "loss_lambda");
  c.gamma = kv_double(kv, "loss_gamma");
  const std::string& alpha = kv_string(kv, "loss_alpha");
  if (alpha != "uniform" && alpha != "inverse_frequency") {
    for (const auto& a : split_list(alpha)) {
      KeyValues one{{"a", a}};
      c.alpha.push_back(kv_double(one, "a"));
    }
  }
  c.beta_floor = kv_double(kv, "loss_beta_floor");
  c.beta_detached = kv_bool(kv, "loss_beta_detached");
  c.validate();
  return c;
}

TrainConfig train_config(const KeyValues& kv) {
  TrainConfig c;
  c.total_steps = kv_int(kv, "train_steps");
  c.batch_size = kv_int(kv, "batch_size");
  c.lr.initial_rate = kv_double(kv, "lr_initial");
  c.lr.decay_rate = kv_double(kv, "lr_decay_rate");
  c.lr.decay_steps = kv_int(kv, "lr_decay_steps");
  c.lr.staircase = kv_bool(kv, "lr_staircase");
  c.eval_every = kv_int(kv, "eval_every");
  c.adversarial = kv_bool(kv, "adversarial");
  c.d_steps_per_g = static_cast<int>(kv_int(kv, "d_steps_per_g"));
  c.seed = static_cast<std::uint64_t>(kv_int(kv, "seed"));
  c.validate();
  return c;
}

void store(KeyValues& kv, const GeneratorConfig& c) {
  kv["window_length"] = std::to_string(c.window_length);
  kv["gen_in_channels"] = std::to_string(c.in_channels);
  kv["gen_num_classes"] = std::to_string(c.num_classes);
  kv["gen_depth"] = std::to_string(c.depth);
  kv["gen_base_filters"] = std::to_string(c.base_filters);
  kv["gen_kernel_size"] = std::to_string(c.kernel_size);
  kv["gen_block_style"] = to_string(c.block_style);
  kv["gen_dropout_rate"] = format_double(c.dropout_rate);
  kv["gen_dropout_block"] = c.dropout_block ? std::to_string(*c.dropout_block) : "none";
}

void store(KeyValues& kv, const DiscriminatorConfig& c) {
  std::vector<std::string> f;
  for (auto v : c.filters) f.push_back(std::to_string(v));
  kv["disc_filters"] = join_list(f);
  kv["disc_kernel_size"] = std::to_string(c.kernel_size);
  kv["disc_pool_size"] = std::to_string(c.pool_size);
}

void store(KeyValues& kv, const LossConfig& c) {
  kv["loss_lambda"] = format_double(c.lambda);
  kv["loss_gamma"] = format_double(c.gamma);
  if (c.alpha.empty()) {
    kv["loss_alpha"] = "uniform";
  } else {
    std::vector<std::string> a;
    for (double v : c.alpha) a.push_back(format_double(v));
    kv["loss_alpha"] = join_list(a);
  }
  kv["loss_beta_floor"] = format_double(c.beta_floor);
  kv["loss_beta_detached"] = c.beta_detached ? "true" : "false";
}

void store(KeyValues& kv, const TrainConfig& c) {
  kv["train_steps"] = std::to_string(c.total_steps);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["lr_initial"] = format_double(c.lr.initial_rate);
  kv["lr_decay_rate"] = format_double(c.lr.decay_rate);
  kv["lr_decay_steps"] = std::to_string(c.lr.decay_steps);
  kv["lr_staircase"] = c.lr.staircase ? "true" : "false";
  kv["eval_every"] = std::to_string(c.eval_every);
  kv["adversarial"] = c.adversarial ? "true" : "false";
  kv["d_steps_per_g"] = std::to_string(c.d_steps_per_g);
  kv["seed"] = std::to_string(c.seed);
}

}  // namespace dlab
