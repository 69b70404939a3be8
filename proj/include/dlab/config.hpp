#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dlab/losses.hpp"
#include "dlab/models.hpp"
#include "dlab/trainer_config.hpp"

namespace dlab {

/// Flat ordered key/value map; ordering makes serialisation deterministic.
using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines. '#' starts a comment; blank lines are skipped.
KeyValues parse_key_values(std::string_view text, const std::string& origin);
std::string format_key_values(const KeyValues& kv);

std::vector<std::string> split_list(const std::string& s);
std::string join_list(const std::vector<std::string>& items);

/// Every run setting with its documented default. Unknown keys are rejected.
class RunConfig {
 public:
  struct Key {
    std::string name;
    std::string default_value;
    std::string help;
  };

  static const std::vector<Key>& keys();

  RunConfig();

  void set(const std::string& key, const std::string& value);
  void merge_file(const std::filesystem::path& file);

  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  const KeyValues& values() const { return values_; }
  std::string to_text() const;

 private:
  KeyValues values_;
};

long long kv_int(const KeyValues& kv, const std::string& key);
double kv_double(const KeyValues& kv, const std::string& key);
bool kv_bool(const KeyValues& kv, const std::string& key);
const std::string& kv_string(const KeyValues& kv, const std::string& key);

/// Builders from the gen_*, disc_*, loss_* and train keys. Channel and class
/// counts come from the data (or from gen_in_channels / gen_num_classes when
/// present, as in checkpoints).
GeneratorConfig generator_config(const KeyValues& kv, Index in_channels, Index num_classes);
DiscriminatorConfig discriminator_config(const KeyValues& kv, Index in_channels, Index num_classes);
/// loss_alpha must be "uniform" or an explicit list here; "inverse_frequency"
/// is resolved against training data by the caller.
LossConfig loss_config(const KeyValues& kv);
TrainConfig train_config(const KeyValues& kv);

void store(KeyValues& kv, const GeneratorConfig& c);
void store(KeyValues& kv, const DiscriminatorConfig& c);
void store(KeyValues& kv, const LossConfig& c);
void store(KeyValues& kv, const TrainConfig& c);

std::string format_double(double v);

}  // namespace dlab
