#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cal/adversary.hpp"
#include "cal/encoder.hpp"
#include "cal/objectives.hpp"
#include "cal/trainer.hpp"

namespace cal {

/// Everything a training run needs. Keys are snake_case in files; dashes are
/// accepted anywhere in place of underscores, so CLI flags map one-to-one.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  LossConfig loss;
  AttackConfig attack;
  Objective objective = Objective::scal;
  std::string train_path;
  std::string dev_path;
  std::string vocab_path;  // built from the training data when empty
  std::string out_dir = "run";
  std::size_t min_freq = 1;

  /// Sets one field from its textual value. Throws ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  /// Every key with its resolved value, in a stable order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  /// key=value lines; parse(serialize()) reproduces the config.
  std::string serialize() const;

  /// Accepts key=value text (blank lines and '#' comments ignored) or a flat
  /// JSON object when the first non-space character is '{'.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Known config keys (snake_case), for help text and flag registration.
const std::vector<std::string>& run_config_keys();

/// Normalizes a flag or key spelling: leading dashes dropped, '-' -> '_'.
std::string normalize_key(const std::string& key);

/// Applies the CAL_SEED environment variable, if set, over the config seed.
void apply_seed_env(RunConfig& config);

}  // namespace cal
