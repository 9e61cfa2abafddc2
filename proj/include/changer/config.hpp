#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "changer/train.hpp"

namespace changer {

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

enum class DataSource { Synthetic, Directory };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  std::string dir;
  std::string eval_dir; // defaults to dir when empty
  int train_samples = 200;
  int eval_samples = 50;
  int size = 64;
  double difficulty = 0.5;
  bool operator==(const DataConfig&) const = default;
};

/// Everything one command needs: model, optimisation, data and output.
struct RunConfig {
  ModelConfig model = ModelConfig::preset(Variant::Ex);
  TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  bool operator==(const RunConfig&) const = default;
};

/// Applies one `key = value` setting. `variant` resets the interaction
/// schedule and fusion, so it should precede any stageN.* keys.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Parses flat `key = value` lines with `#` comments on top of `base`.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config_file(const std::string& path);
std::string serialize(const RunConfig& config);

/// Parses "key=value" as given to --set.
void apply_override(RunConfig& config, const std::string& assignment);

struct Datasets {
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

Datasets make_datasets(const RunConfig& config, bool with_train = true);

} // namespace changer
