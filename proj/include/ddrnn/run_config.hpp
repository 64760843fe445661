#ifndef DDRNN_RUN_CONFIG_HPP
#define DDRNN_RUN_CONFIG_HPP

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ddrnn/errors.hpp"
#include "ddrnn/model.hpp"
#include "ddrnn/training.hpp"

namespace ddrnn {

/// Everything a training run needs. in_channels = 0 means "take it from the data".
struct RunConfig {
  ModelConfig model{.in_channels = 0};
  TrainConfig train;
  std::string data;
  std::string val_data;
  double val_fraction = 0.2;  // used only without val_data
  std::string out;

  /// Parses value into the field named key. Throws ConfigError.
  void set(std::string_view key, std::string_view value);

  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::string type;  // placeholder shown in usage text
};

/// Accepted keys, in file order.
const std::vector<ConfigKey>& run_config_keys();

/// Current value of key formatted the way set() reads it.
std::string get_value(const RunConfig& cfg, std::string_view key);

/// Flat "key = value" lines; '#' starts a comment. Unknown and repeated
/// keys are rejected.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// All keys, one per line, readable by parse_run_config.
std::string format_run_config(const RunConfig& cfg);

/// Model shape only, as stored next to trained parameters.
std::string format_model_config(const ModelConfig& config);
ModelConfig parse_model_config(std::string_view text);

std::string format_directions(const std::vector<Direction>& dirs);
/// "all" or a comma list such as "se,nw".
std::vector<Direction> parse_directions(std::string_view text);

}  // namespace ddrnn

#endif  // DDRNN_RUN_CONFIG_HPP
