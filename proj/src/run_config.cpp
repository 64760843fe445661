#include "ddrnn/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "ddrnn/errors.hpp"
#include "ddrnn/tensor_io.hpp"

namespace ddrnn {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

template <class T>
std::string show(T value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

Variant variant_value(std::string_view text) {
  const auto v = parse_variant(text);
  if (!v) throw ConfigError("unknown variant '" + std::string(text) + "'");
  return *v;
}

}  // namespace

const std::vector<ConfigKey>& run_config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"variant", "recurrence: chain, plain-dag, dense-sum or dense-attention", "NAME"},
      {"directions", "sweep directions: all, or a comma list of se,sw,ne,nw", "LIST"},
      {"in_channels", "input channels, 0 to take them from the data", "INT"},
      {"hidden", "hidden dimension D", "INT"},
      {"classes", "number of classes K", "INT"},
      {"lr_rnn", "learning rate of recurrence and head", "FLOAT"},
      {"lr_embed", "learning rate of the input embedding", "FLOAT"},
      {"decay_rate", "per-epoch learning-rate decay factor", "FLOAT"},
      {"decay_start_epoch", "last epoch trained at the initial rates", "INT"},
      {"epochs", "number of epochs", "INT"},
      {"batch_size", "samples per SGD step", "INT"},
      {"seed", "seed for initialization and shuffling", "UINT"},
      {"clip_threshold", "global gradient-norm clip, 0 disables", "FLOAT"},
      {"data", "training dataset directory", "DIR"},
      {"val_data", "validation dataset directory", "DIR"},
      {"val_fraction", "tail fraction of data held out when val_data is empty", "FLOAT"},
      {"out", "output model directory", "DIR"},
  };
  return keys;
}

std::string format_directions(const std::vector<Direction>& dirs) {
  if (std::ranges::equal(dirs, kAllDirections)) return "all";
  std::string out;
  for (Direction d : dirs) {
    if (!out.empty()) out += ',';
    out += to_string(d);
  }
  return out;
}

std::vector<Direction> parse_directions(std::string_view text) {
  text = trim(text);
  if (text == "all") return {kAllDirections.begin(), kAllDirections.end()};
  std::vector<Direction> dirs;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    const auto d = parse_direction(item);
    if (!d) throw ConfigError("unknown direction '" + std::string(item) + "'");
    if (std::ranges::find(dirs, *d) != dirs.end()) throw ConfigError("direction repeated: " + std::string(item));
    dirs.push_back(*d);
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  if (dirs.empty()) throw ConfigError("no directions given");
  return dirs;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "variant") {
    model.variant = variant_value(value);
  } else if (key == "directions") {
    model.directions = parse_directions(value);
  } else if (key == "in_channels") {
    model.in_channels = parse_number<int>(key, value);
  } else if (key == "hidden") {
    model.hidden = parse_number<int>(key, value);
  } else if (key == "classes") {
    model.classes = parse_number<int>(key, value);
  } else if (key == "lr_rnn") {
    train.lr_rnn = parse_number<double>(key, value);
  } else if (key == "lr_embed") {
    train.lr_embed = parse_number<double>(key, value);
  } else if (key == "decay_rate") {
    train.decay_rate = parse_number<double>(key, value);
  } else if (key == "decay_start_epoch") {
    train.decay_start_epoch = parse_number<int>(key, value);
  } else if (key == "epochs") {
    train.epochs = parse_number<int>(key, value);
  } else if (key == "batch_size") {
    train.batch_size = parse_number<int>(key, value);
  } else if (key == "seed") {
    train.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "clip_threshold") {
    const double clip = parse_number<double>(key, value);
    if (clip == 0.0) {
      train.clip_threshold.reset();
    } else {
      train.clip_threshold = clip;
    }
  } else if (key == "data") {
    data = value;
  } else if (key == "val_data") {
    val_data = value;
  } else if (key == "val_fraction") {
    val_fraction = parse_number<double>(key, value);
  } else if (key == "out") {
    out = value;
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

std::string get_value(const RunConfig& cfg, std::string_view key) {
  if (key == "variant") return std::string(to_string(cfg.model.variant));
  if (key == "directions") return format_directions(cfg.model.directions);
  if (key == "in_channels") return show(cfg.model.in_channels);
  if (key == "hidden") return show(cfg.model.hidden);
  if (key == "classes") return show(cfg.model.classes);
  if (key == "lr_rnn") return show(cfg.train.lr_rnn);
  if (key == "lr_embed") return show(cfg.train.lr_embed);
  if (key == "decay_rate") return show(cfg.train.decay_rate);
  if (key == "decay_start_epoch") return show(cfg.train.decay_start_epoch);
  if (key == "epochs") return show(cfg.train.epochs);
  if (key == "batch_size") return show(cfg.train.batch_size);
  if (key == "seed") return show(cfg.train.seed);
  if (key == "clip_threshold") return show(cfg.train.clip_threshold.value_or(0.0));
  if (key == "data") return cfg.data;
  if (key == "val_data") return cfg.val_data;
  if (key == "val_fraction") return show(cfg.val_fraction);
  if (key == "out") return cfg.out;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  if (model.in_channels < 0) throw ConfigError("in_channels must be >= 0");
  if (model.hidden < 1) throw ConfigError("hidden must be >= 1");
  if (model.classes < 2 || model.classes > 255) throw ConfigError("classes must lie in [2, 255]");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  try {
    train.validate();
  } catch (const NumericError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": repeated key " + key);
    try {
      base.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  const auto bytes = read_file_bytes(path);
  return parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                          std::move(base));
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : run_config_keys()) out += k.name + " = " + get_value(cfg, k.name) + "\n";
  return out;
}

std::string format_model_config(const ModelConfig& config) {
  std::ostringstream out;
  out << "variant = " << to_string(config.variant) << "\n"
      << "directions = " << format_directions(config.directions) << "\n"
      << "in_channels = " << config.in_channels << "\n"
      << "hidden = " << config.hidden << "\n"
      << "classes = " << config.classes << "\n";
  return out.str();
}

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig model = parse_run_config(text).model;
  if (model.in_channels < 1) throw ConfigError("model config lacks in_channels");
  try {
    model.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  return model;
}

}  // namespace ddrnn
