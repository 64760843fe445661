#include "ddrnn/commands.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include <CLI11.hpp>

#include "ddrnn/bench.hpp"
#include "ddrnn/data.hpp"
#include "ddrnn/errors.hpp"
#include "ddrnn/model_io.hpp"
#include "ddrnn/run_config.hpp"
#include "ddrnn/tensor_io.hpp"
#include "ddrnn/training.hpp"

namespace ddrnn {

namespace {

namespace fs = std::filesystem;

std::string strf(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

std::string strf(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  return buf;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string::npos ? text.size() : comma;
    if (end > start) items.push_back(text.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return items;
}

std::vector<Variant> parse_variant_list(const std::string& text) {
  if (text == "all") return {std::begin(kAllVariants), std::end(kAllVariants)};
  std::vector<Variant> out;
  for (const auto& item : split_list(text)) {
    const auto v = parse_variant(item);
    if (!v) throw ConfigError("unknown variant '" + item + "'");
    out.push_back(*v);
  }
  if (out.empty()) throw ConfigError("no variants given");
  return out;
}

std::vector<std::string> variant_choices(bool with_all) {
  std::vector<std::string> names;
  if (with_all) names.emplace_back("all");
  for (Variant v : kAllVariants) names.emplace_back(to_string(v));
  return names;
}

// Gradient check.

struct GradcheckArgs {
  std::string variant = "all";
  std::string direction = "all";
  std::uint64_t seed = 1;
  double eps = 1e-5;
  double tol = 1e-4;
  int hidden = 6;
  int in_channels = 3;
  int classes = 4;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const std::vector<Variant> variants = parse_variant_list(a.variant);
  const std::vector<Direction> directions = parse_directions(a.direction);
  out << strf("%-16s %-4s %-6s %14s  %s\n", "variant", "dir", "grid", "max_rel_error", "status");
  int failed = 0;
  for (Variant v : variants) {
    for (Direction d : directions) {
      ModelConfig config{a.in_channels, a.hidden, a.classes, v, {d}};
      config.validate();
      const GridDims dims = gradient_check_dims(v);
      const GradientCheckReport r = gradient_check(config, dims, a.seed, a.eps, a.tol);
      out << strf("%-16s %-4s %dx%-4d %14.6e  %s", std::string(to_string(v)).c_str(),
                  std::string(to_string(d)).c_str(), dims.rows, dims.cols, r.max_relative_error,
                  r.passed ? "PASS" : "FAIL");
      if (!r.passed) {
        ++failed;
        out << strf("  worst %s analytic %.9e numeric %.9e", r.worst_coordinate.c_str(), r.analytic_at_worst,
                    r.numeric_at_worst);
      }
      out << "\n";
    }
  }
  out << strf("%d of %zu checks failed\n", failed, variants.size() * directions.size());
  return failed == 0 ? kExitOk : kExitCheckFail;
}

// Dataset generation.

struct GenDataArgs {
  std::string task;
  std::string out;
  int samples = 100;
  std::uint64_t seed = 0;
  int rows = 16;
  int cols = 16;
  int length = 16;
  int classes = 4;
  double noise = 0.5;
  int marker_extent = 3;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  Dataset data;
  if (a.task == "marker") {
    MarkerSpec spec;
    spec.dims = {a.rows, a.cols};
    spec.classes = a.classes;
    spec.noise_sigma = a.noise;
    spec.marker_extent = a.marker_extent;
    spec.n_samples = a.samples;
    spec.seed = a.seed;
    data = gen_marker_task(spec);
  } else if (a.task == "blob") {
    data = gen_blob_task({a.rows, a.cols}, a.classes, a.samples, a.seed, a.noise);
  } else {
    data = gen_chain_task(a.length, a.samples, a.seed, a.classes, a.noise);
  }
  save_dataset(data, a.out);
  out << "wrote " << data.size() << " samples to " << a.out << "\n";
  return kExitOk;
}

// Training.

std::string metric_field(const std::optional<MetricsReport>& m, double MetricsReport::*field) {
  return m ? strf("%.9g", (*m).*field) : "nan";
}

std::string history_line(const EpochRecord& r) {
  return strf("%d %.9g %.9g ", r.epoch, r.loss, r.rates.rnn) + metric_field(r.validation, &MetricsReport::gpa) + " " +
         metric_field(r.validation, &MetricsReport::aca) + " " + metric_field(r.validation, &MetricsReport::mean_iou) +
         "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

struct TrainArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;  // key -> value given on the command line
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  if (!a.config_path.empty()) cfg = load_run_config(a.config_path);
  for (const auto& [key, value] : a.overrides) cfg.set(key, value);
  cfg.validate();
  if (cfg.data.empty()) throw ConfigError("no training data: set data in the config or pass --data");
  if (cfg.out.empty()) throw ConfigError("no output directory: set out in the config or pass --out");

  Dataset train_set = load_dataset(cfg.data);
  Dataset val_set;
  if (!cfg.val_data.empty()) {
    val_set = load_dataset(cfg.val_data);
  } else {
    const auto held = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(train_set.size())));
    val_set.assign(train_set.end() - static_cast<std::ptrdiff_t>(held), train_set.end());
    train_set.resize(train_set.size() - held);
  }
  if (train_set.empty()) throw ShapeError("training set is empty");

  ModelConfig& model = cfg.model;
  if (model.in_channels == 0) model.in_channels = train_set.front().channels();
  model.validate();
  for (const Dataset* set : {&train_set, &val_set}) {
    for (const Sample& s : *set) {
      validate_sample(s, model.classes);
      if (s.channels() != model.in_channels) {
        throw ShapeError(strf("data has %d channels, model expects %d", s.channels(), model.in_channels));
      }
    }
  }

  Rng rng(cfg.train.seed);
  ModelParams<float> params = init_params<float>(model, rng, train_set.front().dims);

  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw IoError("cannot create " + cfg.out + ": " + ec.message());
  const fs::path dir = cfg.out;
  write_text(dir / "run.cfg", format_run_config(cfg));
  const fs::path history_path = dir / "history.txt";
  std::ofstream history(history_path, std::ios::binary | std::ios::trunc);
  if (!history) throw IoError("cannot write " + history_path.string());
  history << "# epoch loss lr gpa aca miou\n" << std::flush;

  out << "training " << to_string(model.variant) << " on " << train_set.size() << " samples ("
      << val_set.size() << " validation) for " << cfg.train.epochs << " epochs\n";
  if (cfg.train.epochs > 0) {
    auto on_epoch = [&](const EpochRecord& r) {
      history << history_line(r) << std::flush;
      if (!history) throw IoError("write failed for " + history_path.string());
      out << "epoch " << history_line(r) << std::flush;
    };
    try {
      params = train<float>(model, std::move(params), train_set, val_set, cfg.train, eval_threads_from_env(), on_epoch)
                   .params;
    } catch (const NumericError& e) {
      err << "error: " << e.what() << "\n";
      return kExitNumeric;
    }
  }
  save_model(dir, model, params);
  out << "wrote model to " << cfg.out << "\n";
  return kExitOk;
}

// Evaluation.

int cmd_eval(const std::string& model_dir, const std::string& data_dir, std::ostream& out) {
  const StoredModel m = load_model(model_dir);
  const Dataset data = load_dataset(data_dir);
  const MetricsReport r = evaluate<float>(m.config, m.params, data, eval_threads_from_env());

  out << strf("%-10s %10.6f\n", "GPA", r.gpa) << strf("%-10s %10.6f\n", "ACA", r.aca)
      << strf("%-10s %10.6f\n", "mean IoU", r.mean_iou);
  for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
    const std::string label = strf("IoU[%zu]", c);
    out << (r.per_class_iou[c] ? strf("%-10s %10.6f\n", label.c_str(), *r.per_class_iou[c])
                               : strf("%-10s %10s\n", label.c_str(), "-"));
  }
  out << strf("%-10s %10lld\n", "units", static_cast<long long>(r.total));
  out << "\n";
  out << strf("gpa=%.17g\n", r.gpa) << strf("aca=%.17g\n", r.aca) << strf("miou=%.17g\n", r.mean_iou);
  for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
    if (r.per_class_iou[c]) out << strf("iou.%zu=%.17g\n", c, *r.per_class_iou[c]);
  }
  out << strf("units=%lld\n", static_cast<long long>(r.total));
  return kExitOk;
}

// Prediction.

int cmd_predict(const std::string& model_dir, const std::string& input, const std::string& out_path,
                const std::string& color_path, std::ostream& out) {
  const StoredModel m = load_model(model_dir);
  const Sample s = load_features(input);
  if (s.channels() != m.config.in_channels) {
    throw ShapeError(strf("input has %d channels, model expects %d", s.channels(), m.config.in_channels));
  }
  const auto trace = model_forward(s.features, s.dims, m.config, m.params);
  const std::vector<std::uint8_t> labels = predict_labels(trace.probs);
  export_label_map(labels, s.dims, out_path);
  if (!color_path.empty()) export_color_map(labels, s.dims, default_palette(), color_path);
  out << "wrote " << s.dims.rows << "x" << s.dims.cols << " label map to " << out_path << "\n";
  return kExitOk;
}

// Benchmark.

struct BenchArgs {
  std::string sizes = "8,16";
  std::string variants = "plain-dag,dense-attention";
  int reps = 5;
  int hidden = kDeskHidden;
  int in_channels = 4;
  int classes = 4;
  std::string directions = "all";
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  std::vector<int> sizes;
  for (const auto& item : split_list(a.sizes)) {
    try {
      std::size_t used = 0;
      sizes.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad size '" + item + "'");
    }
  }
  if (sizes.empty()) throw ConfigError("no sizes given");
  const std::vector<Variant> variants = parse_variant_list(a.variants);
  ModelConfig base{a.in_channels, a.hidden, a.classes, Variant::PlainDag, parse_directions(a.directions)};
  base.validate();

  const std::vector<BenchRow> rows = bench_forward(sizes, variants, a.reps, base, a.seed);
  out << strf("%-6s %-16s %12s\n", "size", "variant", "median_ms");
  for (const auto& r : rows) {
    out << strf("%-6d %-16s %12.4f\n", r.size, std::string(to_string(r.variant)).c_str(), r.median_ms);
  }
  out << "\n";
  auto median_at = [&](int size, Variant v) -> std::optional<double> {
    for (const auto& r : rows) {
      if (r.size == size && r.variant == v) return r.median_ms;
    }
    return std::nullopt;
  };
  for (int s : sizes) {
    const auto plain = median_at(s, Variant::PlainDag);
    for (Variant v : variants) {
      const auto other = median_at(s, v);
      if (v == Variant::PlainDag || !plain || !other || *plain <= 0.0) continue;
      out << strf("ratio %s/plain-dag size %d: %.3f\n", std::string(to_string(v)).c_str(), s, *other / *plain);
    }
  }
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    for (Variant v : variants) {
      if (const auto g = growth_ratio(rows, v, sizes[i - 1], sizes[i])) {
        out << strf("growth %s %d->%d: %.3f\n", std::string(to_string(v)).c_str(), sizes[i - 1], sizes[i], *g);
      }
    }
  }
  return kExitOk;
}

std::string dashed(std::string key) {
  std::ranges::replace(key, '_', '-');
  return key;
}

}  // namespace

int eval_threads_from_env() {
  const char* value = std::getenv("DDRNN_THREADS");
  if (value == nullptr || *value == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(value, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) throw ConfigError(std::string("DDRNN_THREADS must be a positive integer, got ") + value);
  return static_cast<int>(n);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Directed-acyclic-graph recurrent networks for grid labelling", "ddrnn"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gradcheck->add_option("--variant", gc.variant, "Variant to check, or all")->check(CLI::IsMember(variant_choices(true)));
  gradcheck->add_option("--direction", gc.direction, "Direction to check, or all")
      ->check(CLI::IsMember({"all", "se", "sw", "ne", "nw"}, CLI::ignore_case));
  gradcheck->add_option("--seed", gc.seed, "Seed of the random instance");
  gradcheck->add_option("--eps", gc.eps, "Central-difference step")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tol", gc.tol, "Relative-error tolerance")->check(CLI::NonNegativeNumber);
  gradcheck->add_option("--hidden", gc.hidden, "Hidden dimension")->check(CLI::PositiveNumber);
  gradcheck->add_option("--in-channels", gc.in_channels, "Input channels")->check(CLI::PositiveNumber);
  gradcheck->add_option("--classes", gc.classes, "Classes")->check(CLI::Range(2, 255));

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen->add_option("--task", gd.task, "Generator")->required()->check(CLI::IsMember({"marker", "blob", "chain"}));
  gen->add_option("--out", gd.out, "Output dataset directory")->required();
  gen->add_option("--samples", gd.samples, "Number of samples")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gd.seed, "Generator seed");
  gen->add_option("--rows", gd.rows, "Grid rows (marker, blob)")->check(CLI::PositiveNumber);
  gen->add_option("--cols", gd.cols, "Grid columns (marker, blob)")->check(CLI::PositiveNumber);
  gen->add_option("--length", gd.length, "Sequence length (chain)")->check(CLI::PositiveNumber);
  gen->add_option("--classes", gd.classes, "Classes (marker needs 4)")->check(CLI::Range(2, 255));
  gen->add_option("--noise", gd.noise, "Feature noise sigma")->check(CLI::NonNegativeNumber);
  gen->add_option("--marker-extent", gd.marker_extent, "Marker patch side (marker)")->check(CLI::PositiveNumber);

  TrainArgs ta;
  std::map<std::string, std::string> override_values;
  std::vector<std::pair<std::string, CLI::Option*>> override_options;
  auto* trainer = app.add_subcommand("train", "Train a model; flags override config-file values");
  trainer->add_option("--config", ta.config_path, "Run configuration file (key = value lines)")
      ->check(CLI::ExistingFile);
  const RunConfig defaults;
  for (const auto& key : run_config_keys()) {
    auto* opt = trainer->add_option("--" + dashed(key.name), override_values[key.name], key.help);
    opt->type_name(key.type)->default_str(get_value(defaults, key.name));
    override_options.emplace_back(key.name, opt);
  }

  std::string eval_model, eval_data;
  auto* evaluator = app.add_subcommand("eval", "Score a trained model on a dataset");
  evaluator->add_option("--model", eval_model, "Model directory written by train")->required();
  evaluator->add_option("--data", eval_data, "Dataset directory")->required();

  std::string pred_model, pred_input, pred_out, pred_color;
  auto* predictor = app.add_subcommand("predict", "Label one feature tensor");
  predictor->add_option("--model", pred_model, "Model directory written by train")->required();
  predictor->add_option("--input", pred_input, "Features DDRT file (H x W x C float32)")->required();
  predictor->add_option("--out", pred_out, "Output label map (binary PGM)")->required();
  predictor->add_option("--color", pred_color, "Optional palette rendering (binary PPM)");

  BenchArgs ba;
  auto* bencher = app.add_subcommand("bench", "Time forward passes across grid sizes");
  bencher->add_option("--sizes", ba.sizes, "Comma list of grid sides");
  bencher->add_option("--variant,--variants", ba.variants, "Comma list of variants, or all");
  bencher->add_option("--reps", ba.reps, "Repetitions; the median is reported")->check(CLI::PositiveNumber);
  bencher->add_option("--hidden", ba.hidden, "Hidden dimension")->check(CLI::PositiveNumber);
  bencher->add_option("--in-channels", ba.in_channels, "Input channels")->check(CLI::PositiveNumber);
  bencher->add_option("--classes", ba.classes, "Classes")->check(CLI::Range(2, 255));
  bencher->add_option("--directions", ba.directions, "Directions: all or a comma list");
  bencher->add_option("--seed", ba.seed, "Parameter and input seed");

  std::vector<const char*> argv{"ddrnn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help() << "\n";
    return kExitUsage;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(gc, out);
    if (gen->parsed()) return cmd_gen_data(gd, out);
    if (trainer->parsed()) {
      for (const auto& [key, opt] : override_options) {
        if (opt->count() > 0) ta.overrides[key] = override_values[key];
      }
      return cmd_train(ta, out, err);
    }
    if (evaluator->parsed()) return cmd_eval(eval_model, eval_data, out);
    if (predictor->parsed()) return cmd_predict(pred_model, pred_input, pred_out, pred_color, out);
    if (bencher->parsed()) return cmd_bench(ba, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitShape;
  }
  return kExitUsage;
}

}  // namespace ddrnn
