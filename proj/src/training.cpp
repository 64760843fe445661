#include "ddrnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "ddrnn/errors.hpp"

namespace ddrnn {

namespace {

// Calls f(a_tensor, b_tensor, group) on matching tensors of two parameter sets.
template <class A, class B, class F>
void zip_tensors(A& a, B& b, F&& f) {
  if (a.dirs.size() != b.dirs.size()) throw ShapeError("parameter sets have different direction counts");
  auto same = [](const auto& x, const auto& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeError("parameter shapes differ");
  };
  same(a.embed, b.embed);
  f(a.embed, b.embed, ParamGroup::Embedding);
  same(a.embed_bias, b.embed_bias);
  f(a.embed_bias, b.embed_bias, ParamGroup::Embedding);
  for (std::size_t l = 0; l < a.dirs.size(); ++l) {
    auto& x = a.dirs[l];
    auto& y = b.dirs[l];
    same(x.U, y.U);
    same(x.W, y.W);
    same(x.b, y.b);
    same(x.z, y.z);
    same(x.V, y.V);
    f(x.U, y.U, ParamGroup::Recurrent);
    f(x.W, y.W, ParamGroup::Recurrent);
    f(x.b, y.b, ParamGroup::Recurrent);
    f(x.z, y.z, ParamGroup::Recurrent);
    f(x.V, y.V, ParamGroup::Recurrent);
  }
  same(a.c, b.c);
  f(a.c, b.c, ParamGroup::Recurrent);
}

template <class Scalar>
Mat<Scalar> features_as(const Sample& s) {
  return s.features.template cast<Scalar>();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_rnn > 0.0) || !(lr_embed > 0.0)) throw NumericError("learning rates must be positive");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw NumericError("decay_rate must lie in (0, 1]");
  if (epochs < 0) throw NumericError("epochs must be non-negative");
  if (batch_size < 1) throw NumericError("batch_size must be >= 1");
  if (decay_start_epoch < 0) throw NumericError("decay_start_epoch must be non-negative");
  if (clip_threshold && !(*clip_threshold > 0.0)) throw NumericError("clip_threshold must be positive");
}

LearningRates lr_schedule(int epoch, const TrainConfig& cfg) {
  const int steps = std::max(0, epoch - cfg.decay_start_epoch);
  const double factor = std::pow(cfg.decay_rate, steps);
  return {cfg.lr_rnn * factor, cfg.lr_embed * factor};
}

template <class Scalar>
double gradient_norm(const ModelParams<Scalar>& grads) {
  double sq = 0.0;
  for_each_tensor(grads, [&sq](const std::string&, const auto& t, ParamGroup) {
    for (Eigen::Index i = 0; i < t.size(); ++i) sq += static_cast<double>(t.data()[i]) * static_cast<double>(t.data()[i]);
  });
  return std::sqrt(sq);
}

template <class Scalar>
void sgd_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, LearningRates rates,
              std::optional<double> clip_threshold) {
  double scale = 1.0;
  if (clip_threshold) {
    const double norm = gradient_norm(grads);
    if (norm > *clip_threshold) scale = *clip_threshold / norm;
  }
  zip_tensors(params, grads, [&](auto& p, const auto& g, ParamGroup group) {
    const auto step = static_cast<Scalar>((group == ParamGroup::Embedding ? rates.embed : rates.rnn) * scale);
    p -= step * g;
  });
}

void accumulate_confusion(Confusion& confusion, std::span<const std::uint8_t> truth,
                          std::span<const std::uint8_t> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("ground truth and prediction sizes differ");
  const auto k = confusion.rows();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kIgnoreLabel) continue;
    if (truth[i] >= k || predicted[i] >= k) throw ShapeError("label outside the confusion matrix");
    ++confusion(truth[i], predicted[i]);
  }
}

MetricsReport metrics_from_confusion(const Confusion& confusion) {
  MetricsReport r;
  r.confusion = confusion;
  r.total = confusion.sum();
  if (r.total == 0) throw ShapeError("no labelled units to evaluate");
  const auto k = confusion.rows();
  r.gpa = static_cast<double>(confusion.trace()) / static_cast<double>(r.total);

  double recall_sum = 0.0;
  int recall_classes = 0;
  double iou_sum = 0.0;
  int iou_classes = 0;
  r.per_class_iou.assign(static_cast<std::size_t>(k), std::nullopt);
  for (Eigen::Index c = 0; c < k; ++c) {
    const std::int64_t tp = confusion(c, c);
    const std::int64_t gt = confusion.row(c).sum();
    const std::int64_t pred = confusion.col(c).sum();
    if (gt > 0) {
      recall_sum += static_cast<double>(tp) / static_cast<double>(gt);
      ++recall_classes;
    }
    const std::int64_t uni = gt + pred - tp;
    if (uni > 0) {
      const double iou = static_cast<double>(tp) / static_cast<double>(uni);
      r.per_class_iou[static_cast<std::size_t>(c)] = iou;
      iou_sum += iou;
      ++iou_classes;
    }
  }
  r.aca = recall_sum / recall_classes;
  r.mean_iou = iou_sum / iou_classes;
  return r;
}

MetricsReport evaluate_labels(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted, int classes) {
  Confusion confusion = Confusion::Zero(classes, classes);
  accumulate_confusion(confusion, truth, predicted);
  return metrics_from_confusion(confusion);
}

template <class Scalar>
MetricsReport evaluate(const ModelConfig& config, const ModelParams<Scalar>& params, const Dataset& data, int threads) {
  if (data.empty()) throw ShapeError("evaluation dataset is empty");
  for (const Sample& s : data) {
    validate_sample(s, config.classes);
    if (s.channels() != config.in_channels) throw ShapeError("sample channel count does not match the model");
  }
  std::vector<std::vector<std::uint8_t>> predictions(data.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < data.size(); i += stride) {
      const ForwardTrace<Scalar> trace = model_forward(features_as<Scalar>(data[i]), data[i].dims, config, params);
      predictions[i] = predict_labels(trace.probs);
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), data.size());
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  Confusion confusion = Confusion::Zero(config.classes, config.classes);
  for (std::size_t i = 0; i < data.size(); ++i) accumulate_confusion(confusion, data[i].labels, predictions[i]);
  return metrics_from_confusion(confusion);
}

template <class Scalar>
TrainResult<Scalar> train(const ModelConfig& config, ModelParams<Scalar> params, const Dataset& train_set,
                          const Dataset& validation_set, const TrainConfig& cfg, int eval_threads,
                          const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  config.validate();
  check_params(config, params);
  for (const Sample& s : train_set) {
    validate_sample(s, config.classes);
    if (s.channels() != config.in_channels) throw ShapeError("sample channel count does not match the model");
  }
  TrainResult<Scalar> result{std::move(params), {}};
  if (cfg.epochs > 0 && train_set.empty()) throw ShapeError("training set is empty");

  // Separate stream from the one that usually initialises the parameters.
  Rng rng(cfg.seed ^ 0xa0761d6478bd642fULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.rates = lr_schedule(epoch, cfg);
    rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      ModelParams<Scalar> batch_grads;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = train_set[order[i]];
        const ForwardTrace<Scalar> trace = model_forward(features_as<Scalar>(s), s.dims, config, result.params);
        BackwardResult<Scalar> back = model_backward(trace, s.labels, config, result.params);
        if (!std::isfinite(static_cast<double>(back.loss))) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(order[i]));
        }
        loss_sum += static_cast<double>(back.loss);
        if (i == start) {
          batch_grads = std::move(back.grads);
        } else {
          zip_tensors(batch_grads, back.grads, [](auto& a, const auto& b, ParamGroup) { a += b; });
        }
      }
      if (end - start > 1) {
        const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(end - start));
        zip_tensors(batch_grads, batch_grads, [inv](auto& a, const auto&, ParamGroup) { a *= inv; });
      }
      sgd_step(result.params, batch_grads, record.rates, cfg.clip_threshold);
    }
    record.loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    if (!validation_set.empty()) record.validation = evaluate(config, result.params, validation_set, eval_threads);
    if (on_epoch) on_epoch(record);
    result.history.epochs.push_back(std::move(record));
  }
  return result;
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

GridDims gradient_check_dims(Variant variant) { return variant == Variant::Chain ? GridDims{1, 12} : GridDims{3, 4}; }

GradientCheckReport gradient_check(const ModelConfig& config, GridDims dims, std::uint64_t seed, double eps, double tol,
                                   const std::function<void(ModelParams<double>&)>& tamper) {
  config.validate();
  Rng rng(seed);
  ModelParams<double> params = init_params<double>(config, rng);
  // Non-zero biases so every parameter sees a generic point.
  for_each_tensor(params, [&rng](const std::string&, auto& t, ParamGroup) {
    if constexpr (std::decay_t<decltype(t)>::ColsAtCompileTime == 1) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t[i] += rng.uniform(-0.1, 0.1);
    }
  });
  Mat<double> features(static_cast<Eigen::Index>(dims.units()), config.in_channels);
  for (Eigen::Index i = 0; i < features.size(); ++i) features.data()[i] = rng.normal();
  std::vector<std::uint8_t> labels(dims.units());
  for (auto& y : labels) y = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(config.classes)));

  const ForwardTrace<double> trace = model_forward(features, dims, config, params);
  BackwardResult<double> back = model_backward(trace, labels, config, params);
  if (tamper) tamper(back.grads);
  const Vec<double> analytic = flatten(back.grads);

  ModelParams<double> probe = params;
  const auto loss = [&](const Vec<double>& flat) {
    unflatten(flat, probe);
    const ForwardTrace<double> t = model_forward(features, dims, config, probe);
    return mean_cross_entropy(t.logits, labels);
  };
  const Vec<double> numeric = finite_difference_grad(loss, flatten(params), eps);

  GradientCheckReport report;
  report.total = static_cast<std::size_t>(analytic.size());
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) + std::abs(numeric[i]) <= kGradCheckFloor) continue;
    ++report.compared;
    const double err = relative_error(analytic[i], numeric[i]);
    if (report.compared == 1 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = static_cast<std::size_t>(i);
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric[i];
    }
  }
  report.worst_coordinate = describe_coordinate(params, report.worst_index);
  report.passed = report.max_relative_error < tol;
  return report;
}

#define DDRNN_INSTANTIATE_TRAINING(S)                                                                                \
  template double gradient_norm<S>(const ModelParams<S>&);                                                          \
  template void sgd_step<S>(ModelParams<S>&, const ModelParams<S>&, LearningRates, std::optional<double>);          \
  template MetricsReport evaluate<S>(const ModelConfig&, const ModelParams<S>&, const Dataset&, int);               \
  template TrainResult<S> train<S>(const ModelConfig&, ModelParams<S>, const Dataset&, const Dataset&,              \
                                   const TrainConfig&, int, const std::function<void(const EpochRecord&)>&);

DDRNN_INSTANTIATE_TRAINING(float)
DDRNN_INSTANTIATE_TRAINING(double)

#undef DDRNN_INSTANTIATE_TRAINING

}  // namespace ddrnn
