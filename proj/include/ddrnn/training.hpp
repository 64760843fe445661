#ifndef DDRNN_TRAINING_HPP
#define DDRNN_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddrnn/data.hpp"
#include "ddrnn/model.hpp"

namespace ddrnn {

struct TrainConfig {
  double lr_rnn = 1e-2;    // recurrence and output head
  double lr_embed = 1e-4;  // input embedding
  double decay_rate = 0.9;
  int decay_start_epoch = 10;
  int epochs = 0;
  int batch_size = 1;
  std::uint64_t seed = 0;
  std::optional<double> clip_threshold;

  void validate() const;
};

struct LearningRates {
  double rnn = 0.0;
  double embed = 0.0;
};

/// rate = initial * decay_rate^max(0, epoch - decay_start_epoch), epoch 1-based.
LearningRates lr_schedule(int epoch, const TrainConfig& cfg);

template <class Scalar>
double gradient_norm(const ModelParams<Scalar>& grads);

/// p <- p - rate * g, the embedding group using rates.embed and everything
/// else rates.rnn. With a clip threshold the gradient is first rescaled so
/// its global L2 norm does not exceed it.
template <class Scalar>
void sgd_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, LearningRates rates,
              std::optional<double> clip_threshold = std::nullopt);

using Confusion = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MetricsReport {
  double gpa = 0.0;
  double aca = 0.0;
  double mean_iou = 0.0;
  /// Empty for classes absent from both ground truth and prediction.
  std::vector<std::optional<double>> per_class_iou;
  Confusion confusion;  // rows: ground truth, cols: prediction
  std::int64_t total = 0;
};

/// Adds (gt, pred) pairs to the confusion matrix, skipping ignore labels.
void accumulate_confusion(Confusion& confusion, std::span<const std::uint8_t> truth,
                          std::span<const std::uint8_t> predicted);

/// GPA = trace / total; ACA = mean recall over classes present in the
/// ground truth; IoU_c = TP / (TP + FP + FN), averaged over classes present
/// in ground truth or prediction. Throws ShapeError when nothing is counted.
MetricsReport metrics_from_confusion(const Confusion& confusion);

MetricsReport evaluate_labels(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted, int classes);

/// Predicts every sample and scores the predictions. threads > 1 spreads
/// samples across workers; the result does not depend on it.
template <class Scalar>
MetricsReport evaluate(const ModelConfig& config, const ModelParams<Scalar>& params, const Dataset& data,
                       int threads = 1);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch
  LearningRates rates;
  std::optional<MetricsReport> validation;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

template <class Scalar>
struct TrainResult {
  ModelParams<Scalar> params;
  TrainHistory history;
};

/// Seeded SGD. Each epoch shuffles the training set, steps once per batch
/// with scheduled rates, then evaluates the validation set when present.
/// A non-finite loss throws NumericError naming the epoch and sample.
template <class Scalar>
TrainResult<Scalar> train(const ModelConfig& config, ModelParams<Scalar> params, const Dataset& train_set,
                          const Dataset& validation_set, const TrainConfig& cfg, int eval_threads = 1,
                          const std::function<void(const EpochRecord&)>& on_epoch = {});

// Gradient check.

/// |a - n| / max(|a|, |n|)
double relative_error(double analytic, double numeric);

/// Coordinates with |a| + |n| at or below this are not compared.
inline constexpr double kGradCheckFloor = 1e-8;

struct GradientCheckReport {
  bool passed = false;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_coordinate;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t compared = 0;
  std::size_t total = 0;
};

/// 3x4 for the grid variants, 1x12 for Chain (same unit count).
GridDims gradient_check_dims(Variant variant);

/// Builds a random instance of config on dims (double precision), then
/// compares model_backward with central differences over every parameter.
/// tamper, when set, edits the analytic gradient before comparison.
GradientCheckReport gradient_check(const ModelConfig& config, GridDims dims, std::uint64_t seed, double eps, double tol,
                                   const std::function<void(ModelParams<double>&)>& tamper = {});

}  // namespace ddrnn

#endif  // DDRNN_TRAINING_HPP
