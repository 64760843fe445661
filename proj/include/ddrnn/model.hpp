#ifndef DDRNN_MODEL_HPP
#define DDRNN_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddrnn/grid.hpp"
#include "ddrnn/numerics.hpp"

namespace ddrnn {

/// Label value excluded from the loss and from every metric.
inline constexpr std::uint8_t kIgnoreLabel = 255;

inline constexpr int kDeskHidden = 32;
inline constexpr int kPaperHidden = 512;

/// Recurrence flavour.
///   Chain          h_t = relu(U x_t + W h_{t-1} + b), 1xN grids only
///   PlainDag       h_v = relu(U x_v + W sum_{adjacent preds} h_u + b)
///   DenseSum       h_v = relu(U x_v + W sum_{dominating preds} h_u + b)
///   DenseAttention h_v = sum_u w_{v,u} relu(U x_v + W h_u + b),
///                  w_{v,.} = softmax_u(z . relu(U x_v + W h_u + b))
enum class Variant : std::uint8_t { Chain, PlainDag, DenseSum, DenseAttention };

inline constexpr Variant kAllVariants[] = {Variant::Chain, Variant::PlainDag, Variant::DenseSum,
                                           Variant::DenseAttention};

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view text);

struct ModelConfig {
  int in_channels = 4;
  int hidden = kDeskHidden;
  int classes = 4;
  Variant variant = Variant::DenseAttention;
  std::vector<Direction> directions{kAllDirections.begin(), kAllDirections.end()};

  /// Throws ShapeError when the configuration is unusable.
  void validate() const;
};

/// Parameters of one sweep direction. V belongs to the output head but is
/// stored per direction since every direction owns one.
template <class Scalar>
struct DirectionParams {
  Direction dir = Direction::SE;
  Mat<Scalar> U;  // D x D
  Mat<Scalar> W;  // D x D
  Mat<Scalar> V;  // K x D
  Vec<Scalar> b;  // D
  Vec<Scalar> z;  // D, attention scoring vector
};

template <class Scalar>
struct ModelParams {
  Mat<Scalar> embed;       // D x C_in
  Vec<Scalar> embed_bias;  // D
  std::vector<DirectionParams<Scalar>> dirs;
  Vec<Scalar> c;  // K, shared output bias

  static ModelParams zeros(const ModelConfig& config);

  template <class Other>
  ModelParams<Other> cast() const;
};

enum class ParamGroup { Embedding, Recurrent };

/// Visits every parameter tensor in a fixed order:
/// embed, embed_bias, then U, W, b, z, V per direction, then c.
/// f(name, tensor, group) receives a Mat or Vec reference.
template <class Params, class F>
void for_each_tensor(Params& params, F&& f) {
  f(std::string("embed"), params.embed, ParamGroup::Embedding);
  f(std::string("embed_bias"), params.embed_bias, ParamGroup::Embedding);
  for (auto& d : params.dirs) {
    const std::string tag(to_string(d.dir));
    f("U." + tag, d.U, ParamGroup::Recurrent);
    f("W." + tag, d.W, ParamGroup::Recurrent);
    f("b." + tag, d.b, ParamGroup::Recurrent);
    f("z." + tag, d.z, ParamGroup::Recurrent);
    f("V." + tag, d.V, ParamGroup::Recurrent);
  }
  f(std::string("c"), params.c, ParamGroup::Recurrent);
}

template <class Scalar>
template <class Other>
ModelParams<Other> ModelParams<Scalar>::cast() const {
  ModelParams<Other> out;
  out.embed = embed.template cast<Other>();
  out.embed_bias = embed_bias.template cast<Other>();
  out.c = c.template cast<Other>();
  for (const auto& d : dirs) {
    out.dirs.push_back({d.dir, d.U.template cast<Other>(), d.W.template cast<Other>(),
                        d.V.template cast<Other>(), d.b.template cast<Other>(), d.z.template cast<Other>()});
  }
  return out;
}

/// Largest number of predecessor states one recurrence step adds up on dims:
/// 3 for PlainDag (1 on a single row or column), H*W - 1 for DenseSum, and 1
/// for Chain and DenseAttention, whose step sees one state or a convex
/// combination.
std::size_t recurrent_fan(Variant variant, GridDims dims);

/// Fan-scaled uniform init: every matrix entry (z counts as a 1 x D matrix)
/// is drawn from [-s, s], s = sqrt(6 / (fan_in + fan_out)). Biases are zero.
/// With a grid, the range of W is further divided by recurrent_fan so the
/// summed recurrences start out contractive on that grid.
template <class Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, Rng& rng, std::optional<GridDims> grid = std::nullopt);

/// Throws ShapeError unless params match config.
template <class Scalar>
void check_params(const ModelConfig& config, const ModelParams<Scalar>& params);

template <class Scalar>
std::size_t parameter_count(const ModelParams<Scalar>& params);

template <class Scalar>
Vec<Scalar> flatten(const ModelParams<Scalar>& params);

template <class Scalar>
void unflatten(const Vec<Scalar>& flat, ModelParams<Scalar>& params);

/// Human-readable name of a flat coordinate, e.g. "W.se[3,1]".
template <class Scalar>
std::string describe_coordinate(const ModelParams<Scalar>& params, std::size_t index);

/// Sequential topological sweep, or anti-diagonal levels with optional
/// threads inside each level. Both give bitwise-identical results.
struct RecurrenceOptions {
  bool wavefront = false;
  int threads = 1;
};

/// Cached quantities of one direction's recurrence, enough to run the
/// backward pass. Unit-indexed matrices use unreflected row-major order;
/// pair arrays are indexed by topological position.
template <class Scalar>
struct DirectionTrace {
  Direction dir = Direction::SE;
  Variant variant = Variant::PlainDag;
  Mat<Scalar> hidden;  // N x D
  Mat<Scalar> drive;   // N x D, U x + b

  // Chain, PlainDag, DenseSum
  Mat<Scalar> pred_sum;  // N x D
  Mat<Scalar> pre;       // N x D, drive + W pred_sum

  // DenseAttention. Position k owns pairs [pair_offset[k], pair_offset[k+1]);
  // a vertex without predecessors owns one pair against a zero state.
  std::vector<std::size_t> pair_offset;
  Mat<Scalar> pair_act;     // P x D
  Vec<Scalar> pair_score;   // P
  Vec<Scalar> pair_weight;  // P
  Mat<Scalar> projected;    // N x D, W h
};

template <class Scalar>
struct HeadOutput {
  Mat<Scalar> logits;  // N x K
  Mat<Scalar> probs;   // N x K
};

template <class Scalar>
struct ForwardTrace {
  GridDims dims;
  Mat<Scalar> raw;       // N x C_in
  Mat<Scalar> embedded;  // N x D
  std::vector<DirectionTrace<Scalar>> dirs;
  Mat<Scalar> logits;
  Mat<Scalar> probs;
};

template <class Scalar>
struct BackwardResult {
  ModelParams<Scalar> grads;
  Scalar loss = Scalar(0);
  std::size_t counted_units = 0;
};

/// Per-unit affine map of raw channels (N x C_in) into the hidden space.
template <class Scalar>
Mat<Scalar> embed(const Mat<Scalar>& features, const ModelParams<Scalar>& params);

/// Reference recurrence over a sequence; the first step sees a zero state.
template <class Scalar>
std::vector<Vec<Scalar>> chain_forward(const std::vector<Vec<Scalar>>& xs, const DirectionParams<Scalar>& p);

template <class Scalar>
DirectionTrace<Scalar> plain_dag_forward(const Mat<Scalar>& x, const PlainDag& dag, const DirectionParams<Scalar>& p,
                                         RecurrenceOptions opts = {});

template <class Scalar>
DirectionTrace<Scalar> dense_sum_forward(const Mat<Scalar>& x, const DenseDag& dag, const DirectionParams<Scalar>& p,
                                         RecurrenceOptions opts = {});

/// relu(U x_v + W h_u + b) for one predecessor.
template <class Scalar>
Vec<Scalar> attention_pairwise(const Vec<Scalar>& x_v, const Vec<Scalar>& h_u, const DirectionParams<Scalar>& p);

/// softmax_u(z . pairwise_u); the list must be non-empty.
template <class Scalar>
Vec<Scalar> attention_weights(const std::vector<Vec<Scalar>>& pairwise, const Vec<Scalar>& z);

template <class Scalar>
Vec<Scalar> attention_combine(const std::vector<Vec<Scalar>>& pairwise, const Vec<Scalar>& weights);

template <class Scalar>
DirectionTrace<Scalar> dense_attention_forward(const Mat<Scalar>& x, const DenseDag& dag,
                                               const DirectionParams<Scalar>& p, RecurrenceOptions opts = {});

/// Runs the recurrence selected by variant; Chain needs a single-row grid.
template <class Scalar>
DirectionTrace<Scalar> direction_forward(const Mat<Scalar>& x, GridDims dims, Variant variant,
                                         const DirectionParams<Scalar>& p, RecurrenceOptions opts = {});

/// logits_v = sum_l V^l h^l_v + c, followed by a softmax over classes.
template <class Scalar>
HeadOutput<Scalar> aggregate_logits(const std::vector<Mat<Scalar>>& hiddens, const ModelParams<Scalar>& params);

template <class Scalar>
ForwardTrace<Scalar> model_forward(const Mat<Scalar>& features, GridDims dims, const ModelConfig& config,
                                   const ModelParams<Scalar>& params, RecurrenceOptions opts = {});

/// Mean pixel-wise cross-entropy over units whose label is not kIgnoreLabel,
/// with exact gradients for every parameter.
template <class Scalar>
BackwardResult<Scalar> model_backward(const ForwardTrace<Scalar>& trace, std::span<const std::uint8_t> labels,
                                      const ModelConfig& config, const ModelParams<Scalar>& params);

/// The loss model_backward would report, without gradients. Computed from
/// the logits so a vanishing probability still gives a finite loss.
template <class Scalar>
Scalar mean_cross_entropy(const Mat<Scalar>& logits, std::span<const std::uint8_t> labels);

/// Per-unit argmax, ties resolved to the lowest class index.
template <class Scalar>
std::vector<std::uint8_t> predict_labels(const Mat<Scalar>& probs);

}  // namespace ddrnn

#endif  // DDRNN_MODEL_HPP
