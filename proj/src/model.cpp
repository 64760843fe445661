#include "ddrnn/model.hpp"

#include <algorithm>
#include <thread>

#include "ddrnn/errors.hpp"

namespace ddrnn {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Chain: return "chain";
    case Variant::PlainDag: return "plain-dag";
    case Variant::DenseSum: return "dense-sum";
    case Variant::DenseAttention: return "dense-attention";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view text) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == text) return v;
  }
  return std::nullopt;
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw ShapeError("in_channels must be >= 1");
  if (hidden < 1) throw ShapeError("hidden dimension must be >= 1");
  if (classes < 2) throw ShapeError("class count must be >= 2");
  if (classes > 255) throw ShapeError("class count must fit below the ignore label");
  if (directions.empty()) throw ShapeError("at least one direction is required");
  for (std::size_t i = 0; i < directions.size(); ++i) {
    for (std::size_t j = i + 1; j < directions.size(); ++j) {
      if (directions[i] == directions[j]) throw ShapeError("duplicate direction in config");
    }
  }
}

namespace {

template <class Scalar>
Scalar* row_ptr(Mat<Scalar>& m, std::size_t i) {
  return m.data() + static_cast<Eigen::Index>(i) * m.cols();
}

template <class Scalar>
const Scalar* row_ptr(const Mat<Scalar>& m, std::size_t i) {
  return m.data() + static_cast<Eigen::Index>(i) * m.cols();
}

// Runs step(k) for every topological position, either sequentially or level
// by level. Vertices of one level never read each other's outputs.
template <class Step>
void run_schedule(const GridOrder& order, const RecurrenceOptions& opts, Step&& step) {
  if (!opts.wavefront) {
    for (std::size_t k = 0; k < order.size(); ++k) step(k);
    return;
  }
  const WavefrontSchedule schedule = wavefronts(order);
  for (const auto& level : schedule.positions) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(opts.threads, 1)), level.size());
    if (workers <= 1) {
      for (std::size_t k : level) step(k);
      continue;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < level.size(); i += workers) step(level[i]);
      });
    }
    for (auto& t : pool) t.join();
  }
}

template <class Scalar>
void check_input(const Mat<Scalar>& x, const GridOrder& order, const DirectionParams<Scalar>& p) {
  if (static_cast<std::size_t>(x.rows()) != order.size()) {
    throw ShapeError("recurrence input has " + std::to_string(x.rows()) + " units, grid has " +
                     std::to_string(order.size()));
  }
  if (x.cols() != p.U.cols() || p.U.rows() != p.W.rows() || p.W.rows() != p.W.cols() || p.b.size() != p.U.rows()) {
    throw ShapeError("recurrence parameter shapes do not match the input width");
  }
}

// drive_v = U x_v + b
template <class Scalar>
Mat<Scalar> compute_drive(const Mat<Scalar>& x, const DirectionParams<Scalar>& p) {
  const Eigen::Index d = p.U.rows();
  Mat<Scalar> drive(x.rows(), d);
  for (Eigen::Index v = 0; v < x.rows(); ++v) {
    Scalar* out = row_ptr(drive, static_cast<std::size_t>(v));
    detail::matvec_into(p.U, row_ptr(x, static_cast<std::size_t>(v)), out);
    for (Eigen::Index i = 0; i < d; ++i) out[i] += p.b[i];
  }
  return drive;
}

// Shared kernel of Chain, PlainDag and DenseSum:
//   h_v = relu(drive_v + W sum_{u in preds(v)} h_u)
template <class Scalar, class ForEachPred>
DirectionTrace<Scalar> sum_recurrence(const Mat<Scalar>& x, const GridOrder& order, Variant variant,
                                      const DirectionParams<Scalar>& p, const RecurrenceOptions& opts,
                                      ForEachPred&& for_each_pred) {
  check_input(x, order, p);
  const Eigen::Index n = x.rows();
  const Eigen::Index d = p.U.rows();
  DirectionTrace<Scalar> t;
  t.dir = order.direction();
  t.variant = variant;
  t.drive = compute_drive(x, p);
  t.hidden = Mat<Scalar>::Zero(n, d);
  t.pred_sum = Mat<Scalar>::Zero(n, d);
  t.pre = Mat<Scalar>(n, d);
  const auto& gi = order.topo_grid_index();

  run_schedule(order, opts, [&](std::size_t k) {
    const std::size_t g = gi[k];
    Scalar* hat = row_ptr(t.pred_sum, g);
    for_each_pred(k, [&](std::size_t pk) {
      const Scalar* hu = row_ptr(t.hidden, gi[pk]);
      for (Eigen::Index i = 0; i < d; ++i) hat[i] += hu[i];
    });
    Scalar* pre = row_ptr(t.pre, g);
    detail::matvec_into(p.W, hat, pre);
    const Scalar* drv = row_ptr(t.drive, g);
    Scalar* h = row_ptr(t.hidden, g);
    for (Eigen::Index i = 0; i < d; ++i) {
      pre[i] = drv[i] + pre[i];
      h[i] = pre[i] > Scalar(0) ? pre[i] : Scalar(0);
    }
  });
  return t;
}

template <class Scalar, class ForEachPred>
void sum_backward(const DirectionTrace<Scalar>& t, const GridOrder& order, const Mat<Scalar>& x,
                  const DirectionParams<Scalar>& p, DirectionParams<Scalar>& grad, Mat<Scalar>& dh, Mat<Scalar>& dx,
                  ForEachPred&& for_each_pred) {
  const Eigen::Index d = p.U.rows();
  const auto& gi = order.topo_grid_index();
  Vec<Scalar> dpre(d);
  Vec<Scalar> dhat(d);
  for (std::size_t k = order.size(); k-- > 0;) {
    const std::size_t g = gi[k];
    const Scalar* pre = row_ptr(t.pre, g);
    const Scalar* dhg = row_ptr(dh, g);
    for (Eigen::Index i = 0; i < d; ++i) dpre[i] = pre[i] > Scalar(0) ? dhg[i] : Scalar(0);

    detail::outer_add(grad.W, dpre.data(), row_ptr(t.pred_sum, g));
    dhat.setZero();
    detail::matvec_transpose_add(p.W, dpre.data(), dhat.data());
    for_each_pred(k, [&](std::size_t pk) {
      Scalar* dhu = row_ptr(dh, gi[pk]);
      for (Eigen::Index i = 0; i < d; ++i) dhu[i] += dhat[i];
    });

    detail::outer_add(grad.U, dpre.data(), row_ptr(x, g));
    grad.b += dpre;
    detail::matvec_transpose_add(p.U, dpre.data(), row_ptr(dx, g));
  }
}

template <class Scalar>
void attention_backward(const DirectionTrace<Scalar>& t, const DenseDag& dag, const Mat<Scalar>& x,
                        const DirectionParams<Scalar>& p, DirectionParams<Scalar>& grad, Mat<Scalar>& dh,
                        Mat<Scalar>& dx) {
  const Eigen::Index d = p.U.rows();
  const auto& gi = dag.topo_grid_index();
  // Gradient w.r.t. W h_u, filled in by successors before u is visited.
  Mat<Scalar> dproj = Mat<Scalar>::Zero(x.rows(), d);
  Vec<Scalar> ddrive(d);
  Vec<Scalar> dpre(d);

  for (std::size_t k = dag.size(); k-- > 0;) {
    const std::size_t g = gi[k];
    Scalar* dhg = row_ptr(dh, g);
    const Scalar* dpg = row_ptr(dproj, g);
    detail::matvec_transpose_add(p.W, dpg, dhg);
    detail::outer_add(grad.W, dpg, row_ptr(t.hidden, g));

    const std::size_t off = t.pair_offset[k];
    const std::size_t count = t.pair_offset[k + 1] - off;
    Scalar mean_s = Scalar(0);
    std::vector<Scalar> s(count);
    for (std::size_t j = 0; j < count; ++j) {
      s[j] = detail::dot(dhg, row_ptr(t.pair_act, off + j), d);
      mean_s += t.pair_weight[static_cast<Eigen::Index>(off + j)] * s[j];
    }

    ddrive.setZero();
    auto visit_pair = [&](std::size_t j, const std::size_t* pred_grid) {
      const Scalar w = t.pair_weight[static_cast<Eigen::Index>(off + j)];
      const Scalar dscore = w * (s[j] - mean_s);
      const Scalar* a = row_ptr(t.pair_act, off + j);
      for (Eigen::Index i = 0; i < d; ++i) {
        grad.z[i] += dscore * a[i];
        dpre[i] = a[i] > Scalar(0) ? w * dhg[i] + dscore * p.z[i] : Scalar(0);
        ddrive[i] += dpre[i];
      }
      if (pred_grid != nullptr) {
        Scalar* dpu = row_ptr(dproj, *pred_grid);
        for (Eigen::Index i = 0; i < d; ++i) dpu[i] += dpre[i];
      }
    };
    if (dag.pred_count_at(k) == 0) {
      visit_pair(0, nullptr);
    } else {
      std::size_t j = 0;
      dag.for_each_pred_position(k, [&](std::size_t pk) {
        const std::size_t pg = gi[pk];
        visit_pair(j++, &pg);
      });
    }

    detail::outer_add(grad.U, ddrive.data(), row_ptr(x, g));
    grad.b += ddrive;
    detail::matvec_transpose_add(p.U, ddrive.data(), row_ptr(dx, g));
  }
}

auto chain_preds() {
  return [](std::size_t k, auto&& f) {
    if (k > 0) f(k - 1);
  };
}

auto plain_preds(const PlainDag& dag) {
  return [&dag](std::size_t k, auto&& f) {
    std::array<std::size_t, 3> pos{};
    const int n = dag.pred_positions(k, pos);
    for (int i = 0; i < n; ++i) f(pos[static_cast<std::size_t>(i)]);
  };
}

auto dense_preds(const DenseDag& dag) {
  return [&dag](std::size_t k, auto&& f) { dag.for_each_pred_position(k, f); };
}

void require_chain_grid(GridDims dims) {
  if (dims.rows != 1) {
    throw ShapeError("chain variant needs a 1xN grid, got " + std::to_string(dims.rows) + "x" +
                     std::to_string(dims.cols));
  }
}

template <class Scalar>
HeadOutput<Scalar> aggregate_impl(const std::vector<const Mat<Scalar>*>& hiddens, const ModelParams<Scalar>& params) {
  if (hiddens.size() != params.dirs.size() || hiddens.empty()) {
    throw ShapeError("aggregate_logits: " + std::to_string(hiddens.size()) + " hidden fields for " +
                     std::to_string(params.dirs.size()) + " directions");
  }
  const Eigen::Index n = hiddens.front()->rows();
  const Eigen::Index k = params.c.size();
  for (std::size_t l = 0; l < hiddens.size(); ++l) {
    if (hiddens[l]->rows() != n || hiddens[l]->cols() != params.dirs[l].V.cols() || params.dirs[l].V.rows() != k) {
      throw ShapeError("aggregate_logits: hidden field shapes disagree");
    }
  }
  HeadOutput<Scalar> out{Mat<Scalar>::Zero(n, k), Mat<Scalar>(n, k)};
  const Eigen::Index d = hiddens.front()->cols();
  for (Eigen::Index v = 0; v < n; ++v) {
    Scalar* logit = row_ptr(out.logits, static_cast<std::size_t>(v));
    for (std::size_t l = 0; l < hiddens.size(); ++l) {
      const Scalar* h = row_ptr(*hiddens[l], static_cast<std::size_t>(v));
      const Mat<Scalar>& vm = params.dirs[l].V;
      for (Eigen::Index c = 0; c < k; ++c) logit[c] += detail::dot(row_ptr(vm, static_cast<std::size_t>(c)), h, d);
    }
    for (Eigen::Index c = 0; c < k; ++c) logit[c] += params.c[c];
    softmax_into(logit, row_ptr(out.probs, static_cast<std::size_t>(v)), k);
  }
  return out;
}

}  // namespace

template <class Scalar>
ModelParams<Scalar> ModelParams<Scalar>::zeros(const ModelConfig& config) {
  const Eigen::Index d = config.hidden;
  const Eigen::Index k = config.classes;
  ModelParams<Scalar> p;
  p.embed = Mat<Scalar>::Zero(d, config.in_channels);
  p.embed_bias = Vec<Scalar>::Zero(d);
  p.c = Vec<Scalar>::Zero(k);
  for (Direction dir : config.directions) {
    p.dirs.push_back({dir, Mat<Scalar>::Zero(d, d), Mat<Scalar>::Zero(d, d), Mat<Scalar>::Zero(k, d),
                      Vec<Scalar>::Zero(d), Vec<Scalar>::Zero(d)});
  }
  return p;
}

std::size_t recurrent_fan(Variant variant, GridDims dims) {
  if (dims.rows < 1 || dims.cols < 1) throw ShapeError("grid dims must be >= 1");
  switch (variant) {
    case Variant::PlainDag: return dims.rows > 1 && dims.cols > 1 ? 3 : 1;
    case Variant::DenseSum: return std::max<std::size_t>(dims.units() - 1, 1);
    case Variant::Chain:
    case Variant::DenseAttention: return 1;
  }
  return 1;
}

template <class Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, Rng& rng, std::optional<GridDims> grid) {
  config.validate();
  ModelParams<Scalar> p = ModelParams<Scalar>::zeros(config);
  auto fill = [&rng](auto& m, double fan_in, double fan_out, double shrink = 1.0) {
    const double s = std::sqrt(6.0 / (fan_in + fan_out)) / shrink;
    Scalar* data = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) data[i] = static_cast<Scalar>(rng.uniform(-s, s));
  };
  const double d = config.hidden;
  fill(p.embed, config.in_channels, d);
  for (auto& dir : p.dirs) {
    fill(dir.U, d, d);
    fill(dir.W, d, d, grid ? static_cast<double>(recurrent_fan(config.variant, *grid)) : 1.0);
    fill(dir.z, d, 1.0);
    fill(dir.V, d, config.classes);
  }
  return p;
}

template <class Scalar>
void check_params(const ModelConfig& config, const ModelParams<Scalar>& params) {
  const Eigen::Index d = config.hidden;
  const Eigen::Index k = config.classes;
  auto fail = [](const std::string& what) { throw ShapeError("parameters do not match config: " + what); };
  if (params.embed.rows() != d || params.embed.cols() != config.in_channels) fail("embed");
  if (params.embed_bias.size() != d) fail("embed_bias");
  if (params.c.size() != k) fail("c");
  if (params.dirs.size() != config.directions.size()) fail("direction count");
  for (std::size_t l = 0; l < params.dirs.size(); ++l) {
    const auto& dp = params.dirs[l];
    const std::string tag(to_string(dp.dir));
    if (dp.dir != config.directions[l]) fail("direction order");
    if (dp.U.rows() != d || dp.U.cols() != d) fail("U." + tag);
    if (dp.W.rows() != d || dp.W.cols() != d) fail("W." + tag);
    if (dp.V.rows() != k || dp.V.cols() != d) fail("V." + tag);
    if (dp.b.size() != d) fail("b." + tag);
    if (dp.z.size() != d) fail("z." + tag);
  }
}

template <class Scalar>
std::size_t parameter_count(const ModelParams<Scalar>& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&n](const std::string&, const auto& t, ParamGroup) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <class Scalar>
Vec<Scalar> flatten(const ModelParams<Scalar>& params) {
  Vec<Scalar> flat(static_cast<Eigen::Index>(parameter_count(params)));
  Eigen::Index at = 0;
  for_each_tensor(params, [&](const std::string&, const auto& t, ParamGroup) {
    std::copy(t.data(), t.data() + t.size(), flat.data() + at);
    at += t.size();
  });
  return flat;
}

template <class Scalar>
void unflatten(const Vec<Scalar>& flat, ModelParams<Scalar>& params) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count(params)) {
    throw ShapeError("unflatten: flat vector length does not match parameter count");
  }
  Eigen::Index at = 0;
  for_each_tensor(params, [&](const std::string&, auto& t, ParamGroup) {
    std::copy(flat.data() + at, flat.data() + at + t.size(), t.data());
    at += t.size();
  });
}

template <class Scalar>
std::string describe_coordinate(const ModelParams<Scalar>& params, std::size_t index) {
  std::string out;
  std::size_t at = 0;
  for_each_tensor(params, [&](const std::string& name, const auto& t, ParamGroup) {
    const std::size_t size = static_cast<std::size_t>(t.size());
    if (out.empty() && index < at + size) {
      const std::size_t local = index - at;
      if constexpr (std::decay_t<decltype(t)>::ColsAtCompileTime == 1) {
        out = name + "[" + std::to_string(local) + "]";
      } else {
        const std::size_t cols = static_cast<std::size_t>(t.cols());
        out = name + "[" + std::to_string(local / cols) + "," + std::to_string(local % cols) + "]";
      }
    }
    at += size;
  });
  return out.empty() ? "<out of range>" : out;
}

template <class Scalar>
Mat<Scalar> embed(const Mat<Scalar>& features, const ModelParams<Scalar>& params) {
  if (features.cols() != params.embed.cols()) {
    throw ShapeError("embed: features have " + std::to_string(features.cols()) + " channels, embedding expects " +
                     std::to_string(params.embed.cols()));
  }
  const Eigen::Index d = params.embed.rows();
  Mat<Scalar> out(features.rows(), d);
  for (Eigen::Index v = 0; v < features.rows(); ++v) {
    Scalar* o = row_ptr(out, static_cast<std::size_t>(v));
    detail::matvec_into(params.embed, row_ptr(features, static_cast<std::size_t>(v)), o);
    for (Eigen::Index i = 0; i < d; ++i) o[i] += params.embed_bias[i];
  }
  return out;
}

template <class Scalar>
std::vector<Vec<Scalar>> chain_forward(const std::vector<Vec<Scalar>>& xs, const DirectionParams<Scalar>& p) {
  std::vector<Vec<Scalar>> hs;
  hs.reserve(xs.size());
  Vec<Scalar> prev = Vec<Scalar>::Zero(p.W.cols());
  for (const auto& x : xs) {
    const Vec<Scalar> pre = (matvec(p.U, x) + p.b) + matvec(p.W, prev);
    hs.push_back(relu(pre).value);
    prev = hs.back();
  }
  return hs;
}

template <class Scalar>
DirectionTrace<Scalar> plain_dag_forward(const Mat<Scalar>& x, const PlainDag& dag, const DirectionParams<Scalar>& p,
                                         RecurrenceOptions opts) {
  return sum_recurrence(x, dag, Variant::PlainDag, p, opts, plain_preds(dag));
}

template <class Scalar>
DirectionTrace<Scalar> dense_sum_forward(const Mat<Scalar>& x, const DenseDag& dag, const DirectionParams<Scalar>& p,
                                         RecurrenceOptions opts) {
  return sum_recurrence(x, dag, Variant::DenseSum, p, opts, dense_preds(dag));
}

template <class Scalar>
Vec<Scalar> attention_pairwise(const Vec<Scalar>& x_v, const Vec<Scalar>& h_u, const DirectionParams<Scalar>& p) {
  const Vec<Scalar> pre = (matvec(p.U, x_v) + p.b) + matvec(p.W, h_u);
  return relu(pre).value;
}

template <class Scalar>
Vec<Scalar> attention_weights(const std::vector<Vec<Scalar>>& pairwise, const Vec<Scalar>& z) {
  if (pairwise.empty()) throw ShapeError("attention_weights: empty predecessor list");
  Vec<Scalar> scores(static_cast<Eigen::Index>(pairwise.size()));
  for (std::size_t j = 0; j < pairwise.size(); ++j) {
    if (pairwise[j].size() != z.size()) throw ShapeError("attention_weights: pairwise/z size mismatch");
    scores[static_cast<Eigen::Index>(j)] = detail::dot(z.data(), pairwise[j].data(), z.size());
  }
  return softmax(scores);
}

template <class Scalar>
Vec<Scalar> attention_combine(const std::vector<Vec<Scalar>>& pairwise, const Vec<Scalar>& weights) {
  if (pairwise.empty() || static_cast<Eigen::Index>(pairwise.size()) != weights.size()) {
    throw ShapeError("attention_combine: " + std::to_string(pairwise.size()) + " vectors for " +
                     std::to_string(weights.size()) + " weights");
  }
  Vec<Scalar> h = Vec<Scalar>::Zero(pairwise.front().size());
  for (std::size_t j = 0; j < pairwise.size(); ++j) {
    const Scalar w = weights[static_cast<Eigen::Index>(j)];
    for (Eigen::Index i = 0; i < h.size(); ++i) h[i] += w * pairwise[j][i];
  }
  return h;
}

template <class Scalar>
DirectionTrace<Scalar> dense_attention_forward(const Mat<Scalar>& x, const DenseDag& dag,
                                               const DirectionParams<Scalar>& p, RecurrenceOptions opts) {
  check_input(x, dag, p);
  if (p.z.size() != p.U.rows()) throw ShapeError("attention vector z has the wrong size");
  const Eigen::Index n = x.rows();
  const Eigen::Index d = p.U.rows();
  DirectionTrace<Scalar> t;
  t.dir = dag.direction();
  t.variant = Variant::DenseAttention;
  t.drive = compute_drive(x, p);
  t.hidden = Mat<Scalar>::Zero(n, d);
  t.projected = Mat<Scalar>(n, d);

  t.pair_offset.resize(dag.size() + 1);
  t.pair_offset[0] = 0;
  for (std::size_t k = 0; k < dag.size(); ++k) {
    t.pair_offset[k + 1] = t.pair_offset[k] + std::max<std::size_t>(1, dag.pred_count_at(k));
  }
  const auto pairs = static_cast<Eigen::Index>(t.pair_offset.back());
  t.pair_act = Mat<Scalar>(pairs, d);
  t.pair_score = Vec<Scalar>(pairs);
  t.pair_weight = Vec<Scalar>(pairs);
  const auto& gi = dag.topo_grid_index();

  run_schedule(dag, opts, [&](std::size_t k) {
    const std::size_t g = gi[k];
    const std::size_t off = t.pair_offset[k];
    const std::size_t count = t.pair_offset[k + 1] - off;
    const Scalar* drv = row_ptr(t.drive, g);
    if (dag.pred_count_at(k) == 0) {
      // One virtual predecessor with a zero hidden state.
      Scalar* a = row_ptr(t.pair_act, off);
      for (Eigen::Index i = 0; i < d; ++i) a[i] = drv[i] > Scalar(0) ? drv[i] : Scalar(0);
    } else {
      std::size_t j = off;
      dag.for_each_pred_position(k, [&](std::size_t pk) {
        const Scalar* proj = row_ptr(t.projected, gi[pk]);
        Scalar* a = row_ptr(t.pair_act, j++);
        for (Eigen::Index i = 0; i < d; ++i) {
          const Scalar pre = drv[i] + proj[i];
          a[i] = pre > Scalar(0) ? pre : Scalar(0);
        }
      });
    }
    Scalar* score = t.pair_score.data() + off;
    Scalar* weight = t.pair_weight.data() + off;
    for (std::size_t j = 0; j < count; ++j) score[j] = detail::dot(p.z.data(), row_ptr(t.pair_act, off + j), d);
    softmax_into(score, weight, static_cast<Eigen::Index>(count));

    Scalar* h = row_ptr(t.hidden, g);
    for (std::size_t j = 0; j < count; ++j) {
      const Scalar* a = row_ptr(t.pair_act, off + j);
      for (Eigen::Index i = 0; i < d; ++i) h[i] += weight[j] * a[i];
    }
    detail::matvec_into(p.W, h, row_ptr(t.projected, g));
  });
  return t;
}

template <class Scalar>
DirectionTrace<Scalar> direction_forward(const Mat<Scalar>& x, GridDims dims, Variant variant,
                                         const DirectionParams<Scalar>& p, RecurrenceOptions opts) {
  switch (variant) {
    case Variant::Chain: {
      require_chain_grid(dims);
      const GridOrder order(dims, p.dir);
      return sum_recurrence(x, order, Variant::Chain, p, opts, chain_preds());
    }
    case Variant::PlainDag: return plain_dag_forward(x, build_plain_dag(dims, p.dir), p, opts);
    case Variant::DenseSum: return dense_sum_forward(x, build_dense_dag(dims, p.dir), p, opts);
    case Variant::DenseAttention: return dense_attention_forward(x, build_dense_dag(dims, p.dir), p, opts);
  }
  throw ShapeError("unknown variant");
}

template <class Scalar>
HeadOutput<Scalar> aggregate_logits(const std::vector<Mat<Scalar>>& hiddens, const ModelParams<Scalar>& params) {
  std::vector<const Mat<Scalar>*> ptrs;
  for (const auto& h : hiddens) ptrs.push_back(&h);
  return aggregate_impl(ptrs, params);
}

template <class Scalar>
ForwardTrace<Scalar> model_forward(const Mat<Scalar>& features, GridDims dims, const ModelConfig& config,
                                   const ModelParams<Scalar>& params, RecurrenceOptions opts) {
  config.validate();
  check_params(config, params);
  if (static_cast<std::size_t>(features.rows()) != dims.units() || features.cols() != config.in_channels) {
    throw ShapeError("features are " + std::to_string(features.rows()) + "x" + std::to_string(features.cols()) +
                     ", expected " + std::to_string(dims.units()) + "x" + std::to_string(config.in_channels));
  }
  ForwardTrace<Scalar> trace;
  trace.dims = dims;
  trace.raw = features;
  trace.embedded = embed(features, params);
  std::vector<const Mat<Scalar>*> hiddens;
  trace.dirs.reserve(params.dirs.size());
  for (const auto& dp : params.dirs) {
    trace.dirs.push_back(direction_forward(trace.embedded, dims, config.variant, dp, opts));
  }
  for (const auto& dt : trace.dirs) hiddens.push_back(&dt.hidden);
  HeadOutput<Scalar> head = aggregate_impl(hiddens, params);
  trace.logits = std::move(head.logits);
  trace.probs = std::move(head.probs);
  return trace;
}

template <class Scalar>
Scalar mean_cross_entropy(const Mat<Scalar>& logits, std::span<const std::uint8_t> labels) {
  if (labels.size() != static_cast<std::size_t>(logits.rows())) throw ShapeError("label map size mismatch");
  Scalar total = Scalar(0);
  std::size_t count = 0;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (labels[v] == kIgnoreLabel) continue;
    if (labels[v] >= logits.cols()) throw ShapeError("label " + std::to_string(labels[v]) + " exceeds class count");
    const auto row = logits.row(static_cast<Eigen::Index>(v));
    const Scalar top = row.maxCoeff();
    total += top + std::log((row.array() - top).exp().sum()) - row(labels[v]);
    ++count;
  }
  return count == 0 ? Scalar(0) : total / static_cast<Scalar>(count);
}

template <class Scalar>
BackwardResult<Scalar> model_backward(const ForwardTrace<Scalar>& trace, std::span<const std::uint8_t> labels,
                                      const ModelConfig& config, const ModelParams<Scalar>& params) {
  check_params(config, params);
  const Eigen::Index n = trace.probs.rows();
  const Eigen::Index k = trace.probs.cols();
  const Eigen::Index d = config.hidden;
  if (trace.dirs.size() != params.dirs.size() || k != config.classes || trace.raw.rows() != n ||
      static_cast<std::size_t>(n) != trace.dims.units()) {
    throw ShapeError("trace does not belong to these parameters");
  }
  for (std::size_t l = 0; l < trace.dirs.size(); ++l) {
    if (trace.dirs[l].dir != params.dirs[l].dir || trace.dirs[l].variant != config.variant ||
        trace.dirs[l].hidden.cols() != d) {
      throw ShapeError("trace does not belong to these parameters");
    }
  }

  BackwardResult<Scalar> r;
  r.grads = ModelParams<Scalar>::zeros(config);
  r.loss = mean_cross_entropy(trace.logits, labels);
  for (std::uint8_t y : labels) r.counted_units += (y != kIgnoreLabel) ? 1 : 0;
  if (r.counted_units == 0) return r;

  const Scalar inv = Scalar(1) / static_cast<Scalar>(r.counted_units);
  Mat<Scalar> dlogits = Mat<Scalar>::Zero(n, k);
  for (Eigen::Index v = 0; v < n; ++v) {
    const std::uint8_t y = labels[static_cast<std::size_t>(v)];
    if (y == kIgnoreLabel) continue;
    for (Eigen::Index c = 0; c < k; ++c) dlogits(v, c) = trace.probs(v, c) * inv;
    dlogits(v, y) -= inv;
    r.grads.c += dlogits.row(v).transpose();
  }

  Mat<Scalar> dx = Mat<Scalar>::Zero(n, d);
  for (std::size_t l = 0; l < trace.dirs.size(); ++l) {
    const DirectionTrace<Scalar>& t = trace.dirs[l];
    const DirectionParams<Scalar>& p = params.dirs[l];
    DirectionParams<Scalar>& g = r.grads.dirs[l];
    Mat<Scalar> dh = Mat<Scalar>::Zero(n, d);
    for (Eigen::Index v = 0; v < n; ++v) {
      const Scalar* dl = row_ptr(dlogits, static_cast<std::size_t>(v));
      detail::outer_add(g.V, dl, row_ptr(t.hidden, static_cast<std::size_t>(v)));
      detail::matvec_transpose_add(p.V, dl, row_ptr(dh, static_cast<std::size_t>(v)));
    }
    switch (config.variant) {
      case Variant::Chain: {
        const GridOrder order(trace.dims, p.dir);
        sum_backward(t, order, trace.embedded, p, g, dh, dx, chain_preds());
        break;
      }
      case Variant::PlainDag: {
        const PlainDag dag(trace.dims, p.dir);
        sum_backward(t, dag, trace.embedded, p, g, dh, dx, plain_preds(dag));
        break;
      }
      case Variant::DenseSum: {
        const DenseDag dag(trace.dims, p.dir);
        sum_backward(t, dag, trace.embedded, p, g, dh, dx, dense_preds(dag));
        break;
      }
      case Variant::DenseAttention: {
        const DenseDag dag(trace.dims, p.dir);
        attention_backward(t, dag, trace.embedded, p, g, dh, dx);
        break;
      }
    }
  }

  for (Eigen::Index v = 0; v < n; ++v) {
    const Scalar* dxv = row_ptr(dx, static_cast<std::size_t>(v));
    detail::outer_add(r.grads.embed, dxv, row_ptr(trace.raw, static_cast<std::size_t>(v)));
    for (Eigen::Index i = 0; i < d; ++i) r.grads.embed_bias[i] += dxv[i];
  }
  return r;
}

template <class Scalar>
std::vector<std::uint8_t> predict_labels(const Mat<Scalar>& probs) {
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index v = 0; v < probs.rows(); ++v) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(v, c) > probs(v, best)) best = c;
    }
    labels[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(best);
  }
  return labels;
}

#define DDRNN_INSTANTIATE_MODEL(S)                                                                                   \
  template struct ModelParams<S>;                                                                                   \
  template ModelParams<S> init_params<S>(const ModelConfig&, Rng&, std::optional<GridDims>);                        \
  template void check_params<S>(const ModelConfig&, const ModelParams<S>&);                                         \
  template std::size_t parameter_count<S>(const ModelParams<S>&);                                                   \
  template Vec<S> flatten<S>(const ModelParams<S>&);                                                                \
  template void unflatten<S>(const Vec<S>&, ModelParams<S>&);                                                       \
  template std::string describe_coordinate<S>(const ModelParams<S>&, std::size_t);                                  \
  template Mat<S> embed<S>(const Mat<S>&, const ModelParams<S>&);                                                   \
  template std::vector<Vec<S>> chain_forward<S>(const std::vector<Vec<S>>&, const DirectionParams<S>&);             \
  template DirectionTrace<S> plain_dag_forward<S>(const Mat<S>&, const PlainDag&, const DirectionParams<S>&,        \
                                                  RecurrenceOptions);                                              \
  template DirectionTrace<S> dense_sum_forward<S>(const Mat<S>&, const DenseDag&, const DirectionParams<S>&,        \
                                                  RecurrenceOptions);                                              \
  template Vec<S> attention_pairwise<S>(const Vec<S>&, const Vec<S>&, const DirectionParams<S>&);                   \
  template Vec<S> attention_weights<S>(const std::vector<Vec<S>>&, const Vec<S>&);                                  \
  template Vec<S> attention_combine<S>(const std::vector<Vec<S>>&, const Vec<S>&);                                  \
  template DirectionTrace<S> dense_attention_forward<S>(const Mat<S>&, const DenseDag&, const DirectionParams<S>&,  \
                                                        RecurrenceOptions);                                        \
  template DirectionTrace<S> direction_forward<S>(const Mat<S>&, GridDims, Variant, const DirectionParams<S>&,      \
                                                  RecurrenceOptions);                                              \
  template HeadOutput<S> aggregate_logits<S>(const std::vector<Mat<S>>&, const ModelParams<S>&);                    \
  template ForwardTrace<S> model_forward<S>(const Mat<S>&, GridDims, const ModelConfig&, const ModelParams<S>&,     \
                                            RecurrenceOptions);                                                    \
  template BackwardResult<S> model_backward<S>(const ForwardTrace<S>&, std::span<const std::uint8_t>,              \
                                               const ModelConfig&, const ModelParams<S>&);                         \
  template S mean_cross_entropy<S>(const Mat<S>&, std::span<const std::uint8_t>);                                   \
  template std::vector<std::uint8_t> predict_labels<S>(const Mat<S>&);

DDRNN_INSTANTIATE_MODEL(float)
DDRNN_INSTANTIATE_MODEL(double)

#undef DDRNN_INSTANTIATE_MODEL

}  // namespace ddrnn
