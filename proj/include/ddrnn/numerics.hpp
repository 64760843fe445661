#ifndef DDRNN_NUMERICS_HPP
#define DDRNN_NUMERICS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ddrnn/errors.hpp"

namespace ddrnn {

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major so that a row (one image unit, one output neuron) is contiguous.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

/// Standard runs train in float; gradient checks run in double.
enum class Precision { Standard, Extended };

template <Precision P>
using scalar_t = std::conditional_t<P == Precision::Extended, double, float>;

/// xoshiro256** seeded through splitmix64. Integer arithmetic only, so a seed
/// produces the same stream on every platform. Real-valued draws are built
/// from the top 53 bits; normals use Box-Muller without caching.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

namespace detail {

// out = m * x, each row accumulated left to right over columns.
template <class Scalar>
inline void matvec_into(const Mat<Scalar>& m, const Scalar* x, Scalar* out) {
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  const Scalar* row = m.data();
  for (Eigen::Index i = 0; i < rows; ++i, row += cols) {
    Scalar acc = Scalar(0);
    for (Eigen::Index j = 0; j < cols; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
}

// out += m^T * g, accumulated in row order of m.
template <class Scalar>
inline void matvec_transpose_add(const Mat<Scalar>& m, const Scalar* g, Scalar* out) {
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  const Scalar* row = m.data();
  for (Eigen::Index i = 0; i < rows; ++i, row += cols) {
    const Scalar gi = g[i];
    for (Eigen::Index j = 0; j < cols; ++j) out[j] += row[j] * gi;
  }
}

// m += g * x^T
template <class Scalar>
inline void outer_add(Mat<Scalar>& m, const Scalar* g, const Scalar* x) {
  const Eigen::Index rows = m.rows();
  const Eigen::Index cols = m.cols();
  Scalar* row = m.data();
  for (Eigen::Index i = 0; i < rows; ++i, row += cols) {
    const Scalar gi = g[i];
    for (Eigen::Index j = 0; j < cols; ++j) row[j] += gi * x[j];
  }
}

template <class Scalar>
inline Scalar dot(const Scalar* a, const Scalar* b, Eigen::Index n) {
  Scalar acc = Scalar(0);
  for (Eigen::Index i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

template <class Scalar>
Vec<Scalar> matvec(const Mat<Scalar>& m, const Vec<Scalar>& v) {
  if (m.cols() != v.size()) {
    throw ShapeError("matvec: matrix has " + std::to_string(m.cols()) + " columns, vector has " +
                     std::to_string(v.size()) + " entries");
  }
  Vec<Scalar> out(m.rows());
  detail::matvec_into(m, v.data(), out.data());
  return out;
}

template <class Scalar>
struct ReluResult {
  Vec<Scalar> value;
  Mask mask;  // 1 where the input was strictly positive
};

template <class Scalar>
ReluResult<Scalar> relu(const Vec<Scalar>& v) {
  ReluResult<Scalar> r{Vec<Scalar>(v.size()), Mask(v.size())};
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const bool on = v[i] > Scalar(0);
    r.value[i] = on ? v[i] : Scalar(0);
    r.mask[i] = on ? 1 : 0;
  }
  return r;
}

/// Max-subtracted softmax over a contiguous range; writes into out.
template <class Scalar>
void softmax_into(const Scalar* in, Scalar* out, Eigen::Index n) {
  Scalar top = in[0];
  for (Eigen::Index i = 1; i < n; ++i) top = std::max(top, in[i]);
  Scalar total = Scalar(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - top);
    total += out[i];
  }
  for (Eigen::Index i = 0; i < n; ++i) out[i] /= total;
}

template <class Scalar>
Vec<Scalar> softmax(const Vec<Scalar>& v) {
  if (v.size() < 1) throw ShapeError("softmax: empty input");
  Vec<Scalar> out(v.size());
  softmax_into(v.data(), out.data(), v.size());
  return out;
}

template <class Scalar>
struct CrossEntropy {
  Scalar loss;
  Vec<Scalar> logit_grad;  // probs - onehot(label)
};

template <class Scalar>
CrossEntropy<Scalar> cross_entropy(const Vec<Scalar>& probs, int label) {
  if (label < 0 || label >= probs.size()) {
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(probs.size()) + ")");
  }
  CrossEntropy<Scalar> ce{-std::log(probs[label]), probs};
  ce.logit_grad[label] -= Scalar(1);
  return ce;
}

/// Central differences per coordinate, in double.
Vec<double> finite_difference_grad(const std::function<double(const Vec<double>&)>& f,
                                   const Vec<double>& x, double eps);

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace ddrnn

#endif  // DDRNN_NUMERICS_HPP
