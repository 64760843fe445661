#include "support.hpp"

#include <atomic>
#include <sstream>

#include <unistd.h>

#include "ddrnn/commands.hpp"
#include "ddrnn/tensor_io.hpp"

namespace ddrnn::testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("ddrnn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::set<VertexId> reachable_predecessors(const PlainDag& dag, VertexId v) {
  std::set<VertexId> seen;
  std::vector<VertexId> stack = dag.preds(v);
  while (!stack.empty()) {
    const VertexId u = stack.back();
    stack.pop_back();
    if (!seen.insert(u).second) continue;
    for (VertexId w : dag.preds(u)) stack.push_back(w);
  }
  return seen;
}

template <class Scalar>
ModelParams<Scalar> random_params(const ModelConfig& config, Rng& rng, double scale) {
  ModelParams<Scalar> p = ModelParams<Scalar>::zeros(config);
  for_each_tensor(p, [&](const std::string&, auto& t, ParamGroup) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(rng.uniform(-scale, scale));
  });
  return p;
}

template <class Scalar>
Mat<Scalar> random_features(GridDims dims, int channels, Rng& rng) {
  Mat<Scalar> x(static_cast<Eigen::Index>(dims.units()), channels);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<Scalar>(rng.normal());
  return x;
}

std::vector<std::uint8_t> random_labels(GridDims dims, int classes, Rng& rng) {
  std::vector<std::uint8_t> y(dims.units());
  for (auto& v : y) v = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path) { return read_file_bytes(path); }

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

template ModelParams<float> random_params<float>(const ModelConfig&, Rng&, double);
template ModelParams<double> random_params<double>(const ModelConfig&, Rng&, double);
template Mat<float> random_features<float>(GridDims, int, Rng&);
template Mat<double> random_features<double>(GridDims, int, Rng&);

}  // namespace ddrnn::testing
