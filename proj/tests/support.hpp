#ifndef DDRNN_TESTS_SUPPORT_HPP
#define DDRNN_TESTS_SUPPORT_HPP

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ddrnn/grid.hpp"
#include "ddrnn/model.hpp"

namespace ddrnn::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Everything reachable from v by following PlainDag predecessor edges.
std::set<VertexId> reachable_predecessors(const PlainDag& dag, VertexId v);

/// Model parameters with every entry (biases included) drawn from
/// U(-scale, scale).
template <class Scalar>
ModelParams<Scalar> random_params(const ModelConfig& config, Rng& rng, double scale = 0.5);

template <class Scalar>
Mat<Scalar> random_features(GridDims dims, int channels, Rng& rng);

std::vector<std::uint8_t> random_labels(GridDims dims, int classes, Rng& rng);

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path);

/// Runs the CLI in-process and captures both streams.
struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};
CliResult run(const std::vector<std::string>& args);

}  // namespace ddrnn::testing

#endif  // DDRNN_TESTS_SUPPORT_HPP
