#ifndef DDRNN_ERRORS_HPP
#define DDRNN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ddrnn {

// Dimension or layout mismatch between tensors, params or datasets.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad key, value or line in a run configuration or command line.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf escaped a computation, or a numeric precondition failed.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ddrnn

#endif  // DDRNN_ERRORS_HPP
