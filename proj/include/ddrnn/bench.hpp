#ifndef DDRNN_BENCH_HPP
#define DDRNN_BENCH_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "ddrnn/model.hpp"

namespace ddrnn {

struct BenchRow {
  int size = 0;  // grid side; Chain runs on 1 x size^2
  Variant variant = Variant::PlainDag;
  double median_ms = 0.0;
  std::vector<double> rep_ms;
};

/// Median wall time of one model_forward per (size, variant). Each rep
/// repeats the forward pass until it has run for min_rep_seconds and records
/// the mean, so tiny grids are not dominated by clock resolution.
std::vector<BenchRow> bench_forward(const std::vector<int>& sizes, const std::vector<Variant>& variants, int reps,
                                    const ModelConfig& base, std::uint64_t seed, double min_rep_seconds = 0.02);

/// time(size b) / time(size a) for one variant, if both were measured.
std::optional<double> growth_ratio(const std::vector<BenchRow>& rows, Variant variant, int a, int b);

}  // namespace ddrnn

#endif  // DDRNN_BENCH_HPP
