#include "ddrnn/bench.hpp"

#include <algorithm>
#include <chrono>

#include "ddrnn/errors.hpp"

namespace ddrnn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::ranges::sort(v);
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> bench_forward(const std::vector<int>& sizes, const std::vector<Variant>& variants, int reps,
                                    const ModelConfig& base, std::uint64_t seed, double min_rep_seconds) {
  if (reps < 1) throw ConfigError("reps must be >= 1");
  std::vector<BenchRow> rows;
  for (int size : sizes) {
    if (size < 1) throw ConfigError("bench sizes must be >= 1");
    for (Variant variant : variants) {
      ModelConfig config = base;
      config.variant = variant;
      const GridDims dims = variant == Variant::Chain ? GridDims{1, size * size} : GridDims{size, size};
      Rng rng(seed);
      const auto params = init_params<float>(config, rng);
      Mat<float> features(static_cast<Eigen::Index>(dims.units()), config.in_channels);
      for (Eigen::Index i = 0; i < features.size(); ++i) features.data()[i] = static_cast<float>(rng.normal());

      volatile float sink = 0.0f;
      auto run_once = [&] { sink = sink + model_forward(features, dims, config, params).logits(0, 0); };
      const auto warm = Clock::now();
      run_once();
      const double single = std::max(seconds_since(warm), 1e-7);
      const int inner = std::max(1, static_cast<int>(min_rep_seconds / single));

      BenchRow row{size, variant, 0.0, {}};
      for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        for (int i = 0; i < inner; ++i) run_once();
        row.rep_ms.push_back(1e3 * seconds_since(t0) / inner);
      }
      row.median_ms = median(row.rep_ms);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::optional<double> growth_ratio(const std::vector<BenchRow>& rows, Variant variant, int a, int b) {
  const BenchRow* ra = nullptr;
  const BenchRow* rb = nullptr;
  for (const auto& r : rows) {
    if (r.variant != variant) continue;
    if (r.size == a) ra = &r;
    if (r.size == b) rb = &r;
  }
  if (!ra || !rb || ra->median_ms <= 0.0) return std::nullopt;
  return rb->median_ms / ra->median_ms;
}

}  // namespace ddrnn
