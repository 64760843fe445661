#ifndef DDRNN_GRID_HPP
#define DDRNN_GRID_HPP

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace ddrnn {

/// Sweep direction of a directed acyclic decomposition of the grid.
/// SE flows from the top-left corner towards the bottom-right corner, so
/// every vertex depends on units north and west of it. The other three are
/// reflections of SE.
enum class Direction : std::uint8_t { SE, SW, NE, NW };

inline constexpr std::array<Direction, 4> kAllDirections{Direction::SE, Direction::SW,
                                                        Direction::NE, Direction::NW};

std::string_view to_string(Direction dir);
std::optional<Direction> parse_direction(std::string_view text);

struct GridDims {
  int rows = 0;
  int cols = 0;

  std::size_t units() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  bool operator==(const GridDims&) const = default;
};

struct VertexId {
  int row = 0;
  int col = 0;

  auto operator<=>(const VertexId&) const = default;
};

/// Row-major index of a vertex in the unreflected grid.
inline std::size_t grid_index(VertexId v, GridDims dims) {
  return static_cast<std::size_t>(v.row) * static_cast<std::size_t>(dims.cols) +
         static_cast<std::size_t>(v.col);
}

inline VertexId vertex_at(std::size_t index, GridDims dims) {
  return {static_cast<int>(index / static_cast<std::size_t>(dims.cols)),
          static_cast<int>(index % static_cast<std::size_t>(dims.cols))};
}

/// Reflection that maps a direction onto SE. It is an involution, so the same
/// call converts in both directions.
VertexId reflect(VertexId v, GridDims dims, Direction dir);

/// Shared ordering machinery of both DAG flavours: the canonical topological
/// sequence is row-major order of the reflected grid. Topological positions
/// are indices into that sequence.
class GridOrder {
 public:
  GridOrder(GridDims dims, Direction dir);

  GridDims dims() const { return dims_; }
  Direction direction() const { return dir_; }
  std::size_t size() const { return topo_.size(); }

  const std::vector<VertexId>& topo() const { return topo_; }
  /// Unreflected row-major grid index of each topological position.
  const std::vector<std::size_t>& topo_grid_index() const { return topo_index_; }
  std::size_t position(VertexId v) const;

 protected:
  GridDims dims_;
  Direction dir_;
  std::vector<VertexId> topo_;
  std::vector<std::size_t> topo_index_;
};

/// Three-neighbour DAG: each vertex depends on its adjacent predecessors.
class PlainDag : public GridOrder {
 public:
  PlainDag(GridDims dims, Direction dir);

  /// Adjacent predecessors in canonical order.
  std::vector<VertexId> preds(VertexId v) const;

  /// Topological positions of the adjacent predecessors of position k
  /// (at most three), written in canonical order. Returns the count.
  int pred_positions(std::size_t k, std::array<std::size_t, 3>& out) const {
    const std::size_t w = static_cast<std::size_t>(dims_.cols);
    const std::size_t r = k / w;
    const std::size_t c = k % w;
    int n = 0;
    if (r > 0 && c > 0) out[n++] = k - w - 1;
    if (r > 0) out[n++] = k - w;
    if (c > 0) out[n++] = k - 1;
    return n;
  }
};

/// Dense DAG: each vertex depends on every vertex that dominates it in the
/// sweep order, i.e. the transitive closure of the plain DAG. In reflected
/// coordinates the predecessors of (i, j) form the rectangle [0, i] x [0, j]
/// without (i, j) itself, so nothing but the dims is stored.
class DenseDag : public GridOrder {
 public:
  DenseDag(GridDims dims, Direction dir);

  std::vector<VertexId> preds(VertexId v) const;
  std::size_t pred_count(VertexId v) const;

  std::size_t pred_count_at(std::size_t k) const {
    const std::size_t w = static_cast<std::size_t>(dims_.cols);
    return (k / w + 1) * (k % w + 1) - 1;
  }

  /// Calls f(position) for each dense predecessor of position k in canonical order.
  template <class F>
  void for_each_pred_position(std::size_t k, F&& f) const {
    const std::size_t w = static_cast<std::size_t>(dims_.cols);
    const std::size_t r = k / w;
    const std::size_t c = k % w;
    for (std::size_t i = 0; i <= r; ++i) {
      const std::size_t end = (i == r) ? c : c + 1;
      for (std::size_t j = 0; j < end; ++j) f(i * w + j);
    }
  }
};

/// Anti-diagonal levels in topological positions; every predecessor of a
/// vertex lies in a strictly earlier level.
struct WavefrontSchedule {
  std::vector<std::vector<VertexId>> levels;
  std::vector<std::vector<std::size_t>> positions;
};

PlainDag build_plain_dag(GridDims dims, Direction dir);
DenseDag build_dense_dag(GridDims dims, Direction dir);
WavefrontSchedule wavefronts(const GridOrder& dag);

}  // namespace ddrnn

#endif  // DDRNN_GRID_HPP
