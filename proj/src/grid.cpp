#include "ddrnn/grid.hpp"

#include <string>

#include "ddrnn/errors.hpp"

namespace ddrnn {

std::string_view to_string(Direction dir) {
  switch (dir) {
    case Direction::SE: return "se";
    case Direction::SW: return "sw";
    case Direction::NE: return "ne";
    case Direction::NW: return "nw";
  }
  return "?";
}

std::optional<Direction> parse_direction(std::string_view text) {
  for (Direction d : kAllDirections) {
    const std::string_view name = to_string(d);
    if (text.size() == name.size()) {
      bool same = true;
      for (std::size_t i = 0; i < name.size(); ++i) {
        const char c = text[i] >= 'A' && text[i] <= 'Z' ? static_cast<char>(text[i] - 'A' + 'a') : text[i];
        same = same && c == name[i];
      }
      if (same) return d;
    }
  }
  return std::nullopt;
}

VertexId reflect(VertexId v, GridDims dims, Direction dir) {
  switch (dir) {
    case Direction::SE: return v;
    case Direction::SW: return {v.row, dims.cols - 1 - v.col};
    case Direction::NE: return {dims.rows - 1 - v.row, v.col};
    case Direction::NW: return {dims.rows - 1 - v.row, dims.cols - 1 - v.col};
  }
  return v;
}

GridOrder::GridOrder(GridDims dims, Direction dir) : dims_(dims), dir_(dir) {
  if (dims.rows < 1 || dims.cols < 1) {
    throw ShapeError("grid dims must be at least 1x1, got " + std::to_string(dims.rows) + "x" +
                     std::to_string(dims.cols));
  }
  topo_.reserve(dims.units());
  topo_index_.reserve(dims.units());
  for (int i = 0; i < dims.rows; ++i) {
    for (int j = 0; j < dims.cols; ++j) {
      const VertexId v = reflect({i, j}, dims, dir);
      topo_.push_back(v);
      topo_index_.push_back(grid_index(v, dims));
    }
  }
}

std::size_t GridOrder::position(VertexId v) const {
  return grid_index(reflect(v, dims_, dir_), dims_);
}

PlainDag::PlainDag(GridDims dims, Direction dir) : GridOrder(dims, dir) {}

std::vector<VertexId> PlainDag::preds(VertexId v) const {
  std::array<std::size_t, 3> pos{};
  const int n = pred_positions(position(v), pos);
  std::vector<VertexId> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(topo_[pos[static_cast<std::size_t>(i)]]);
  return out;
}

DenseDag::DenseDag(GridDims dims, Direction dir) : GridOrder(dims, dir) {}

std::vector<VertexId> DenseDag::preds(VertexId v) const {
  const std::size_t k = position(v);
  std::vector<VertexId> out;
  out.reserve(pred_count_at(k));
  for_each_pred_position(k, [&](std::size_t p) { out.push_back(topo_[p]); });
  return out;
}

std::size_t DenseDag::pred_count(VertexId v) const { return pred_count_at(position(v)); }

PlainDag build_plain_dag(GridDims dims, Direction dir) { return PlainDag(dims, dir); }

DenseDag build_dense_dag(GridDims dims, Direction dir) { return DenseDag(dims, dir); }

WavefrontSchedule wavefronts(const GridOrder& dag) {
  const GridDims dims = dag.dims();
  WavefrontSchedule s;
  const std::size_t n_levels = static_cast<std::size_t>(dims.rows + dims.cols - 1);
  s.levels.resize(n_levels);
  s.positions.resize(n_levels);
  // Visiting positions in increasing order keeps each level in canonical order.
  for (std::size_t k = 0; k < dag.size(); ++k) {
    const std::size_t level = k / static_cast<std::size_t>(dims.cols) + k % static_cast<std::size_t>(dims.cols);
    s.levels[level].push_back(dag.topo()[k]);
    s.positions[level].push_back(k);
  }
  return s;
}

}  // namespace ddrnn
