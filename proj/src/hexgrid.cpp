#include "mealtwin/hexgrid.hpp"

#include <queue>
#include <stdexcept>
#include <unordered_set>

namespace mealtwin {

ServiceRegion::ServiceRegion(std::vector<GridCell> cells, std::string layout_name)
    : cells_(std::move(cells)), layout_name_(std::move(layout_name)) {
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (cells_[i].id != static_cast<GridId>(i)) {
      throw std::invalid_argument("grid ids must be dense and ordered (0..n-1)");
    }
    if (!index_.emplace(cells_[i].coord, cells_[i].id).second) {
      throw std::invalid_argument("duplicate grid coordinate for id " + std::to_string(i));
    }
  }
  if (cells_.empty()) return;

  // connectivity
  std::vector<bool> seen(cells_.size(), false);
  std::queue<GridId> frontier;
  frontier.push(0);
  seen[0] = true;
  std::size_t reached = 1;
  while (!frontier.empty()) {
    const GridId g = frontier.front();
    frontier.pop();
    for (const auto& n : neighbors(g)) {
      if (n && !seen[static_cast<std::size_t>(*n)]) {
        seen[static_cast<std::size_t>(*n)] = true;
        ++reached;
        frontier.push(*n);
      }
    }
  }
  if (reached != cells_.size()) {
    throw std::invalid_argument("service region is not connected");
  }
}

ServiceRegion ServiceRegion::rectangle(int cols, int rows, std::string layout_name) {
  if (cols < 1 || rows < 1) throw std::invalid_argument("region dimensions must be positive");
  std::vector<GridCell> cells;
  cells.reserve(static_cast<std::size_t>(cols * rows));
  for (int row = 0; row < rows; ++row) {
    for (int col = 0; col < cols; ++col) {
      // odd-r offset -> axial
      const int q = col - (row - (row & 1)) / 2;
      cells.push_back({static_cast<GridId>(cells.size()), {q, row}, false});
    }
  }
  return ServiceRegion(std::move(cells), std::move(layout_name));
}

ServiceRegion ServiceRegion::default_5x5() {
  auto region = rectangle(5, 5, "default-5x5");
  for (GridId g : {6, 7, 8, 11, 12, 13, 16, 17, 18}) region.set_restaurant(g, true);
  return region;
}

std::optional<GridId> ServiceRegion::find(HexCoord c) const {
  auto it = index_.find(c);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<GridId> ServiceRegion::restaurant_grids() const {
  std::vector<GridId> out;
  for (const auto& c : cells_) {
    if (c.is_restaurant) out.push_back(c.id);
  }
  return out;
}

void ServiceRegion::set_restaurant(GridId id, bool flag) {
  cells_.at(static_cast<std::size_t>(id)).is_restaurant = flag;
}

std::array<std::optional<GridId>, 6> ServiceRegion::neighbors(HexCoord g) const {
  if (!contains(g)) throw std::domain_error("grid is outside the service region");
  std::array<std::optional<GridId>, 6> out;
  for (std::size_t i = 0; i < kNeighborOffsets.size(); ++i) {
    out[i] = find(g + kNeighborOffsets[i]);
  }
  return out;
}

std::vector<GridId> ServiceRegion::neighborhood(GridId g) const {
  std::vector<GridId> out{g};
  for (const auto& n : neighbors(g)) {
    if (n) out.push_back(*n);
  }
  return out;
}

std::vector<HexCoord> shortest_path(HexCoord a, HexCoord b) {
  std::vector<HexCoord> path{a};
  HexCoord cur = a;
  int remaining = hex_distance(a, b);
  while (remaining > 0) {
    for (const auto off : kNeighborOffsets) {
      const HexCoord next = cur + off;
      if (hex_distance(next, b) == remaining - 1) {
        cur = next;
        break;
      }
    }
    path.push_back(cur);
    --remaining;
  }
  return path;
}

std::vector<HexCoord> shortest_path(const ServiceRegion& region, HexCoord a, HexCoord b) {
  if (!region.contains(a) || !region.contains(b)) {
    throw std::domain_error("shortest_path endpoints must lie in the region");
  }
  return shortest_path(a, b);
}

}  // namespace mealtwin
