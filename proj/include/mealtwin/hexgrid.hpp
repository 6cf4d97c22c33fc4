#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mealtwin {

using GridId = int;

// Axial hex coordinate.
struct HexCoord {
  int q = 0;
  int r = 0;

  friend constexpr bool operator==(HexCoord, HexCoord) = default;
  constexpr HexCoord operator+(HexCoord o) const { return {q + o.q, r + o.r}; }
};

struct HexCoordHash {
  std::size_t operator()(HexCoord h) const noexcept {
    return std::hash<std::int64_t>{}((static_cast<std::int64_t>(h.q) << 32) ^
                                     static_cast<std::uint32_t>(h.r));
  }
};

// Canonical neighbor order; slot i of a neighborhood is kNeighborOffsets[i].
inline constexpr std::array<HexCoord, 6> kNeighborOffsets{{
    {+1, 0}, {+1, -1}, {0, -1}, {-1, 0}, {-1, +1}, {0, +1}}};

inline constexpr int kMinutesPerUnit = 3;

constexpr int hex_distance(HexCoord a, HexCoord b) {
  const int dq = a.q - b.q;
  const int dr = a.r - b.r;
  const int ds = dq + dr;
  return ((dq < 0 ? -dq : dq) + (dr < 0 ? -dr : dr) + (ds < 0 ? -ds : ds)) / 2;
}

constexpr int travel_minutes(HexCoord a, HexCoord b) {
  return kMinutesPerUnit * hex_distance(a, b);
}

// One hex cell with its stable id.
struct GridCell {
  GridId id = 0;
  HexCoord coord;
  bool is_restaurant = false;
};

/// A finite, connected set of hex grids. Ids are dense (0..size-1) and the
/// cell vector is indexed by id.
class ServiceRegion {
 public:
  ServiceRegion() = default;
  ServiceRegion(std::vector<GridCell> cells, std::string layout_name);

  /// Offset-rectangle of `cols` x `rows` (odd rows shifted right), ids
  /// assigned row-major.
  static ServiceRegion rectangle(int cols, int rows,
                                 std::string layout_name = "rect");

  /// The default 5x5 region with the central 3x3 block as restaurant grids.
  static ServiceRegion default_5x5();

  std::size_t size() const { return cells_.size(); }
  const std::vector<GridCell>& cells() const { return cells_; }
  const GridCell& cell(GridId id) const { return cells_.at(static_cast<std::size_t>(id)); }
  HexCoord coord(GridId id) const { return cell(id).coord; }
  bool is_restaurant(GridId id) const { return cell(id).is_restaurant; }
  const std::string& layout_name() const { return layout_name_; }

  std::optional<GridId> find(HexCoord c) const;
  bool contains(HexCoord c) const { return index_.count(c) != 0; }
  bool contains(GridId id) const { return id >= 0 && static_cast<std::size_t>(id) < cells_.size(); }

  std::vector<GridId> restaurant_grids() const;
  void set_restaurant(GridId id, bool flag);

  int distance(GridId a, GridId b) const { return hex_distance(coord(a), coord(b)); }
  int travel_minutes(GridId a, GridId b) const { return kMinutesPerUnit * distance(a, b); }

  /// Slot i holds the i-th canonical neighbor when it lies in the region.
  /// Throws std::domain_error when `g` is not in the region.
  std::array<std::optional<GridId>, 6> neighbors(HexCoord g) const;
  std::array<std::optional<GridId>, 6> neighbors(GridId g) const { return neighbors(coord(g)); }

  /// The grid itself followed by its present neighbors in slot order.
  std::vector<GridId> neighborhood(GridId g) const;

 private:
  std::vector<GridCell> cells_;
  std::unordered_map<HexCoord, GridId, HexCoordHash> index_;
  std::string layout_name_;
};

/// Deterministic shortest path on the infinite lattice: at each step the
/// lowest canonical slot that reduces the distance is taken. Includes both
/// endpoints.
std::vector<HexCoord> shortest_path(HexCoord a, HexCoord b);

/// Same as above, but requires both endpoints in `region`.
std::vector<HexCoord> shortest_path(const ServiceRegion& region, HexCoord a, HexCoord b);

}  // namespace mealtwin
