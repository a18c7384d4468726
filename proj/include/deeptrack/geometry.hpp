// SPDX-License-Identifier: Apache-2.0
//
// SE(2) poses, grid conventions, ray-cast observation encoding and
// predictable-space masks.
//
// Grid convention: row-major storage, cell (row 0, col 0) at the most
// negative (x, y) corner. Columns run along +x (forward), rows along +y
// (left). The sensor sits at the centre of the centre cell.

#ifndef DEEPTRACK_GEOMETRY_HPP_
#define DEEPTRACK_GEOMETRY_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace deeptrack {

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into (-pi, pi].
double normalize_angle(double theta);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Rigid planar transform. theta is always kept in (-pi, pi].
class Pose2 {
 public:
  Pose2() = default;
  Pose2(double x, double y, double theta);

  static Pose2 identity() { return Pose2(); }

  double x() const { return x_; }
  double y() const { return y_; }
  double theta() const { return theta_; }

  Vec2 apply(const Vec2& p) const;
  Pose2 inverse() const;
  bool is_identity() const { return x_ == 0.0 && y_ == 0.0 && theta_ == 0.0; }
  bool is_finite() const;

  friend bool operator==(const Pose2&, const Pose2&) = default;

 private:
  double x_ = 0.0;
  double y_ = 0.0;
  double theta_ = 0.0;
};

/// Pose equivalent to applying `b` first, then `a`.
Pose2 se2_compose(const Pose2& a, const Pose2& b);

/// Transform taking coordinates in the `src` sensor frame to coordinates in
/// the `dst` sensor frame, for world-frame poses `src` and `dst`.
Pose2 se2_relative(const Pose2& src, const Pose2& dst);

struct GridSpec {
  int size_cells = 51;     // M, odd
  double cell_size = 0.2;  // metres
  double max_range = 30.0; // metres

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  int center_index() const { return (size_cells - 1) / 2; }
  int cell_count() const { return size_cells * size_cells; }
  double half_extent() const { return 0.5 * size_cells * cell_size; }

  /// Metric centre of cell (row, col) in the sensor frame.
  Vec2 cell_center(int row, int col) const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Square binary grid, row-major, one byte per cell.
class BinaryGrid {
 public:
  BinaryGrid() = default;
  explicit BinaryGrid(int size) : size_(size), cells_(static_cast<std::size_t>(size) * size, 0) {}

  int size() const { return size_; }
  std::uint8_t at(int row, int col) const { return cells_[index(row, col)]; }
  void set(int row, int col, std::uint8_t v) { cells_[index(row, col)] = v; }
  std::span<const std::uint8_t> cells() const { return cells_; }
  std::span<std::uint8_t> cells() { return cells_; }
  std::size_t count() const;

  friend bool operator==(const BinaryGrid&, const BinaryGrid&) = default;

 private:
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * size_ + col; }

  int size_ = 0;
  std::vector<std::uint8_t> cells_;
};

/// Paired visibility/occupancy input grids for one frame.
struct ObservationGrid {
  BinaryGrid vis;
  BinaryGrid occ;

  static ObservationGrid empty(int size) { return {BinaryGrid(size), BinaryGrid(size)}; }
  friend bool operator==(const ObservationGrid&, const ObservationGrid&) = default;
};

/// One beam of a planar scan. An empty range means no return.
struct RangeReading {
  double bearing = 0.0;
  std::optional<double> range;
};

/// Ray-traces a planar scan into an observation grid.
///
/// Each ray is walked cell by cell from the sensor origin (exact DDA, a cell
/// is traversed iff the ray enters its open interior). The cell holding the
/// endpoint is marked occupied, cells before it free. Returns beyond
/// max_range or outside the grid, and no-return beams, mark every traversed
/// cell free up to the grid edge. Occupied marks win over free marks from
/// other rays. The centre cell is never marked occupied, and is visible as
/// soon as any ray is cast.
ObservationGrid encode_observation(std::span<const RangeReading> rays, const GridSpec& spec);

/// Mask over a future frame: a cell is 1 iff its centre, mapped back through
/// the composed chain, falls inside the grid extent of the frame the chain
/// starts from. `chain` holds T_{t+1,t}, ..., T_{t+k,t+k-1} in order.
BinaryGrid predictable_mask(std::span<const Pose2> chain, const GridSpec& spec);

/// Composes T_{t+k,t} = T_{t+k,t+k-1} o ... o T_{t+1,t}.
Pose2 compose_chain(std::span<const Pose2> chain);

}  // namespace deeptrack

#endif  // DEEPTRACK_GEOMETRY_HPP_
