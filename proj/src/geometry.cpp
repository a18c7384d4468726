// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace deeptrack {

double normalize_angle(double theta) {
  double t = std::remainder(theta, 2.0 * kPi);  // [-pi, pi]
  if (t <= -kPi) t += 2.0 * kPi;
  return t;
}

Pose2::Pose2(double x, double y, double theta) : x_(x), y_(y), theta_(normalize_angle(theta)) {}

Vec2 Pose2::apply(const Vec2& p) const {
  const double c = std::cos(theta_);
  const double s = std::sin(theta_);
  return {x_ + c * p.x - s * p.y, y_ + s * p.x + c * p.y};
}

Pose2 Pose2::inverse() const {
  const double c = std::cos(theta_);
  const double s = std::sin(theta_);
  return Pose2(-(c * x_ + s * y_), s * x_ - c * y_, -theta_);
}

bool Pose2::is_finite() const {
  return std::isfinite(x_) && std::isfinite(y_) && std::isfinite(theta_);
}

Pose2 se2_compose(const Pose2& a, const Pose2& b) {
  const Vec2 t = a.apply({b.x(), b.y()});
  return Pose2(t.x, t.y, a.theta() + b.theta());
}

Pose2 se2_relative(const Pose2& src, const Pose2& dst) {
  return se2_compose(dst.inverse(), src);
}

void GridSpec::validate() const {
  if (size_cells <= 0 || size_cells % 2 == 0) {
    throw std::invalid_argument("GridSpec: size_cells must be a positive odd integer");
  }
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    throw std::invalid_argument("GridSpec: cell_size must be positive");
  }
  if (!(max_range > 0.0)) {
    throw std::invalid_argument("GridSpec: max_range must be positive");
  }
}

Vec2 GridSpec::cell_center(int row, int col) const {
  const int c = center_index();
  return {(col - c) * cell_size, (row - c) * cell_size};
}

std::size_t BinaryGrid::count() const {
  return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Parametric distance (in cell units) along the ray to the next grid line
// crossed on one axis, from `origin` heading `dir`, while inside cell `idx`.
double next_crossing(int idx, double origin, double dir) {
  if (dir > 0.0) return (idx + 1 - origin) / dir;
  if (dir < 0.0) return (idx - origin) / dir;
  return kInf;
}

void trace_ray(const RangeReading& ray, const GridSpec& spec, ObservationGrid& out) {
  if (!std::isfinite(ray.bearing)) {
    throw std::invalid_argument("encode_observation: non-finite bearing");
  }
  if (ray.range && (std::isnan(*ray.range) || *ray.range < 0.0)) {
    throw std::invalid_argument("encode_observation: negative range");
  }

  const int m = spec.size_cells;
  const int center = spec.center_index();
  // Continuous cell coordinates: column c spans [c, c+1) along u.
  const double u0 = 0.5 * m;
  const double v0 = 0.5 * m;
  const double du = std::cos(ray.bearing);
  const double dv = std::sin(ray.bearing);

  double length = kInf;
  std::optional<std::pair<int, int>> hit;
  if (ray.range && std::isfinite(*ray.range) && *ray.range <= spec.max_range) {
    const double l = *ray.range / spec.cell_size;
    const double ue = u0 + l * du;
    const double ve = v0 + l * dv;
    const double col = std::floor(ue);
    const double row = std::floor(ve);
    if (col >= 0 && col < m && row >= 0 && row < m) {
      length = l;
      hit = {static_cast<int>(row), static_cast<int>(col)};
    }
  }

  int col = center;
  int row = center;
  const int step_u = du > 0 ? 1 : -1;
  const int step_v = dv > 0 ? 1 : -1;
  double t_u = next_crossing(col, u0, du);
  double t_v = next_crossing(row, v0, dv);
  for (;;) {
    out.vis.set(row, col, 1);
    const double t_next = std::min(t_u, t_v);
    if (t_next >= length) break;
    const bool cross_u = t_u <= t_v;
    const bool cross_v = t_v <= t_u;
    if (cross_u) col += step_u;
    if (cross_v) row += step_v;
    if (col < 0 || col >= m || row < 0 || row >= m) break;
    if (cross_u) t_u = next_crossing(col, u0, du);
    if (cross_v) t_v = next_crossing(row, v0, dv);
  }

  if (hit && !(hit->first == center && hit->second == center)) {
    out.vis.set(hit->first, hit->second, 1);
    out.occ.set(hit->first, hit->second, 1);
  }
}

}  // namespace

ObservationGrid encode_observation(std::span<const RangeReading> rays, const GridSpec& spec) {
  spec.validate();
  ObservationGrid out = ObservationGrid::empty(spec.size_cells);
  for (const RangeReading& ray : rays) trace_ray(ray, spec, out);
  return out;
}

Pose2 compose_chain(std::span<const Pose2> chain) {
  Pose2 total;
  for (const Pose2& t : chain) total = se2_compose(t, total);
  return total;
}

BinaryGrid predictable_mask(std::span<const Pose2> chain, const GridSpec& spec) {
  spec.validate();
  const Pose2 back = compose_chain(chain).inverse();
  const double half = spec.half_extent();
  BinaryGrid mask(spec.size_cells);
  for (int r = 0; r < spec.size_cells; ++r) {
    for (int c = 0; c < spec.size_cells; ++c) {
      const Vec2 q = back.apply(spec.cell_center(r, c));
      if (std::abs(q.x) <= half && std::abs(q.y) <= half) mask.set(r, c, 1);
    }
  }
  return mask;
}

}  // namespace deeptrack
