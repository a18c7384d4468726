// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/simulator.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "deeptrack/random.hpp"

namespace deeptrack {
namespace {

GridSpec spec_of(int m, double cs = 0.2) {
  GridSpec s;
  s.size_cells = m;
  s.cell_size = cs;
  return s;
}

// --- independent per-shape intersection oracles -------------------------------

// Smallest t >= 0 with |o + t d - c| = r, solved with the textbook quadratic.
std::optional<double> disc_hit(const Disc& d, Vec2 o, Vec2 dir) {
  const double px = o.x - d.center.x;
  const double py = o.y - d.center.y;
  if (px * px + py * py < d.radius * d.radius) return std::nullopt;
  const double a = dir.x * dir.x + dir.y * dir.y;
  const double b = 2.0 * (px * dir.x + py * dir.y);
  const double c = px * px + py * py - d.radius * d.radius;
  const double disc = b * b - 4 * a * c;
  if (disc < 0) return std::nullopt;
  const double t = (-b - std::sqrt(disc)) / (2 * a);
  return t >= 0 ? std::optional<double>(t) : std::nullopt;
}

// Intersects the ray with each of the four edges and keeps the nearest.
std::optional<double> rect_hit(const Rect& r, Vec2 o, Vec2 dir) {
  if (std::abs(o.x - r.center.x) < r.half_x && std::abs(o.y - r.center.y) < r.half_y) return std::nullopt;
  std::optional<double> best;
  const auto consider = [&](double t, double along, double lo, double hi) {
    if (t >= 0 && along >= lo - 1e-12 && along <= hi + 1e-12 && (!best || t < *best)) best = t;
  };
  for (double x : {r.center.x - r.half_x, r.center.x + r.half_x}) {
    if (dir.x != 0) {
      const double t = (x - o.x) / dir.x;
      consider(t, o.y + t * dir.y, r.center.y - r.half_y, r.center.y + r.half_y);
    }
  }
  for (double y : {r.center.y - r.half_y, r.center.y + r.half_y}) {
    if (dir.y != 0) {
      const double t = (y - o.y) / dir.y;
      consider(t, o.x + t * dir.x, r.center.x - r.half_x, r.center.x + r.half_x);
    }
  }
  return best;
}

std::optional<double> oracle_hit(const Shape& s, Vec2 o, Vec2 dir) {
  if (const Disc* d = std::get_if<Disc>(&s)) return disc_hit(*d, o, dir);
  return rect_hit(std::get<Rect>(s), o, dir);
}

double boundary_distance(const Shape& s, Vec2 p) {
  if (const Disc* d = std::get_if<Disc>(&s)) return std::abs(std::hypot(p.x - d->center.x, p.y - d->center.y) - d->radius);
  const Rect& r = std::get<Rect>(s);
  const double dx = std::abs(p.x - r.center.x) - r.half_x;
  const double dy = std::abs(p.y - r.center.y) - r.half_y;
  if (dx <= 0 && dy <= 0) return std::min(-dx, -dy);
  return std::hypot(std::max(dx, 0.0), std::max(dy, 0.0));
}

std::vector<Shape> random_shapes(Rng& rng, int n, double extent) {
  std::vector<Shape> shapes;
  for (int i = 0; i < n; ++i) {
    const Vec2 c{rng.uniform(-extent, extent), rng.uniform(-extent, extent)};
    if (rng.coin()) {
      shapes.push_back(Disc{c, rng.uniform(0.05, 0.8)});
    } else {
      shapes.push_back(Rect{c, rng.uniform(0.05, 0.8), rng.uniform(0.05, 0.8)});
    }
  }
  return shapes;
}

TEST(RayCast, FirstHitMatchesPerShapeOracle) {
  Rng rng(5);
  const GridSpec spec = spec_of(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto shapes = random_shapes(rng, rng.integer(1, 8), 4.0);
    const Pose2 pose(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-kPi, kPi));
    const SensorModel sensor{90, 0.0};
    const auto scan = cast_scan(shapes, pose, spec, sensor);
    ASSERT_EQ(scan.size(), 90u);
    for (int b = 0; b < 90; ++b) {
      const double world = pose.theta() + 2 * kPi * b / 90;
      const Vec2 dir{std::cos(world), std::sin(world)};
      std::optional<double> best;
      for (const Shape& s : shapes) {
        const auto t = oracle_hit(s, {pose.x(), pose.y()}, dir);
        if (t && (!best || *t < *best)) best = t;
      }
      if (best && *best > spec.max_range) best.reset();
      ASSERT_EQ(scan[b].range.has_value(), best.has_value()) << "trial " << trial << " beam " << b;
      if (best) ASSERT_NEAR(*scan[b].range, *best, 1e-9);
      EXPECT_NEAR(scan[b].bearing, 2 * kPi * b / 90, 1e-15);
    }
  }
}

TEST(RayCast, ShapeAroundSensorIsIgnored) {
  const std::vector<Shape> shapes = {Disc{{0, 0}, 1.0}, Rect{{3, 0}, 0.5, 5.0}};
  const auto scan = cast_scan(shapes, Pose2(), spec_of(51), SensorModel{4, 0.0});
  ASSERT_TRUE(scan[0].range.has_value());
  EXPECT_NEAR(*scan[0].range, 2.5, 1e-12);
  EXPECT_FALSE(scan[2].range.has_value());
}

TEST(Simulate, VisibilitySoundness) {
  Rng rng(9);
  const GridSpec spec = spec_of(25);
  const double diag = spec.cell_size * std::sqrt(2.0);
  for (int trial = 0; trial < 40; ++trial) {
    const auto shapes = random_shapes(rng, 6, 2.5);
    const Pose2 pose(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-kPi, kPi));
    const ObservationGrid obs = encode_observation(cast_scan(shapes, pose, spec, SensorModel{360, 0.0}), spec);
    for (int r = 0; r < spec.size_cells; ++r) {
      for (int c = 0; c < spec.size_cells; ++c) {
        if (!obs.occ.at(r, c)) continue;
        ASSERT_TRUE(obs.vis.at(r, c));
        const Vec2 p = pose.apply(spec.cell_center(r, c));
        double nearest = std::numeric_limits<double>::infinity();
        for (const Shape& s : shapes) nearest = std::min(nearest, boundary_distance(s, p));
        ASSERT_LE(nearest, diag) << "trial " << trial << " cell " << r << "," << c;
      }
    }
  }
}

TEST(Simulate, DeterministicPerSeed) {
  const GridSpec spec = spec_of(31);
  EXPECT_EQ(crossing_sequence(4, spec, {.frames = 8}), crossing_sequence(4, spec, {.frames = 8}));
  EXPECT_FALSE(crossing_sequence(4, spec, {.frames = 8}) == crossing_sequence(5, spec, {.frames = 8}));
  MovingOptions mo;
  mo.frames = 10;
  EXPECT_EQ(moving_sequence(2, spec, mo), moving_sequence(2, spec, mo));
  EXPECT_EQ(occlusion_scenario(3, spec).batch, occlusion_scenario(3, spec).batch);
}

TEST(Simulate, NoisyRangesAreDeterministicToo) {
  WorldScene scene;
  scene.static_shapes.push_back(Rect{{2, 0}, 0.3, 3});
  TrajectorySpec traj;
  traj.duration = 1.0;
  const SensorModel noisy{180, 0.05};
  const auto a = simulate_sequence(scene, traj, spec_of(31), noisy, 1);
  EXPECT_EQ(a, simulate_sequence(scene, traj, spec_of(31), noisy, 1));
  EXPECT_FALSE(a == simulate_sequence(scene, traj, spec_of(31), noisy, 2));
}

TEST(Simulate, StaticSensorHasIdentityTransforms) {
  const SequenceBatch b = crossing_sequence(1, spec_of(21), {.frames = 8});
  ASSERT_EQ(b.rel_transforms.size(), 8u);
  for (const Pose2& t : b.rel_transforms) EXPECT_TRUE(t.is_identity());
}

TEST(Simulate, StaticWorldStaticSensorHasConstantTruth) {
  WorldScene scene;
  scene.static_shapes = {Disc{{1.0, 0.5}, 0.4}, Rect{{-1.5, -1.0}, 0.2, 0.9}};
  TrajectorySpec traj;
  traj.duration = 2.0;
  const SequenceBatch b = simulate_sequence(scene, traj, spec_of(31), 360, 0);
  ASSERT_EQ(b.frame_count(), 16);
  for (int k = 1; k < b.frame_count(); ++k) {
    EXPECT_EQ((*b.truth_occ)[k], (*b.truth_occ)[0]);
    EXPECT_EQ(b.observations[k], b.observations[0]);
  }
}

std::pair<double, double> centroid(const BinaryGrid& g) {
  double sr = 0;
  double sc = 0;
  int n = 0;
  for (int r = 0; r < g.size(); ++r) {
    for (int c = 0; c < g.size(); ++c) {
      if (g.at(r, c)) {
        sr += r;
        sc += c;
        ++n;
      }
    }
  }
  return {sr / n, sc / n};
}

TEST(Simulate, ConstantVelocityDiscAdvancesOneCellPerFrame) {
  const GridSpec spec = spec_of(41);
  WorldScene scene;
  scene.bounds = {-100, -100, 100, 100};
  DynamicObject disc;
  disc.shape = Disc{{0, 0}, 0.45};
  disc.start = Pose2(-1.8, 1.0, 0.0);  // on cell centres
  disc.vx = spec.cell_size * 8.0;      // one cell per frame at 8 Hz
  scene.dynamic_objects.push_back(disc);
  TrajectorySpec traj;
  traj.duration = 2.0;
  const SequenceBatch b = simulate_sequence(scene, traj, spec, 720, 0);
  const auto c0 = centroid((*b.truth_occ)[0]);
  for (int k = 1; k < b.frame_count(); ++k) {
    const auto ck = centroid((*b.truth_occ)[k]);
    EXPECT_NEAR(ck.first, c0.first, 1e-9);
    EXPECT_NEAR(ck.second, c0.second + k, 1e-9) << "frame " << k;
  }
}

TEST(Simulate, MovingSensorTruthIsWarpedPreviousFrame) {
  const GridSpec spec = spec_of(31);
  WorldScene scene;
  // Boundaries kept off the cell-centre lattice.
  scene.static_shapes = {Disc{{1.33, 0.71}, 0.47}, Rect{{0.45, -1.55}, 1.17, 0.33}, Disc{{-2.03, 1.91}, 0.61}};
  TrajectorySpec traj;
  traj.kind = TrajectoryKind::kStraight;
  traj.speed = spec.cell_size * 8.0;
  traj.duration = 1.0;
  const SequenceBatch b = simulate_sequence(scene, traj, spec, 720, 0);
  int compared = 0;
  for (int k = 1; k < b.frame_count(); ++k) {
    const Pose2 back = b.rel_transforms[k].inverse();
    for (int r = 0; r < spec.size_cells; ++r) {
      for (int c = 0; c < spec.size_cells; ++c) {
        const Vec2 p = back.apply(spec.cell_center(r, c));
        const double pc = p.x / spec.cell_size + spec.center_index();
        const double pr = p.y / spec.cell_size + spec.center_index();
        const int ic = static_cast<int>(std::lround(pc));
        const int ir = static_cast<int>(std::lround(pr));
        ASSERT_NEAR(pc, ic, 1e-9);
        ASSERT_NEAR(pr, ir, 1e-9);
        if (ic < 0 || ir < 0 || ic >= spec.size_cells || ir >= spec.size_cells) continue;
        ASSERT_EQ((*b.truth_occ)[k].at(r, c), (*b.truth_occ)[k - 1].at(ir, ic)) << k << ": " << r << "," << c;
        ++compared;
      }
    }
  }
  EXPECT_GT(compared, 0);
}

TEST(Simulate, RejectsDegenerateInput) {
  TrajectorySpec traj;
  EXPECT_THROW(simulate_sequence(WorldScene{}, traj, spec_of(11), 10, 0), std::invalid_argument);
  WorldScene scene;
  scene.static_shapes.push_back(Disc{{1, 0}, 0.2});
  traj.duration = 0.125;  // one frame
  EXPECT_THROW(simulate_sequence(scene, traj, spec_of(11), 10, 0), std::invalid_argument);
  traj.duration = 1.0;
  EXPECT_THROW(simulate_sequence(scene, traj, spec_of(11), 0, 0), std::invalid_argument);
  traj.duration = 1.01;
  EXPECT_THROW(simulate_sequence(scene, traj, spec_of(11), 10, 0), std::invalid_argument);
  scene.static_shapes.push_back(Rect{{0, 0}, 0.0, 1.0});
  traj.duration = 1.0;
  EXPECT_THROW(simulate_sequence(scene, traj, spec_of(11), 10, 0), std::invalid_argument);
}

TEST(Simulate, DynamicObjectsStayInBounds) {
  WorldScene scene;
  scene.bounds = {-2, -2, 2, 2};
  DynamicObject o;
  o.shape = Disc{{0, 0}, 0.2};
  o.vx = 3.1;
  o.vy = -1.7;
  scene.dynamic_objects.push_back(o);
  for (double t = 0; t < 20; t += 0.37) {
    const Disc d = std::get<Disc>(scene_shapes_at(scene, t).back());
    EXPECT_GE(d.center.x, -2.0);
    EXPECT_LE(d.center.x, 2.0);
    EXPECT_GE(d.center.y, -2.0);
    EXPECT_LE(d.center.y, 2.0);
  }
}

TEST(Trajectory, TurningClosedForm) {
  TrajectorySpec traj;
  traj.kind = TrajectoryKind::kTurning;
  traj.speed = 2.0;
  traj.yaw_rate = 0.5;
  traj.duration = 4.0;
  traj.frame_rate = 10.0;
  const auto poses = trajectory_poses(traj, 0);
  ASSERT_EQ(poses.size(), 40u);
  // Circle of radius v / w centred at (0, v / w).
  const double rad = traj.speed / traj.yaw_rate;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const double th = traj.yaw_rate * 0.1 * static_cast<double>(k);
    EXPECT_NEAR(poses[k].x(), rad * std::sin(th), 1e-9);
    EXPECT_NEAR(poses[k].y(), rad * (1 - std::cos(th)), 1e-9);
    EXPECT_NEAR(poses[k].theta(), normalize_angle(th), 1e-9);
  }
}

// --- occlusion scenario --------------------------------------------------------

struct ObjectView {
  int truth_cells = 0;
  int visible_truth_cells = 0;
  int observed_occupied = 0;
  double centroid_c = 0;
  double centroid_r = 0;
};

// Truth and observation restricted to a window around the scripted centre.
ObjectView view_object(const OcclusionScenario& s, int k, int radius_cells) {
  const GridSpec& spec = s.batch.grid;
  const Vec2 obj = s.object_centers[k];
  const int wc = static_cast<int>(std::lround(obj.x / spec.cell_size)) + spec.center_index();
  const int wr = static_cast<int>(std::lround(obj.y / spec.cell_size)) + spec.center_index();
  ObjectView v;
  for (int r = wr - radius_cells; r <= wr + radius_cells; ++r) {
    for (int c = wc - radius_cells; c <= wc + radius_cells; ++c) {
      if (r < 0 || c < 0 || r >= spec.size_cells || c >= spec.size_cells) continue;
      if ((*s.batch.truth_occ)[k].at(r, c)) {
        ++v.truth_cells;
        v.centroid_c += c;
        v.centroid_r += r;
        if (s.batch.observations[k].vis.at(r, c)) ++v.visible_truth_cells;
      }
      if (s.batch.observations[k].occ.at(r, c)) ++v.observed_occupied;
    }
  }
  if (v.truth_cells > 0) {
    v.centroid_c /= v.truth_cells;
    v.centroid_r /= v.truth_cells;
  }
  return v;
}

TEST(Occlusion, FiveFramesHiddenAndMotionContinues) {
  const GridSpec spec = spec_of(51);
  for (std::uint64_t seed : {0, 1, 7}) {
    const OcclusionScenario s = occlusion_scenario(seed, spec);
    ASSERT_EQ(s.occluded_frames, (std::vector<int>{20, 21, 22, 23, 24}));
    ASSERT_EQ(s.batch.frame_count(), 40);
    for (int k = 0; k < 40; ++k) {
      const ObjectView v = view_object(s, k, 3);
      ASSERT_GT(v.truth_cells, 0);
      const bool hidden = std::find(s.occluded_frames.begin(), s.occluded_frames.end(), k) != s.occluded_frames.end();
      if (hidden) {
        EXPECT_EQ(v.visible_truth_cells, 0) << "seed " << seed << " frame " << k;
      } else {
        EXPECT_GT(v.observed_occupied, 0) << "seed " << seed << " frame " << k;
      }
    }
    // Truth keeps moving one cell per frame through the occluded interval.
    const double dir = s.object_centers[1].x > s.object_centers[0].x ? 1.0 : -1.0;
    for (int k = 20; k <= 25; ++k) {
      const ObjectView a = view_object(s, k - 1, 3);
      const ObjectView b = view_object(s, k, 3);
      EXPECT_NEAR(b.centroid_c - a.centroid_c, dir, 0.35) << "seed " << seed << " frame " << k;
      EXPECT_NEAR(s.object_centers[k].x - s.object_centers[k - 1].x, dir * spec.cell_size, 1e-12);
    }
  }
}

TEST(Occlusion, VariedOptionsStillHideTheObject) {
  const GridSpec spec = spec_of(51);
  // Returns from the disc: occupied cells near it and beyond the wall. Beams
  // grazing past the disc may still mark its boundary cells visible.
  auto disc_returns = [&](const OcclusionScenario& s, const OcclusionOptions& o, int k) {
    int n = 0;
    for (int r = 0; r < spec.size_cells; ++r) {
      for (int c = 0; c < spec.size_cells; ++c) {
        if (!s.batch.observations[k].occ.at(r, c)) continue;
        const Vec2 p = spec.cell_center(r, c);
        if (p.y < o.wall_distance + 0.45) continue;
        if (std::hypot(p.x - s.object_centers[k].x, p.y - s.object_centers[k].y) < s.object_radius + 0.15) ++n;
      }
    }
    return n;
  };
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const OcclusionOptions o = varied_occlusion_options(seed);
    const OcclusionScenario s = occlusion_scenario(seed, spec, o);
    ASSERT_EQ(static_cast<int>(s.occluded_frames.size()), o.occluded_frames);
    ASSERT_GE(o.occluded_frames, 2);
    ASSERT_LE(o.occluded_frames, 8);
    for (int k : s.occluded_frames) EXPECT_EQ(disc_returns(s, o, k), 0) << "seed " << seed << " frame " << k;
    EXPECT_GT(disc_returns(s, o, s.occluded_frames.front() - 1), 0) << "seed " << seed;
  }
  EXPECT_THROW(varied_occlusion_options(0, 19), std::invalid_argument);
}

TEST(Occlusion, ZeroOccludedFramesKeepsObjectVisible) {
  OcclusionOptions opts;
  opts.occluded_frames = 0;
  const OcclusionScenario s = occlusion_scenario(2, spec_of(51), opts);
  EXPECT_TRUE(s.occluded_frames.empty());
  for (int k = 0; k < s.batch.frame_count(); ++k) EXPECT_GT(view_object(s, k, 3).visible_truth_cells, 0) << k;
}

TEST(Occlusion, WithoutWallObjectIsSeenEveryFrame) {
  OcclusionOptions opts;
  opts.with_wall = false;
  const OcclusionScenario s = occlusion_scenario(4, spec_of(51), opts);
  EXPECT_TRUE(s.occluded_frames.empty());
  for (int k = 0; k < s.batch.frame_count(); ++k) {
    const ObjectView v = view_object(s, k, 3);
    EXPECT_GT(v.visible_truth_cells, 0) << k;
    EXPECT_GT(v.observed_occupied, 0) << k;
  }
}

}  // namespace
}  // namespace deeptrack
