// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "deeptrack/random.hpp"

namespace deeptrack {

namespace {

Vec2 shape_center(const Shape& s) {
  return std::visit([](const auto& v) { return v.center; }, s);
}

// Reflects a coordinate into [lo, hi], flipping the velocity on each bounce.
void reflect(double& pos, double& vel, double lo, double hi) {
  if (!std::isfinite(pos)) throw std::runtime_error("simulator: object position is not finite");
  // Each pass folds away one bounds width of overshoot.
  while (pos < lo || pos > hi) {
    if (pos < lo) {
      pos = 2.0 * lo - pos;
      vel = -vel;
    } else if (pos > hi) {
      pos = 2.0 * hi - pos;
      vel = -vel;
    }
  }
}

struct ObjectState {
  Vec2 offset;  // displacement of the object from its start position
  double vx = 0.0;
  double vy = 0.0;
};

class SceneState {
 public:
  explicit SceneState(const WorldScene& scene) : scene_(scene) {
    for (const DynamicObject& o : scene.dynamic_objects) states_.push_back({{0.0, 0.0}, o.vx, o.vy});
  }

  void advance(double dt) {
    for (std::size_t i = 0; i < states_.size(); ++i) {
      const DynamicObject& o = scene_.dynamic_objects[i];
      ObjectState& s = states_[i];
      const double w = o.yaw_rate;
      double dx = s.vx * dt;
      double dy = s.vy * dt;
      if (w != 0.0) {
        const double a = std::sin(w * dt) / w;
        const double b = (1.0 - std::cos(w * dt)) / w;
        dx = a * s.vx - b * s.vy;
        dy = a * s.vy + b * s.vx;
        const double c = std::cos(w * dt);
        const double sn = std::sin(w * dt);
        const double vx = c * s.vx - sn * s.vy;
        s.vy = sn * s.vx + c * s.vy;
        s.vx = vx;
      }
      s.offset.x += dx;
      s.offset.y += dy;
      const Vec2 base = o.start.apply(shape_center(o.shape));
      double px = base.x + s.offset.x;
      double py = base.y + s.offset.y;
      reflect(px, s.vx, scene_.bounds.min_x, scene_.bounds.max_x);
      reflect(py, s.vy, scene_.bounds.min_y, scene_.bounds.max_y);
      s.offset = {px - base.x, py - base.y};
    }
  }

  std::vector<Shape> shapes() const {
    std::vector<Shape> out = scene_.static_shapes;
    for (std::size_t i = 0; i < states_.size(); ++i) {
      const DynamicObject& o = scene_.dynamic_objects[i];
      const Vec2 base = o.start.apply(shape_center(o.shape));
      const Shape placed = translated(o.shape, {base.x - shape_center(o.shape).x, base.y - shape_center(o.shape).y});
      out.push_back(translated(placed, states_[i].offset));
    }
    return out;
  }

 private:
  const WorldScene& scene_;
  std::vector<ObjectState> states_;
};

}  // namespace

std::optional<double> intersect_ray(const Shape& shape, const Vec2& origin, const Vec2& dir) {
  if (contains(shape, origin)) return std::nullopt;
  if (const Disc* d = std::get_if<Disc>(&shape)) {
    const double ox = origin.x - d->center.x;
    const double oy = origin.y - d->center.y;
    const double b = ox * dir.x + oy * dir.y;
    const double c = ox * ox + oy * oy - d->radius * d->radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double t = -b - std::sqrt(disc);
    if (t < 0.0) return std::nullopt;
    return t;
  }
  const Rect& r = std::get<Rect>(shape);
  double t_lo = -std::numeric_limits<double>::infinity();
  double t_hi = std::numeric_limits<double>::infinity();
  const double lo[2] = {r.center.x - r.half_x, r.center.y - r.half_y};
  const double hi[2] = {r.center.x + r.half_x, r.center.y + r.half_y};
  const double o[2] = {origin.x, origin.y};
  const double d[2] = {dir.x, dir.y};
  for (int a = 0; a < 2; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a];
    double t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_lo = std::max(t_lo, t0);
    t_hi = std::min(t_hi, t1);
  }
  if (t_lo > t_hi || t_lo < 0.0) return std::nullopt;
  return t_lo;
}

bool contains(const Shape& shape, const Vec2& p) {
  if (const Disc* d = std::get_if<Disc>(&shape)) {
    const double dx = p.x - d->center.x;
    const double dy = p.y - d->center.y;
    return dx * dx + dy * dy < d->radius * d->radius;
  }
  const Rect& r = std::get<Rect>(shape);
  return std::abs(p.x - r.center.x) < r.half_x && std::abs(p.y - r.center.y) < r.half_y;
}

Shape translated(const Shape& shape, const Vec2& offset) {
  return std::visit(
      [&](auto s) -> Shape {
        s.center.x += offset.x;
        s.center.y += offset.y;
        return s;
      },
      shape);
}

void WorldScene::validate() const {
  auto check = [](const Shape& s) {
    if (const Disc* d = std::get_if<Disc>(&s)) {
      if (!(d->radius > 0.0)) throw std::invalid_argument("WorldScene: disc radius must be positive");
    } else {
      const Rect& r = std::get<Rect>(s);
      if (!(r.half_x > 0.0 && r.half_y > 0.0)) throw std::invalid_argument("WorldScene: rectangle extent must be positive");
    }
  };
  for (const Shape& s : static_shapes) check(s);
  for (const DynamicObject& o : dynamic_objects) check(o.shape);
  if (!(bounds.max_x > bounds.min_x && bounds.max_y > bounds.min_y)) {
    throw std::invalid_argument("WorldScene: empty bounds");
  }
}

int TrajectorySpec::frame_count() const {
  if (!(frame_rate > 0.0)) throw std::invalid_argument("TrajectorySpec: frame_rate must be positive");
  const double n = duration * frame_rate;
  const double r = std::round(n);
  if (std::abs(n - r) > 1e-9 || r < 0) {
    throw std::invalid_argument("TrajectorySpec: duration * frame_rate must be a whole frame count");
  }
  return static_cast<int>(r);
}

std::vector<Pose2> trajectory_poses(const TrajectorySpec& traj, std::uint64_t seed) {
  const int n = traj.frame_count();
  const double dt = 1.0 / traj.frame_rate;
  Rng rng(seed ^ 0x7261'6a65'6374'6f72ULL);
  std::vector<Pose2> poses;
  poses.reserve(n);
  Pose2 pose = traj.start;
  double yaw = traj.kind == TrajectoryKind::kTurning ? traj.yaw_rate : 0.0;
  const int seg_frames = std::max(1, static_cast<int>(std::lround(traj.segment_duration * traj.frame_rate)));
  for (int k = 0; k < n; ++k) {
    if (k > 0) {
      if (traj.kind == TrajectoryKind::kPiecewise && (k - 1) % seg_frames == 0) {
        yaw = traj.yaw_rate * static_cast<double>(rng.integer(-1, 1));
      }
      const double v = traj.kind == TrajectoryKind::kStatic ? 0.0 : traj.speed;
      const double w = traj.kind == TrajectoryKind::kStatic ? 0.0 : yaw;
      const double dth = w * dt;
      double dx = v * dt;
      double dy = 0.0;
      if (dth != 0.0) {
        dx = v / w * std::sin(dth);
        dy = v / w * (1.0 - std::cos(dth));
      }
      pose = se2_compose(pose, Pose2(dx, dy, dth));
    }
    poses.push_back(pose);
  }
  return poses;
}

std::vector<Shape> scene_shapes_at(const WorldScene& scene, double t) {
  SceneState state(scene);
  if (t > 0.0) state.advance(t);
  return state.shapes();
}

std::vector<RangeReading> cast_scan(const std::vector<Shape>& shapes, const Pose2& pose, const GridSpec& spec,
                                    const SensorModel& sensor, std::uint64_t* noise_state) {
  std::vector<RangeReading> scan;
  scan.reserve(sensor.n_beams);
  std::optional<Rng> noise;
  if (sensor.range_noise > 0.0 && noise_state) noise.emplace(*noise_state);
  const Vec2 origin{pose.x(), pose.y()};
  for (int b = 0; b < sensor.n_beams; ++b) {
    const double bearing = 2.0 * kPi * b / sensor.n_beams;
    const double world = pose.theta() + bearing;
    const Vec2 dir{std::cos(world), std::sin(world)};
    std::optional<double> best;
    for (const Shape& s : shapes) {
      const auto t = intersect_ray(s, origin, dir);
      if (t && (!best || *t < *best)) best = t;
    }
    if (best && noise) best = std::max(0.0, *best + noise->uniform(-sensor.range_noise, sensor.range_noise));
    if (best && *best > spec.max_range) best.reset();
    scan.push_back({bearing, best});
  }
  if (noise) *noise_state = *noise_state * 6364136223846793005ULL + 1442695040888963407ULL;
  return scan;
}

BinaryGrid rasterize_truth(const std::vector<Shape>& shapes, const Pose2& pose, const GridSpec& spec) {
  BinaryGrid truth(spec.size_cells);
  for (int r = 0; r < spec.size_cells; ++r) {
    for (int c = 0; c < spec.size_cells; ++c) {
      const Vec2 p = pose.apply(spec.cell_center(r, c));
      for (const Shape& s : shapes) {
        if (contains(s, p)) {
          truth.set(r, c, 1);
          break;
        }
      }
    }
  }
  return truth;
}

SequenceBatch simulate_sequence(const WorldScene& scene, const TrajectorySpec& traj, const GridSpec& spec,
                                const SensorModel& sensor, std::uint64_t seed) {
  spec.validate();
  scene.validate();
  if (scene.shape_count() == 0) throw std::invalid_argument("simulate_sequence: scene has no shapes");
  if (sensor.n_beams < 1) throw std::invalid_argument("simulate_sequence: n_beams must be >= 1");
  const int n = traj.frame_count();
  if (n < 2) throw std::invalid_argument("simulate_sequence: at least two frames are required");

  const std::vector<Pose2> poses = trajectory_poses(traj, seed);
  const double dt = 1.0 / traj.frame_rate;
  std::uint64_t noise_state = seed;

  SequenceBatch batch;
  batch.grid = spec;
  batch.truth_occ.emplace();
  SceneState state(scene);
  for (int k = 0; k < n; ++k) {
    if (k > 0) state.advance(dt);
    const std::vector<Shape> shapes = state.shapes();
    const auto scan = cast_scan(shapes, poses[k], spec, sensor, &noise_state);
    batch.observations.push_back(encode_observation(scan, spec));
    batch.rel_transforms.push_back(k == 0 ? Pose2::identity() : se2_relative(poses[k - 1], poses[k]));
    batch.truth_occ->push_back(rasterize_truth(shapes, poses[k], spec));
  }
  return batch;
}

SequenceBatch simulate_sequence(const WorldScene& scene, const TrajectorySpec& traj, const GridSpec& spec,
                                int n_beams, std::uint64_t seed) {
  return simulate_sequence(scene, traj, spec, SensorModel{n_beams, 0.0}, seed);
}

// --- scenarios --------------------------------------------------------------

namespace {

struct AngularSpan {
  double lo = 0.0;
  double hi = 0.0;
};

AngularSpan disc_span(const Vec2& c, double r) {
  const double d = std::hypot(c.x, c.y);
  const double a = std::atan2(c.y, c.x);
  const double h = std::asin(std::min(1.0, r / d));
  return {a - h, a + h};
}

}  // namespace

OcclusionScenario occlusion_scenario(std::uint64_t seed, const GridSpec& spec, const OcclusionOptions& opts) {
  spec.validate();
  if (opts.occluded_frames < 0 || opts.frames < 2) throw std::invalid_argument("occlusion_scenario: bad options");
  const int k = opts.occluded_frames;
  if (k > 0 && (opts.first_occluded < 1 || opts.first_occluded + k >= opts.frames)) {
    throw std::invalid_argument("occlusion_scenario: occluded interval must lie strictly inside the sequence");
  }

  Rng rng(seed);
  const double dir = rng.coin() ? 1.0 : -1.0;
  const double lane = opts.lane_distance + rng.uniform(-0.1, 0.1);
  const double step = opts.speed_cells_per_frame * spec.cell_size;  // metres per frame
  const double center_frame = opts.first_occluded + 0.5 * (k - 1);
  auto center_at = [&](int f) { return Vec2{dir * step * (f - center_frame), lane}; };

  WorldScene scene;
  scene.bounds = {-1e3, -1e3, 1e3, 1e3};
  // Back wall so rays past the lane still return.
  scene.static_shapes.push_back(Rect{{0.0, lane + 1.6}, spec.half_extent(), 0.15});

  if (opts.with_wall && k > 0) {
    const int f0 = opts.first_occluded;
    double cov_lo = 1e9;
    double cov_hi = -1e9;
    for (int f = f0; f < f0 + k; ++f) {
      const AngularSpan s = disc_span(center_at(f), opts.object_radius);
      cov_lo = std::min(cov_lo, s.lo);
      cov_hi = std::max(cov_hi, s.hi);
    }
    const AngularSpan before = disc_span(center_at(f0 - 1), opts.object_radius);
    const AngularSpan after = disc_span(center_at(f0 + k), opts.object_radius);
    const double out_lo = std::min(before.lo, after.lo);
    const double out_hi = std::max(before.hi, after.hi);
    const double lo = 0.5 * (cov_lo + out_lo);
    const double hi = 0.5 * (cov_hi + out_hi);
    const double near = opts.wall_distance;
    const double thick = 0.3;
    // Corners bounding the angular span from the origin (angles in (0, pi)).
    const double right = lo < 0.5 * kPi ? near / std::tan(lo) : (near + thick) / std::tan(lo);
    const double left = hi > 0.5 * kPi ? near / std::tan(hi) : (near + thick) / std::tan(hi);
    scene.static_shapes.push_back(Rect{{0.5 * (left + right), near + 0.5 * thick}, 0.5 * (right - left), 0.5 * thick});
  }

  DynamicObject obj;
  obj.shape = Disc{{0.0, 0.0}, opts.object_radius};
  const Vec2 c0 = center_at(0);
  obj.start = Pose2(c0.x, c0.y, 0.0);
  obj.vx = dir * step * opts.frame_rate;
  scene.dynamic_objects.push_back(obj);

  TrajectorySpec traj;
  traj.kind = TrajectoryKind::kStatic;
  traj.frame_rate = opts.frame_rate;
  traj.duration = opts.frames / opts.frame_rate;

  OcclusionScenario out;
  out.batch = simulate_sequence(scene, traj, spec, 1440, seed);
  out.object_radius = opts.object_radius;
  for (int f = 0; f < opts.frames; ++f) out.object_centers.push_back(center_at(f));
  if (opts.with_wall) {
    for (int f = opts.first_occluded; f < opts.first_occluded + k; ++f) out.occluded_frames.push_back(f);
  }
  return out;
}

OcclusionOptions varied_occlusion_options(std::uint64_t seed, int frames) {
  if (frames < 20) throw std::invalid_argument("varied_occlusion_options: need at least 20 frames");
  Rng rng(seed);
  OcclusionOptions o;
  o.frames = frames;
  o.lane_distance = rng.uniform(1.8, 3.6);
  o.wall_distance = rng.uniform(0.6, o.lane_distance - 0.8);
  o.speed_cells_per_frame = rng.uniform(0.5, 1.5);
  o.occluded_frames = rng.integer(2, 8);
  o.first_occluded = rng.integer(frames / 5, frames - 12);
  return o;
}

WorldScene crossing_scene(std::uint64_t seed, const GridSpec& spec, const CrossingOptions& opts) {
  Rng rng(seed);
  const double half = spec.half_extent();
  WorldScene scene;
  scene.bounds = {-half - 1.0, -half - 1.0, half + 1.0, half + 1.0};

  auto random_point = [&](double rmin, double rmax) {
    const double a = rng.uniform(-kPi, kPi);
    const double d = rng.uniform(rmin, rmax);
    return Vec2{d * std::cos(a), d * std::sin(a)};
  };

  // Building edges near the periphery.
  const int walls = rng.integer(2, 4);
  for (int i = 0; i < walls; ++i) {
    const Vec2 c = random_point(0.6 * half, 0.95 * half);
    const bool along_x = std::abs(c.y) > std::abs(c.x);
    const double len = rng.uniform(0.8, 2.5);
    scene.static_shapes.push_back(along_x ? Rect{c, len, 0.2} : Rect{c, 0.2, len});
  }
  // Posts.
  const int posts = rng.integer(1, 3);
  for (int i = 0; i < posts; ++i) {
    scene.static_shapes.push_back(Disc{random_point(1.5, 0.85 * half), rng.uniform(0.15, 0.3)});
  }
  // A nearby occluder.
  if (rng.uniform() < 0.7) {
    const Vec2 c = random_point(1.0, 2.2);
    const bool along_x = std::abs(c.y) > std::abs(c.x);
    const double len = rng.uniform(0.4, 1.0);
    scene.static_shapes.push_back(along_x ? Rect{c, len, 0.15} : Rect{c, 0.15, len});
  }

  const int peds = rng.integer(opts.min_pedestrians, opts.max_pedestrians);
  for (int i = 0; i < peds; ++i) {
    DynamicObject p;
    p.shape = Disc{{0.0, 0.0}, rng.uniform(0.2, 0.35)};
    const Vec2 c = random_point(0.9, half);
    p.start = Pose2(c.x, c.y, 0.0);
    const double heading = rng.uniform(-kPi, kPi);
    const double speed = rng.uniform(opts.min_speed, opts.max_speed);
    p.vx = speed * std::cos(heading);
    p.vy = speed * std::sin(heading);
    p.yaw_rate = rng.uniform(-0.15, 0.15);
    scene.dynamic_objects.push_back(p);
  }
  return scene;
}

SequenceBatch crossing_sequence(std::uint64_t seed, const GridSpec& spec, const CrossingOptions& opts) {
  const WorldScene scene = crossing_scene(seed, spec, opts);
  TrajectorySpec traj;
  traj.kind = TrajectoryKind::kStatic;
  traj.frame_rate = opts.frame_rate;
  traj.duration = opts.frames / opts.frame_rate;
  return simulate_sequence(scene, traj, spec, opts.n_beams, seed);
}

SequenceBatch moving_sequence(std::uint64_t seed, const GridSpec& spec, const MovingOptions& opts) {
  Rng rng(seed);
  TrajectorySpec traj;
  traj.kind = opts.turning ? TrajectoryKind::kPiecewise : TrajectoryKind::kStraight;
  traj.speed = rng.uniform(opts.min_speed, opts.max_speed);
  traj.yaw_rate = opts.turning ? rng.uniform(0.5 * opts.max_yaw_rate, opts.max_yaw_rate) : 0.0;
  traj.frame_rate = opts.frame_rate;
  traj.duration = opts.frames / opts.frame_rate;
  traj.segment_duration = 0.5;
  traj.start = Pose2(0.0, 0.0, rng.uniform(-kPi, kPi));
  const std::vector<Pose2> poses = trajectory_poses(traj, seed);

  const double reach = traj.speed * traj.duration + 2.0 * spec.half_extent();
  WorldScene scene;
  scene.bounds = {-reach, -reach, reach, reach};
  auto clear_of_path = [&](const Shape& s, double margin) {
    for (const Pose2& p : poses) {
      const Shape grown = std::visit(
          [&](auto v) -> Shape {
            if constexpr (std::is_same_v<decltype(v), Disc>) {
              v.radius += margin;
            } else {
              v.half_x += margin;
              v.half_y += margin;
            }
            return v;
          },
          s);
      if (contains(grown, {p.x(), p.y()})) return false;
    }
    return true;
  };

  const int buildings = static_cast<int>(reach * reach / 12.0);
  for (int i = 0, tries = 0; i < buildings && tries < 20 * buildings; ++tries) {
    const Shape s = Rect{{rng.uniform(-reach, reach), rng.uniform(-reach, reach)}, rng.uniform(0.3, 2.0),
                         rng.uniform(0.3, 2.0)};
    if (!clear_of_path(s, 1.2)) continue;
    scene.static_shapes.push_back(s);
    ++i;
  }
  const int poles = static_cast<int>(reach * reach / 25.0);
  for (int i = 0, tries = 0; i < poles && tries < 20 * poles; ++tries) {
    const Shape s = Disc{{rng.uniform(-reach, reach), rng.uniform(-reach, reach)}, rng.uniform(0.15, 0.3)};
    if (!clear_of_path(s, 1.0)) continue;
    scene.static_shapes.push_back(s);
    ++i;
  }
  const int movers = static_cast<int>(reach * reach / 30.0);
  for (int i = 0; i < movers; ++i) {
    DynamicObject o;
    const bool car = rng.uniform() < 0.4;
    const double heading = rng.uniform(-kPi, kPi);
    const double speed = car ? rng.uniform(1.5, 5.0) : rng.uniform(0.5, 1.6);
    if (car) {
      const bool along_x = std::abs(std::cos(heading)) > std::abs(std::sin(heading));
      o.shape = along_x ? Rect{{0.0, 0.0}, 0.9, 0.45} : Rect{{0.0, 0.0}, 0.45, 0.9};
    } else {
      o.shape = Disc{{0.0, 0.0}, rng.uniform(0.2, 0.35)};
    }
    o.start = Pose2(rng.uniform(-reach, reach), rng.uniform(-reach, reach), 0.0);
    o.vx = speed * std::cos(heading);
    o.vy = speed * std::sin(heading);
    scene.dynamic_objects.push_back(o);
  }

  return simulate_sequence(scene, traj, spec, SensorModel{opts.n_beams, 0.0}, seed);
}

}  // namespace deeptrack
