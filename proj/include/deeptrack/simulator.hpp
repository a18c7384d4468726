// SPDX-License-Identifier: Apache-2.0
//
// Synthetic 2D lidar worlds: static and moving discs/rectangles, sensor
// trajectories, ideal (optionally noisy) range scans and unoccluded truth.

#ifndef DEEPTRACK_SIMULATOR_HPP_
#define DEEPTRACK_SIMULATOR_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "deeptrack/geometry.hpp"

namespace deeptrack {

struct Disc {
  Vec2 center;
  double radius = 0.0;
};

/// Axis-aligned rectangle given by its centre and half extents.
struct Rect {
  Vec2 center;
  double half_x = 0.0;
  double half_y = 0.0;
};

using Shape = std::variant<Disc, Rect>;

/// Distance along the unit ray (origin, dir) to the first intersection with
/// `shape`, or nullopt. Shapes containing the origin are ignored.
std::optional<double> intersect_ray(const Shape& shape, const Vec2& origin, const Vec2& dir);
bool contains(const Shape& shape, const Vec2& p);
Shape translated(const Shape& shape, const Vec2& offset);

struct Bounds {
  double min_x = -10.0;
  double min_y = -10.0;
  double max_x = 10.0;
  double max_y = 10.0;
};

/// A shape moving at constant speed. Its velocity vector rotates at
/// `yaw_rate` (curved paths); the shape itself stays axis-aligned.
struct DynamicObject {
  Shape shape;  // defined relative to `start`
  Pose2 start;
  double vx = 0.0;  // m/s, world frame
  double vy = 0.0;
  double yaw_rate = 0.0;  // rad/s
};

struct WorldScene {
  std::vector<Shape> static_shapes;
  std::vector<DynamicObject> dynamic_objects;
  Bounds bounds;

  /// Throws std::invalid_argument on non-positive extents.
  void validate() const;
  std::size_t shape_count() const { return static_shapes.size() + dynamic_objects.size(); }
};

enum class TrajectoryKind { kStatic, kStraight, kTurning, kPiecewise };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kStatic;
  double speed = 0.0;     // m/s
  double yaw_rate = 0.0;  // rad/s; piecewise draws from {-yaw_rate, 0, +yaw_rate}
  double duration = 5.0;  // s
  double frame_rate = 8.0;  // Hz
  Pose2 start;
  double segment_duration = 1.0;  // s, piecewise only

  /// Frame count; throws unless duration * frame_rate is a whole number.
  int frame_count() const;
};

struct SequenceBatch {
  GridSpec grid;
  std::vector<ObservationGrid> observations;
  std::vector<Pose2> rel_transforms;  // [k] = T_{k,k-1}; identity at k = 0
  std::optional<std::vector<BinaryGrid>> truth_occ;

  int frame_count() const { return static_cast<int>(observations.size()); }
  friend bool operator==(const SequenceBatch&, const SequenceBatch&) = default;
};

struct SensorModel {
  int n_beams = 720;
  double range_noise = 0.0;  // half-width of zero-mean uniform noise, metres
};

/// Per-frame world-frame sensor poses for a trajectory.
std::vector<Pose2> trajectory_poses(const TrajectorySpec& traj, std::uint64_t seed);

/// World-frame shapes at time `t`, static shapes first.
std::vector<Shape> scene_shapes_at(const WorldScene& scene, double t);

/// Casts `n_beams` equally spaced beams (bearing 2*pi*b/n in the sensor
/// frame) from `pose` against `shapes`; the nearest hit wins.
std::vector<RangeReading> cast_scan(const std::vector<Shape>& shapes, const Pose2& pose, const GridSpec& spec,
                                    const SensorModel& sensor, std::uint64_t* noise_state = nullptr);

/// Cell (r, c) is 1 iff its centre, placed in the world at `pose`, lies
/// inside any shape.
BinaryGrid rasterize_truth(const std::vector<Shape>& shapes, const Pose2& pose, const GridSpec& spec);

SequenceBatch simulate_sequence(const WorldScene& scene, const TrajectorySpec& traj, const GridSpec& spec,
                                const SensorModel& sensor, std::uint64_t seed);
SequenceBatch simulate_sequence(const WorldScene& scene, const TrajectorySpec& traj, const GridSpec& spec,
                                int n_beams, std::uint64_t seed);

// --- Scripted and randomized scenarios -----------------------------------

struct OcclusionOptions {
  int occluded_frames = 5;
  double speed_cells_per_frame = 1.0;
  int frames = 40;
  double frame_rate = 8.0;
  bool with_wall = true;
  double object_radius = 0.3;
  double lane_distance = 2.4;   // metres from the sensor to the object path
  double wall_distance = 1.0;   // metres from the sensor to the wall's near face
  int first_occluded = 20;      // frame index at which full occlusion starts
};

struct OcclusionScenario {
  SequenceBatch batch;
  std::vector<int> occluded_frames;
  std::vector<Vec2> object_centers;  // sensor frame, per frame
  double object_radius = 0.0;
};

/// Deterministic scene: a disc at constant velocity passes behind a wall and
/// is fully hidden for exactly `occluded_frames` frames. The seed selects the
/// direction of travel and a small lateral offset.
OcclusionScenario occlusion_scenario(std::uint64_t seed, const GridSpec& spec, const OcclusionOptions& opts = {});

/// Randomised occlusion options for training data: lane and wall distance,
/// speed, occlusion length and onset all vary. Needs at least 20 frames.
OcclusionOptions varied_occlusion_options(std::uint64_t seed, int frames = 40);

struct CrossingOptions {
  int frames = 40;
  double frame_rate = 8.0;
  int min_pedestrians = 3;
  int max_pedestrians = 6;
  double min_speed = 0.6;
  double max_speed = 1.6;
  int n_beams = 720;
};

/// Static sensor at an intersection-like scene: walls and posts plus
/// pedestrians crossing in random directions.
WorldScene crossing_scene(std::uint64_t seed, const GridSpec& spec, const CrossingOptions& opts = {});
SequenceBatch crossing_sequence(std::uint64_t seed, const GridSpec& spec, const CrossingOptions& opts = {});

struct MovingOptions {
  int frames = 40;
  double frame_rate = 10.0;
  bool turning = true;
  double min_speed = 2.0;
  double max_speed = 4.0;
  double max_yaw_rate = 0.6;
  int n_beams = 720;
};

/// Moving sensor driving among buildings, parked and moving cars, and
/// pedestrians. `turning` selects piecewise-turning trajectories, otherwise
/// straight constant-velocity ones.
SequenceBatch moving_sequence(std::uint64_t seed, const GridSpec& spec, const MovingOptions& opts = {});

}  // namespace deeptrack

#endif  // DEEPTRACK_SIMULATOR_HPP_
