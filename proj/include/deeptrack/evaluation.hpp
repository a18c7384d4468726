// SPDX-License-Identifier: Apache-2.0
//
// Prediction-horizon scoring, model comparison and occlusion tracking
// metrics.

#ifndef DEEPTRACK_EVALUATION_HPP_
#define DEEPTRACK_EVALUATION_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "deeptrack/model.hpp"
#include "deeptrack/schedule.hpp"
#include "deeptrack/simulator.hpp"

namespace deeptrack {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t scored() const { return tp + fp + fn + tn; }
  double precision() const;
  double recall() const;
  double f1() const;
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Thresholds `pred` (p >= threshold is occupied) and counts against
/// `target` over cells with mask = 1.
template <typename T>
ConfusionCounts score_cells(std::span<const T> pred, const BinaryGrid& target, const BinaryGrid& mask,
                            double threshold);

struct HorizonPoint {
  int offset = 0;  // frames since the last shown frame, 1-based
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool empty = false;  // no scored cells at this offset
};

struct HorizonCurve {
  std::vector<HorizonPoint> points;

  /// Builds the curve from per-offset pooled counts (index 0 = offset 1).
  static HorizonCurve from_counts(const std::vector<ConfusionCounts>& per_offset);
  const HorizonPoint& at(int offset) const { return points.at(static_cast<std::size_t>(offset - 1)); }
};

/// Micro-averaged precision/recall/F1 at each blanked offset, pooled over
/// every blank run of every sequence. Only cells visible in the target frame
/// are scored (and, with `moving`, only predictable ones).
template <typename T>
HorizonCurve f1_horizon(const Model<T>& model, const std::vector<SequenceBatch>& dataset,
                        const ShowBlankSchedule& schedule, double threshold = 0.5, bool moving = false);

struct TrackFrame {
  int frame = 0;
  bool occluded = false;
  double error = 0.0;  // cells
  bool saturated = false;
};

struct TrackOptions {
  double threshold = 0.5;
  int window_radius = 5;  // cells; also the saturated error value
};

/// Centroid of thresholded predictions inside a square window around the
/// object's true position versus the true centre, for every frame (input is
/// shown throughout). Frames with nothing predicted in the window report the
/// window radius.
template <typename T>
std::vector<TrackFrame> occlusion_track_error(const Model<T>& model, const OcclusionScenario& scenario,
                                              const TrackOptions& opts = {});

/// Largest error over the occluded frames (over all frames if none are).
double worst_occluded_error(const std::vector<TrackFrame>& frames);

struct ComparisonRow {
  int offset = 0;
  double f1_a = 0.0;
  double f1_b = 0.0;
  double diff = 0.0;  // a - b
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  int a_better = 0;
  int b_better = 0;
  int ties = 0;
  double mean_diff = 0.0;
};

/// Per-offset F1 differences; throws std::invalid_argument unless both
/// curves list the same offsets in the same order.
ComparisonReport compare_models(const HorizonCurve& a, const HorizonCurve& b);

/// Tab-separated table: offset, precision, recall, f1, n_cells.
void write_horizon_table(std::ostream& out, const HorizonCurve& curve);
void write_comparison_table(std::ostream& out, const ComparisonReport& report);

}  // namespace deeptrack

#endif  // DEEPTRACK_EVALUATION_HPP_
