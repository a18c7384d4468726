// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#include "deeptrack/training.hpp"

namespace deeptrack {

double ConfusionCounts::precision() const {
  return tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
}

double ConfusionCounts::recall() const {
  return tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
}

double ConfusionCounts::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

template <typename T>
ConfusionCounts score_cells(std::span<const T> pred, const BinaryGrid& target, const BinaryGrid& mask,
                            double threshold) {
  const auto t = target.cells();
  const auto m = mask.cells();
  if (pred.size() != t.size() || m.size() != t.size()) throw std::invalid_argument("score_cells: size mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!m[i]) continue;
    const bool p = static_cast<double>(pred[i]) >= threshold;
    if (p && t[i]) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (t[i]) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

HorizonCurve HorizonCurve::from_counts(const std::vector<ConfusionCounts>& per_offset) {
  HorizonCurve curve;
  for (std::size_t k = 0; k < per_offset.size(); ++k) {
    const ConfusionCounts& c = per_offset[k];
    curve.points.push_back({static_cast<int>(k + 1), c, c.precision(), c.recall(), c.f1(), c.scored() == 0});
  }
  return curve;
}

template <typename T>
HorizonCurve f1_horizon(const Model<T>& model, const std::vector<SequenceBatch>& dataset,
                        const ShowBlankSchedule& schedule, double threshold, bool moving) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("f1_horizon: threshold must lie in (0, 1)");
  schedule.validate();
  if (schedule.blank < 1) throw std::invalid_argument("f1_horizon: schedule has no blanked frames");
  std::vector<ConfusionCounts> counts(static_cast<std::size_t>(schedule.blank));
  NoGradGuard no_grad;
  for (const SequenceBatch& batch : dataset) {
    if (batch.grid.size_cells != model.config().grid.size_cells) {
      throw std::invalid_argument("f1_horizon: sequence grid does not match the model");
    }
    const std::vector<Tensor<T>> preds = rollout(model, batch, schedule);
    for (int k = 0; k < batch.frame_count(); ++k) {
      const int offset = schedule.blank_offset(k);
      if (offset == 0) continue;
      const BinaryGrid mask = loss_mask(batch, schedule, k, moving);
      counts[static_cast<std::size_t>(offset - 1)] +=
          score_cells(preds[k].values(), batch.observations[k].occ, mask, threshold);
    }
  }
  return HorizonCurve::from_counts(counts);
}

template <typename T>
std::vector<TrackFrame> occlusion_track_error(const Model<T>& model, const OcclusionScenario& scenario,
                                              const TrackOptions& opts) {
  if (!(opts.threshold > 0.0 && opts.threshold < 1.0)) {
    throw std::invalid_argument("occlusion_track_error: threshold must lie in (0, 1)");
  }
  if (opts.window_radius < 1) throw std::invalid_argument("occlusion_track_error: window radius must be >= 1");
  const SequenceBatch& batch = scenario.batch;
  if (!batch.truth_occ) throw std::invalid_argument("occlusion_track_error: scenario carries no ground truth");
  if (scenario.object_centers.size() != static_cast<std::size_t>(batch.frame_count())) {
    throw std::invalid_argument("occlusion_track_error: object track length does not match the sequence");
  }
  NoGradGuard no_grad;
  const std::vector<Tensor<T>> preds = rollout(model, batch, ShowBlankSchedule::all_shown(batch.frame_count()));
  const GridSpec& spec = batch.grid;
  const int m = spec.size_cells;
  const int center = spec.center_index();
  std::vector<TrackFrame> out;
  for (int k = 0; k < batch.frame_count(); ++k) {
    const Vec2 obj = scenario.object_centers[static_cast<std::size_t>(k)];
    // True centre in fractional cell indices.
    const double tc = obj.x / spec.cell_size + center;
    const double tr = obj.y / spec.cell_size + center;
    const int wc = static_cast<int>(std::lround(tc));
    const int wr = static_cast<int>(std::lround(tr));
    double sr = 0.0;
    double sc = 0.0;
    int n = 0;
    const auto p = preds[k].values();
    for (int r = std::max(0, wr - opts.window_radius); r <= std::min(m - 1, wr + opts.window_radius); ++r) {
      for (int c = std::max(0, wc - opts.window_radius); c <= std::min(m - 1, wc + opts.window_radius); ++c) {
        if (static_cast<double>(p[static_cast<std::size_t>(r) * m + c]) >= opts.threshold) {
          sr += r;
          sc += c;
          ++n;
        }
      }
    }
    TrackFrame f;
    f.frame = k;
    f.occluded = std::find(scenario.occluded_frames.begin(), scenario.occluded_frames.end(), k) !=
                 scenario.occluded_frames.end();
    if (n == 0) {
      f.error = opts.window_radius;
      f.saturated = true;
    } else {
      f.error = std::hypot(sr / n - tr, sc / n - tc);
    }
    out.push_back(f);
  }
  return out;
}

double worst_occluded_error(const std::vector<TrackFrame>& frames) {
  double worst = 0.0;
  bool any = false;
  for (const TrackFrame& f : frames) {
    if (!f.occluded) continue;
    worst = std::max(worst, f.error);
    any = true;
  }
  if (!any) {
    for (const TrackFrame& f : frames) worst = std::max(worst, f.error);
  }
  return worst;
}

ComparisonReport compare_models(const HorizonCurve& a, const HorizonCurve& b) {
  if (a.points.size() != b.points.size()) throw std::invalid_argument("compare_models: curves differ in length");
  ComparisonReport report;
  double total = 0.0;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (a.points[i].offset != b.points[i].offset) {
      throw std::invalid_argument("compare_models: curves list different offsets");
    }
    ComparisonRow row{a.points[i].offset, a.points[i].f1, b.points[i].f1, a.points[i].f1 - b.points[i].f1};
    if (row.diff > 0) {
      ++report.a_better;
    } else if (row.diff < 0) {
      ++report.b_better;
    } else {
      ++report.ties;
    }
    total += row.diff;
    report.rows.push_back(row);
  }
  report.mean_diff = report.rows.empty() ? 0.0 : total / static_cast<double>(report.rows.size());
  return report;
}

void write_horizon_table(std::ostream& out, const HorizonCurve& curve) {
  out << "offset\tprecision\trecall\tf1\tn_cells\n";
  out << std::fixed << std::setprecision(6);
  for (const HorizonPoint& p : curve.points) {
    out << p.offset << '\t' << p.precision << '\t' << p.recall << '\t' << p.f1 << '\t' << p.counts.scored() << '\n';
  }
  out << std::defaultfloat;
}

void write_comparison_table(std::ostream& out, const ComparisonReport& report) {
  out << "offset\tf1_a\tf1_b\tdiff\n";
  out << std::fixed << std::setprecision(6);
  for (const ComparisonRow& r : report.rows) out << r.offset << '\t' << r.f1_a << '\t' << r.f1_b << '\t' << r.diff << '\n';
  out << "# a_better=" << report.a_better << " b_better=" << report.b_better << " ties=" << report.ties
      << " mean_diff=" << report.mean_diff << '\n';
  out << std::defaultfloat;
}

template ConfusionCounts score_cells(std::span<const float>, const BinaryGrid&, const BinaryGrid&, double);
template ConfusionCounts score_cells(std::span<const double>, const BinaryGrid&, const BinaryGrid&, double);
template HorizonCurve f1_horizon(const Model<float>&, const std::vector<SequenceBatch>&, const ShowBlankSchedule&,
                                 double, bool);
template HorizonCurve f1_horizon(const Model<double>&, const std::vector<SequenceBatch>&, const ShowBlankSchedule&,
                                 double, bool);
template std::vector<TrackFrame> occlusion_track_error(const Model<float>&, const OcclusionScenario&,
                                                       const TrackOptions&);
template std::vector<TrackFrame> occlusion_track_error(const Model<double>&, const OcclusionScenario&,
                                                       const TrackOptions&);

}  // namespace deeptrack
