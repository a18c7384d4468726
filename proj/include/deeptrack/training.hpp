// SPDX-License-Identifier: Apache-2.0
//
// Self-supervised training: the network sees show/blank input schedules and
// is scored against the observed occupancy of every frame, restricted to
// visible cells (and, for a moving sensor, to cells that were inside the
// field of view at the last shown frame).

#ifndef DEEPTRACK_TRAINING_HPP_
#define DEEPTRACK_TRAINING_HPP_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deeptrack/model.hpp"
#include "deeptrack/schedule.hpp"
#include "deeptrack/simulator.hpp"

namespace deeptrack {

enum class OptimizerKind { kAdam, kSgdMomentum };

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  ShowBlankSchedule schedule;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  AdamHyper adam;
  double momentum = 0.9;
  int batch_size = 1;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  bool moving_sensor = false;
  // Train a model without the spatial transformer on moving-sensor data
  // (the no-egomotion baseline).
  bool baseline_override = false;
  int plateau_window = 500;  // steps without improvement before stopping; 0 disables
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
  int threads = 1;
  std::ostream* log = nullptr;  // "step loss wall_ms" lines

  void validate() const;
};

/// Reads `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_key_values(std::istream& in);
std::map<std::string, std::string> read_key_values(const std::string& path);
/// Overrides fields of `base` from recognised keys; unknown keys throw.
TrainConfig apply_train_keys(TrainConfig base, const std::map<std::string, std::string>& keys);

/// First and second moment estimates for one parameter tensor.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update; `step` is the 1-based update count.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments& state, long step, double lr,
               const AdamHyper& hyper = {});

template <typename T>
void sgd_momentum_step(std::span<T> params, std::span<const T> grads, std::vector<double>& velocity, double lr,
                       double momentum);

/// Cell mask scored at `frame`: visibility, times the predictable-space mask
/// for blank frames of a moving sensor.
BinaryGrid loss_mask(const SequenceBatch& batch, const ShowBlankSchedule& schedule, int frame, bool moving);

/// Masked cross-entropy pooled over every frame of the rollout, averaged
/// over all contributing cells.
template <typename T>
Tensor<T> sequence_loss(const Model<T>& model, const SequenceBatch& batch, const ShowBlankSchedule& schedule,
                        bool moving);

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

enum class StopReason { kMaxSteps, kPlateau };

struct TrainResult {
  std::vector<StepRecord> history;
  StopReason stop = StopReason::kMaxSteps;
  int steps = 0;
};

/// Minibatch training in place. Deterministic for a given seed: each epoch
/// visits the dataset in a seeded permutation. Throws std::runtime_error on
/// a non-finite loss.
template <typename T>
TrainResult train(Model<T>& model, const std::vector<SequenceBatch>& dataset, const TrainConfig& cfg);

}  // namespace deeptrack

#endif  // DEEPTRACK_TRAINING_HPP_
