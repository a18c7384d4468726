// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/training.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <exception>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "deeptrack/random.hpp"

namespace deeptrack {

void TrainConfig::validate() const {
  schedule.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (max_steps < 0) throw std::invalid_argument("TrainConfig: max_steps must be >= 0");
  if (plateau_window < 0) throw std::invalid_argument("TrainConfig: plateau_window must be >= 0");
  if (threads < 1) throw std::invalid_argument("TrainConfig: threads must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0 || !(adam.epsilon > 0.0)) {
    throw std::invalid_argument("TrainConfig: bad Adam hyperparameters");
  }
  if (checkpoint_every < 0 || (checkpoint_every > 0 && checkpoint_path.empty())) {
    throw std::invalid_argument("TrainConfig: periodic checkpoints need a path");
  }
}

// --- key/value configuration ----------------------------------------------

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " expects a boolean, got '" + v + "'");
}

}  // namespace

std::map<std::string, std::string> read_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return read_key_values(in);
}

TrainConfig apply_train_keys(TrainConfig c, const std::map<std::string, std::string>& keys) {
  for (const auto& [k, v] : keys) {
    if (k == "learning_rate" || k == "lr") {
      c.learning_rate = to_double(k, v);
    } else if (k == "optimizer") {
      if (v == "adam") {
        c.optimizer = OptimizerKind::kAdam;
      } else if (v == "sgd" || v == "sgd_momentum") {
        c.optimizer = OptimizerKind::kSgdMomentum;
      } else {
        throw std::invalid_argument("config: unknown optimizer '" + v + "'");
      }
    } else if (k == "beta1") {
      c.adam.beta1 = to_double(k, v);
    } else if (k == "beta2") {
      c.adam.beta2 = to_double(k, v);
    } else if (k == "epsilon") {
      c.adam.epsilon = to_double(k, v);
    } else if (k == "momentum") {
      c.momentum = to_double(k, v);
    } else if (k == "batch_size" || k == "batch") {
      c.batch_size = static_cast<int>(to_int(k, v));
    } else if (k == "max_steps" || k == "steps") {
      c.max_steps = static_cast<int>(to_int(k, v));
    } else if (k == "seed") {
      c.seed = static_cast<std::uint64_t>(to_int(k, v));
    } else if (k == "show") {
      c.schedule.show = static_cast<int>(to_int(k, v));
    } else if (k == "blank") {
      c.schedule.blank = static_cast<int>(to_int(k, v));
    } else if (k == "moving") {
      c.moving_sensor = to_bool(k, v);
    } else if (k == "baseline_override") {
      c.baseline_override = to_bool(k, v);
    } else if (k == "plateau_window") {
      c.plateau_window = static_cast<int>(to_int(k, v));
    } else if (k == "checkpoint_every") {
      c.checkpoint_every = static_cast<int>(to_int(k, v));
    } else if (k == "threads") {
      c.threads = static_cast<int>(to_int(k, v));
    } else {
      throw std::invalid_argument("config: unknown key '" + k + "'");
    }
  }
  return c;
}

// --- optimisers -------------------------------------------------------------

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments& state, long step, double lr,
               const AdamHyper& hyper) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
  if (step < 1) throw std::invalid_argument("adam_step: step is 1-based");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = static_cast<T>(params[i] - lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon));
  }
}

template <typename T>
void sgd_momentum_step(std::span<T> params, std::span<const T> grads, std::vector<double>& velocity, double lr,
                       double momentum) {
  if (grads.size() != params.size()) throw std::invalid_argument("sgd_momentum_step: gradient size mismatch");
  if (velocity.size() != params.size()) velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] = static_cast<T>(params[i] - lr * velocity[i]);
  }
}

// --- loss -------------------------------------------------------------------

BinaryGrid loss_mask(const SequenceBatch& batch, const ShowBlankSchedule& schedule, int frame, bool moving) {
  const BinaryGrid& vis = batch.observations.at(frame).vis;
  if (!moving || !schedule.is_blank(frame)) return vis;
  if (batch.rel_transforms.size() != batch.observations.size()) {
    throw std::invalid_argument("loss_mask: moving-sensor loss needs per-frame egomotion");
  }
  const int from = schedule.last_shown(frame) + 1;
  const std::span<const Pose2> chain(batch.rel_transforms.data() + from, static_cast<std::size_t>(frame - from + 1));
  const BinaryGrid reach = predictable_mask(chain, batch.grid);
  BinaryGrid mask(vis.size());
  for (int r = 0; r < vis.size(); ++r) {
    for (int c = 0; c < vis.size(); ++c) mask.set(r, c, vis.at(r, c) & reach.at(r, c));
  }
  return mask;
}

template <typename T>
Tensor<T> sequence_loss(const Model<T>& model, const SequenceBatch& batch, const ShowBlankSchedule& schedule,
                        bool moving) {
  if (batch.grid.size_cells != model.config().grid.size_cells) {
    throw std::invalid_argument("sequence_loss: sequence grid does not match the model");
  }
  const std::vector<Tensor<T>> preds = rollout(model, batch, schedule);
  Tensor<T> total;
  std::size_t cells = 0;
  for (int k = 0; k < batch.frame_count(); ++k) {
    const BinaryGrid mask = loss_mask(batch, schedule, k, moving);
    cells += mask.count();
    Tensor<T> term = masked_bce_sum(preds[k], grid_tensor<T>(batch.observations[k].occ), grid_tensor<T>(mask));
    total = total.defined() ? add(total, term) : term;
  }
  if (cells == 0) return scale(total, T(0));
  return scale(total, static_cast<T>(1.0 / static_cast<double>(cells)));
}

// --- training loop -----------------------------------------------------------

namespace {

// Runs forward/backward for a slice of the minibatch, leaving gradients of
// (sum of losses) / batch_size on the model parameters.
template <typename T>
double accumulate_slice(Model<T>& model, const std::vector<SequenceBatch>& dataset, std::span<const std::size_t> idx,
                        const TrainConfig& cfg, std::size_t batch_size) {
  double loss = 0.0;
  for (std::size_t i : idx) {
    Tensor<T> l = sequence_loss(model, dataset[i], cfg.schedule, cfg.moving_sensor);
    loss += static_cast<double>(l.item());
    scale(l, static_cast<T>(1.0 / static_cast<double>(batch_size))).backward();
  }
  return loss;
}

}  // namespace

template <typename T>
TrainResult train(Model<T>& model, const std::vector<SequenceBatch>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.moving_sensor && !model.config().use_stm && !cfg.baseline_override) {
    throw std::invalid_argument(
        "train: moving-sensor data needs a model with the egomotion transformer (or the baseline override)");
  }
  for (const SequenceBatch& s : dataset) {
    if (s.frame_count() != cfg.schedule.total_frames) {
      throw std::invalid_argument("train: sequence length does not match the schedule");
    }
    if (s.grid.size_cells != model.config().grid.size_cells) {
      throw std::invalid_argument("train: sequence grid does not match the model");
    }
  }

  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), dataset.size());
  const int shards = std::min<int>(cfg.threads, static_cast<int>(batch));
  std::vector<Model<T>> workers;
  for (int s = 1; s < shards; ++s) workers.push_back(model);

  std::vector<Tensor<T>*> params = model.parameters();
  std::vector<AdamMoments> adam(params.size());
  std::vector<std::vector<double>> velocity(params.size());

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  int best_step = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int step = 1; step <= cfg.max_steps; ++step) {
    std::vector<std::size_t> picked;
    while (picked.size() < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(rng.integer(0, static_cast<int>(i - 1)))]);
        }
        cursor = 0;
      }
      picked.push_back(order[cursor++]);
    }

    model.zero_grad();
    double loss_sum = 0.0;
    if (shards == 1) {
      loss_sum = accumulate_slice(model, dataset, picked, cfg, batch);
    } else {
      // Contiguous slices; shard 0 runs on the caller's model, the rest on
      // copies whose gradients are reduced in shard order.
      std::vector<double> shard_loss(static_cast<std::size_t>(shards), 0.0);
      std::vector<std::thread> pool;
      const auto slice = [&](int s) {
        const std::size_t lo = batch * static_cast<std::size_t>(s) / static_cast<std::size_t>(shards);
        const std::size_t hi = batch * static_cast<std::size_t>(s + 1) / static_cast<std::size_t>(shards);
        return std::span<const std::size_t>(picked.data() + lo, hi - lo);
      };
      for (int s = 1; s < shards; ++s) {
        Model<T>& w = workers[static_cast<std::size_t>(s - 1)];
        w = model;
        w.zero_grad();
        pool.emplace_back([&, s, wp = &w] {
          shard_loss[static_cast<std::size_t>(s)] = accumulate_slice(*wp, dataset, slice(s), cfg, batch);
        });
      }
      std::exception_ptr failure;
      try {
        shard_loss[0] = accumulate_slice(model, dataset, slice(0), cfg, batch);
      } catch (...) {
        failure = std::current_exception();
      }
      for (std::thread& t : pool) t.join();
      if (failure) std::rethrow_exception(failure);
      for (int s = 1; s < shards; ++s) {
        std::vector<Tensor<T>*> wp = workers[static_cast<std::size_t>(s - 1)].parameters();
        for (std::size_t p = 0; p < params.size(); ++p) {
          std::span<const T> g = wp[p]->grad();
          if (g.empty()) continue;
          std::span<T> dst = params[p]->mutable_grad();
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
      }
      for (double l : shard_loss) loss_sum += l;
    }

    const double loss = loss_sum / static_cast<double>(batch);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train: loss diverged at step " + std::to_string(step));
    }

    for (std::size_t p = 0; p < params.size(); ++p) {
      std::span<T> values = params[p]->mutable_values();
      std::span<const T> grads = params[p]->mutable_grad();
      if (cfg.optimizer == OptimizerKind::kAdam) {
        adam_step(values, grads, adam[p], step, cfg.learning_rate, cfg.adam);
      } else {
        sgd_momentum_step(values, grads, velocity[p], cfg.learning_rate, cfg.momentum);
      }
    }

    const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back({step, loss, wall_ms});
    result.steps = step;
    if (cfg.log != nullptr) *cfg.log << step << ' ' << loss << ' ' << wall_ms << '\n';
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) save_checkpoint(model, cfg.checkpoint_path);

    if (loss < best) {
      best = loss;
      best_step = step;
    } else if (cfg.plateau_window > 0 && step - best_step >= cfg.plateau_window) {
      result.stop = StopReason::kPlateau;
      break;
    }
  }
  model.zero_grad();
  return result;
}

template void adam_step(std::span<float>, std::span<const float>, AdamMoments&, long, double, const AdamHyper&);
template void adam_step(std::span<double>, std::span<const double>, AdamMoments&, long, double, const AdamHyper&);
template void sgd_momentum_step(std::span<float>, std::span<const float>, std::vector<double>&, double, double);
template void sgd_momentum_step(std::span<double>, std::span<const double>, std::vector<double>&, double, double);
template Tensor<float> sequence_loss(const Model<float>&, const SequenceBatch&, const ShowBlankSchedule&, bool);
template Tensor<double> sequence_loss(const Model<double>&, const SequenceBatch&, const ShowBlankSchedule&, bool);
template TrainResult train(Model<float>&, const std::vector<SequenceBatch>&, const TrainConfig&);
template TrainResult train(Model<double>&, const std::vector<SequenceBatch>&, const TrainConfig&);

}  // namespace deeptrack
