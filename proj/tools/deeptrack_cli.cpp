// SPDX-License-Identifier: Apache-2.0
//
// deeptrack gen | train | eval | render

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deeptrack/dataset.hpp"
#include "deeptrack/evaluation.hpp"
#include "deeptrack/model.hpp"
#include "deeptrack/render.hpp"
#include "deeptrack/training.hpp"

namespace fs = std::filesystem;
using namespace deeptrack;

namespace {

constexpr const char* kOcclusionSidecar = "occlusion.json";

// Per-sequence seed derived from the dataset seed (splitmix64 finaliser).
std::uint64_t sequence_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

bool is_moving(const std::vector<SequenceBatch>& data) {
  for (const SequenceBatch& b : data) {
    for (const Pose2& t : b.rel_transforms) {
      if (!t.is_identity()) return true;
    }
  }
  return false;
}

int thread_override(int fallback) {
  if (const char* env = std::getenv("DEEPTRACK_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("DEEPTRACK_THREADS must be a positive integer");
  }
  return fallback;
}

// --- gen ---------------------------------------------------------------------

struct GenArgs {
  std::string scenario;
  std::uint64_t seed = 0;
  int sequences = 1;
  std::string out;
  int size = 51;
  double cell_size = 0.2;
  int frames = 40;
};

int cmd_gen(const GenArgs& a) {
  if (a.sequences < 1) throw std::invalid_argument("--sequences must be >= 1");
  GridSpec spec;
  spec.size_cells = a.size;
  spec.cell_size = a.cell_size;
  spec.validate();

  DatasetManifest manifest;
  manifest.grid = spec;
  manifest.scenario = a.scenario;
  manifest.seed = a.seed;
  std::vector<SequenceBatch> batches;
  nlohmann::ordered_json sidecar = nlohmann::ordered_json::array();

  if (a.scenario == "static-crossing") {
    CrossingOptions opts;
    opts.frames = a.frames;
    manifest.frame_rate = opts.frame_rate;
    for (int i = 0; i < a.sequences; ++i) batches.push_back(crossing_sequence(sequence_seed(a.seed, i), spec, opts));
  } else if (a.scenario == "occlusion") {
    OcclusionOptions opts;
    opts.frames = a.frames;
    manifest.frame_rate = opts.frame_rate;
    for (int i = 0; i < a.sequences; ++i) {
      // The first sequence is the scripted scenario for the dataset seed
      // itself; the rest vary the geometry for use as training data.
      const std::uint64_t seed = i == 0 ? a.seed : sequence_seed(a.seed, i);
      OcclusionScenario s = occlusion_scenario(seed, spec, i == 0 ? opts : varied_occlusion_options(seed, a.frames));
      nlohmann::ordered_json centres = nlohmann::ordered_json::array();
      for (const Vec2& c : s.object_centers) centres.push_back({c.x, c.y});
      sidecar.push_back({{"occluded_frames", s.occluded_frames},
                         {"object_radius", s.object_radius},
                         {"object_centers", centres}});
      batches.push_back(std::move(s.batch));
    }
  } else if (a.scenario == "moving-straight" || a.scenario == "moving-turning") {
    MovingOptions opts;
    opts.frames = a.frames;
    opts.turning = a.scenario == "moving-turning";
    manifest.frame_rate = opts.frame_rate;
    for (int i = 0; i < a.sequences; ++i) batches.push_back(moving_sequence(sequence_seed(a.seed, i), spec, opts));
  } else {
    throw std::invalid_argument("unknown scenario '" + a.scenario + "'");
  }

  write_dataset(a.out, manifest, batches);
  if (!sidecar.empty()) {
    std::ofstream out(fs::path(a.out) / kOcclusionSidecar, std::ios::trunc);
    out << sidecar.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write the occlusion sidecar");
  }
  read_dataset(a.out);  // validate what was written
  std::cout << "wrote " << batches.size() << " sequences to " << a.out << '\n';
  return 0;
}

std::vector<OcclusionScenario> read_occlusion_sidecar(const std::string& dir, const std::vector<SequenceBatch>& data) {
  std::vector<OcclusionScenario> out;
  std::ifstream in(fs::path(dir) / kOcclusionSidecar);
  if (!in) return out;
  const nlohmann::json j = nlohmann::json::parse(in);
  if (j.size() != data.size()) throw std::runtime_error("occlusion sidecar does not match the dataset");
  for (std::size_t i = 0; i < data.size(); ++i) {
    OcclusionScenario s;
    s.batch = data[i];
    s.occluded_frames = j[i].at("occluded_frames").get<std::vector<int>>();
    s.object_radius = j[i].at("object_radius").get<double>();
    for (const auto& c : j[i].at("object_centers")) s.object_centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    out.push_back(std::move(s));
  }
  return out;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string variant = "GRU3DilConv_48";
  std::string stm = "off";
  int show = 10;
  int blank = 10;
  int steps = 1000;
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  double lr = 1e-3;
  int batch = 1;
  int threads = 1;
  int plateau = 500;
  int checkpoint_every = 0;
  bool baseline_override = false;
  bool f64 = false;
  std::string log;
};

template <typename T>
int run_train(const TrainArgs& a, const CLI::App& app) {
  DatasetManifest manifest;
  const std::vector<SequenceBatch> data = read_dataset(a.data, &manifest);
  if (data.empty()) throw std::invalid_argument("dataset is empty");

  TrainConfig cfg;
  if (!a.config.empty()) cfg = apply_train_keys(cfg, read_key_values(a.config));
  // Explicit flags win over the config file.
  const auto given = [&](const char* name) { return app.count(name) > 0; };
  if (given("--show") || a.config.empty()) cfg.schedule.show = a.show;
  if (given("--blank") || a.config.empty()) cfg.schedule.blank = a.blank;
  if (given("--steps") || a.config.empty()) cfg.max_steps = a.steps;
  if (given("--seed") || a.config.empty()) cfg.seed = a.seed;
  if (given("--lr") || a.config.empty()) cfg.learning_rate = a.lr;
  if (given("--batch") || a.config.empty()) cfg.batch_size = a.batch;
  if (given("--plateau-window") || a.config.empty()) cfg.plateau_window = a.plateau;
  if (given("--checkpoint-every") || a.config.empty()) cfg.checkpoint_every = a.checkpoint_every;
  if (given("--threads") || a.config.empty()) cfg.threads = a.threads;
  cfg.threads = thread_override(cfg.threads);
  cfg.schedule.total_frames = data.front().frame_count();
  cfg.moving_sensor = is_moving(data);
  cfg.baseline_override = cfg.baseline_override || a.baseline_override;
  cfg.checkpoint_path = a.out;

  const auto variant = parse_variant(a.variant);
  if (!variant) throw std::invalid_argument("unknown variant '" + a.variant + "'");
  if (a.stm != "on" && a.stm != "off") throw std::invalid_argument("--stm must be on or off");
  const bool use_stm = a.stm == "on";
  if (cfg.moving_sensor && !use_stm && !cfg.baseline_override) {
    throw std::invalid_argument("moving-sensor data needs --stm on (or --baseline-override for the baseline)");
  }
  cfg.validate();
  cfg.schedule.validate();

  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot open log " + a.log);
    cfg.log = &log_file;
  } else {
    cfg.log = &std::cout;
  }

  Model<T> model = Model<T>::build(ModelConfig::for_variant(*variant, manifest.grid, use_stm), cfg.seed);
  const TrainResult r = train(model, data, cfg);
  save_checkpoint(model, a.out);
  std::cout << "stopped: " << (r.stop == StopReason::kPlateau ? "plateau" : "max_steps") << " after " << r.steps
            << " steps";
  if (!r.history.empty()) std::cout << ", final loss " << r.history.back().loss;
  std::cout << "\nsaved " << a.out << '\n';
  return 0;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> ckpts;
  std::string data;
  double threshold = 0.5;
  int show = 10;
  int blank = 10;
  std::string out = ".";
};

int cmd_eval(const EvalArgs& a) {
  if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw std::invalid_argument("--threshold must lie in (0, 1)");
  if (a.ckpts.empty() || a.ckpts.size() > 2) throw std::invalid_argument("give one or two --ckpt");
  DatasetManifest manifest;
  const std::vector<SequenceBatch> data = read_dataset(a.data, &manifest);
  if (data.empty()) throw std::invalid_argument("dataset is empty");
  const bool moving = is_moving(data);
  const ShowBlankSchedule schedule{data.front().frame_count(), a.show, a.blank};
  schedule.validate();
  fs::create_directories(a.out);

  std::vector<HorizonCurve> curves;
  for (std::size_t i = 0; i < a.ckpts.size(); ++i) {
    const Model<float> model = load_checkpoint<float>(a.ckpts[i]);
    if (!(model.config().grid == manifest.grid)) {
      throw std::invalid_argument("checkpoint " + a.ckpts[i] + " was built for a different grid");
    }
    curves.push_back(f1_horizon(model, data, schedule, a.threshold, moving));
    const std::string name = i == 0 ? "horizon_a.tsv" : "horizon_b.tsv";
    std::ofstream out(fs::path(a.out) / name, std::ios::trunc);
    write_horizon_table(out, curves.back());
    if (!out) throw std::runtime_error("cannot write " + name);
    std::cout << "# " << a.ckpts[i] << '\n';
    write_horizon_table(std::cout, curves.back());

    const auto scenarios = read_occlusion_sidecar(a.data, data);
    if (!scenarios.empty()) {
      std::ofstream track(fs::path(a.out) / (i == 0 ? "tracking_a.tsv" : "tracking_b.tsv"), std::ios::trunc);
      track << "sequence\tframe\toccluded\terror_cells\tsaturated\n";
      for (std::size_t s = 0; s < scenarios.size(); ++s) {
        for (const TrackFrame& f : occlusion_track_error(model, scenarios[s])) {
          track << s << '\t' << f.frame << '\t' << f.occluded << '\t' << f.error << '\t' << f.saturated << '\n';
        }
      }
    }
  }
  if (curves.size() == 2) {
    const ComparisonReport report = compare_models(curves[0], curves[1]);
    std::ofstream out(fs::path(a.out) / "comparison.tsv", std::ios::trunc);
    write_comparison_table(out, report);
    std::cout << "# comparison (a - b)\n";
    write_comparison_table(std::cout, report);
  }
  write_ppm(plot_horizon(curves), (fs::path(a.out) / "horizon.ppm").string());
  return 0;
}

// --- render ------------------------------------------------------------------

struct RenderArgs {
  std::string ckpt;
  std::string data;
  int sequence = 0;
  int show = 10;
  int blank = 10;
  std::string out;
  int scale = 4;
  double threshold = 0.5;
  bool overlay = false;
  std::vector<int> hidden;
  int hidden_layer = 0;
};

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

int cmd_render(const RenderArgs& a) {
  const std::vector<SequenceBatch> data = read_dataset(a.data);
  if (a.sequence < 0 || a.sequence >= static_cast<int>(data.size())) throw std::invalid_argument("--sequence out of range");
  const SequenceBatch& batch = data[static_cast<std::size_t>(a.sequence)];
  if (a.overlay && !batch.truth_occ) throw std::invalid_argument("--overlay needs ground truth in the sequence");
  const Model<float> model = load_checkpoint<float>(a.ckpt);
  if (!(model.config().grid == batch.grid)) throw std::invalid_argument("checkpoint was built for a different grid");
  if (!a.hidden.empty() && (a.hidden_layer < 0 || a.hidden_layer >= static_cast<int>(model.config().layers.size()))) {
    throw std::invalid_argument("--hidden-layer out of range");
  }
  const ShowBlankSchedule schedule{batch.frame_count(), a.show, a.blank};
  schedule.validate();
  fs::create_directories(a.out);

  const int m = batch.grid.size_cells;
  BinaryGrid everywhere(m);
  for (auto& c : everywhere.cells()) c = 1;
  NoGradGuard no_grad;
  HiddenState<float> h = model.initial_state();
  for (int k = 0; k < batch.frame_count(); ++k) {
    const bool blank = schedule.is_blank(k);
    const Pose2 ego = model.config().use_stm ? batch.rel_transforms[static_cast<std::size_t>(k)] : Pose2::identity();
    h = model.step(h, blank ? nullptr : &batch.observations[static_cast<std::size_t>(k)], ego);
    const std::vector<double> p = to_double(model.decode(h).values());

    std::vector<Image> row;
    row.push_back(blank ? Image(m * a.scale, m * a.scale, palette::kUnobserved)
                        : render_observation(batch.observations[static_cast<std::size_t>(k)], a.scale));
    row.push_back(render_probability(p, m, a.scale));
    if (a.overlay) {
      row.push_back(render_overlay(p, (*batch.truth_occ)[static_cast<std::size_t>(k)], everywhere, a.threshold, a.scale));
    }
    row.push_back(render_overlay(p, batch.observations[static_cast<std::size_t>(k)].occ,
                                 batch.observations[static_cast<std::size_t>(k)].vis, a.threshold, a.scale));
    Image frame = hstack(row);
    if (!a.hidden.empty()) {
      const Tensor<float>& layer = h.layers[static_cast<std::size_t>(a.hidden_layer)];
      const std::vector<double> act = to_double(layer.values());
      frame = vstack({frame, render_hidden_tiles(act, layer.shape().c, m, a.hidden, a.scale)});
    }
    std::ostringstream name;
    name << "frame_" << std::setw(3) << std::setfill('0') << k << ".ppm";
    write_ppm(frame, (fs::path(a.out) / name.str()).string());
  }
  std::cout << "wrote " << batch.frame_count() << " frames to " << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occupancy tracking with recurrent networks: data generation, training, evaluation, rendering"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--scenario", gen.scenario, "static-crossing | occlusion | moving-straight | moving-turning")->required();
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_option("--sequences", gen.sequences, "Number of sequences");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--size", gen.size, "Grid size in cells (odd)");
  g->add_option("--cell-size", gen.cell_size, "Cell size in metres");
  g->add_option("--frames", gen.frames, "Frames per sequence");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--variant", tr.variant, "Model variant, e.g. GRU3DilConv_48");
  t->add_option("--stm", tr.stm, "Spatial transformer: on | off");
  t->add_option("--show", tr.show, "Frames shown per block");
  t->add_option("--blank", tr.blank, "Frames blanked per block");
  t->add_option("--steps", tr.steps, "Maximum optimiser steps");
  t->add_option("--seed", tr.seed, "Initialisation and ordering seed");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--config", tr.config, "key = value training config file");
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--batch", tr.batch, "Sequences per step");
  t->add_option("--threads", tr.threads, "Worker threads (DEEPTRACK_THREADS overrides)");
  t->add_option("--plateau-window", tr.plateau, "Stop after this many steps without a new best loss (0 disables)");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Periodic checkpoint interval in steps");
  t->add_flag("--baseline-override", tr.baseline_override, "Allow --stm off on moving-sensor data");
  t->add_flag("--f64", tr.f64, "Train in 64-bit arithmetic");
  t->add_option("--log", tr.log, "Training log file (default stdout)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score checkpoints over the prediction horizon");
  e->add_option("--ckpt", ev.ckpts, "Checkpoint (repeat for a comparison)")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--threshold", ev.threshold, "Occupancy threshold");
  e->add_option("--show", ev.show, "Frames shown per block");
  e->add_option("--blank", ev.blank, "Frames blanked per block");
  e->add_option("--out", ev.out, "Report directory");

  RenderArgs rn;
  auto* r = app.add_subcommand("render", "Render per-frame panels as PPM images");
  r->add_option("--ckpt", rn.ckpt, "Checkpoint")->required();
  r->add_option("--data", rn.data, "Dataset directory")->required();
  r->add_option("--sequence", rn.sequence, "Sequence index");
  r->add_option("--show", rn.show, "Frames shown per block");
  r->add_option("--blank", rn.blank, "Frames blanked per block");
  r->add_option("--out", rn.out, "Output directory")->required();
  r->add_option("--scale", rn.scale, "Pixels per cell");
  r->add_option("--threshold", rn.threshold, "Occupancy threshold");
  r->add_flag("--overlay", rn.overlay, "Add a panel scored against the ground truth");
  r->add_option("--hidden", rn.hidden, "Feature maps to tile")->delimiter(',');
  r->add_option("--hidden-layer", rn.hidden_layer, "Layer whose maps are tiled");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return cmd_gen(gen);
    if (*t) return tr.f64 ? run_train<double>(tr, *t) : run_train<float>(tr, *t);
    if (*e) return cmd_eval(ev);
    if (*r) return cmd_render(rn);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
