// SPDX-License-Identifier: Apache-2.0
//
// The recurrent occupancy tracker: a stack of convolutional recurrent
// layers over the paired visibility/occupancy input, an optional per-cell
// static bias memory, an optional egomotion warp of the memory before each
// update, and a 3x3 convolutional decoder with a logistic output.

#ifndef DEEPTRACK_MODEL_HPP_
#define DEEPTRACK_MODEL_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deeptrack/geometry.hpp"
#include "deeptrack/schedule.hpp"
#include "deeptrack/simulator.hpp"
#include "deeptrack/tensor.hpp"

namespace deeptrack {

enum class Variant : std::uint32_t {
  kRnn16 = 0,
  kRnn48 = 1,
  kGru3_16 = 2,
  kGru3DilConv16 = 3,
  kGru3DilConv48 = 4,
  kGru3DilConvBias16 = 5,
  kGru3DilConvBias48 = 6,
};

std::string_view variant_name(Variant v);
/// Accepts the canonical names; "GRU3_16_A" maps to GRU3_16.
std::optional<Variant> parse_variant(std::string_view name);

enum class CellType { kRnn, kGru };

struct LayerSpec {
  int feature_maps = 16;
  int kernel = 3;
  int dilation = 1;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelConfig {
  Variant variant = Variant::kGru3DilConv48;
  bool use_stm = false;
  GridSpec grid;
  std::vector<LayerSpec> layers;
  bool decode_full_state = true;
  bool static_bias = false;

  /// Canonical configuration of a named variant.
  static ModelConfig for_variant(Variant v, const GridSpec& grid, bool use_stm = false);

  /// Throws std::invalid_argument when the fields disagree with the variant.
  void validate() const;
  CellType cell() const;
  int hidden_channels() const;
  int decoder_channels() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct HiddenState {
  std::vector<Tensor<T>> layers;  // each (1, maps, M, M)
};

template <typename T>
class Model {
 public:
  /// Deterministic initialisation: weights and biases uniform in
  /// +-1/sqrt(fan_in), static biases zero.
  static Model build(const ModelConfig& config, std::uint64_t seed);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }

  /// Parameters in checkpoint declaration order.
  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  std::size_t parameter_count() const;
  std::size_t static_bias_parameter_count() const;
  void zero_grad();

  HiddenState<T> initial_state() const;

  /// One recurrent update. `obs == nullptr` is a blank frame (all-zero
  /// input planes). With use_stm the previous state is first warped by
  /// `egomotion`; without it, a non-identity egomotion is rejected.
  HiddenState<T> step(const HiddenState<T>& h_prev, const ObservationGrid* obs, const Pose2& egomotion) const;

  /// Occupancy probabilities, shape (1, 1, M, M).
  Tensor<T> decode(const HiddenState<T>& h) const;

  /// Converts the parameter values to another scalar type.
  template <typename U>
  Model<U> cast() const;

 private:
  template <typename>
  friend class Model;

  struct Layer {
    GruGates<T> gates;  // RNN layers use only `candidate`
    Tensor<T> static_bias;
  };

  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  void copy_from(const Model& other);

  ModelConfig config_;
  std::vector<Layer> layers_;
  ConvParams<T> decoder_;
};

/// Input planes for one frame, shape (1, 2, M, M): visibility then occupancy.
template <typename T>
Tensor<T> observation_tensor(const ObservationGrid& obs);
template <typename T>
Tensor<T> grid_tensor(const BinaryGrid& grid);

/// Runs step/decode over the batch, withholding input on blank frames while
/// still applying each frame's egomotion (when the model uses it).
template <typename T>
std::vector<Tensor<T>> rollout(const Model<T>& model, const SequenceBatch& batch, const ShowBlankSchedule& schedule);

// --- checkpoints ---------------------------------------------------------
//
// Little-endian layout:
//   "DTCKPT" | u16 version (1)
//   u32 variant | u8 use_stm | u32 M | f64 cell_size | f64 max_range
//   u32 layer count | per layer: u32 maps, u32 kernel, u32 dilation
//   u8 decode_full_state | u8 static_bias
//   u8 scalar width (4 = f32, 8 = f64) | u64 value count | values
//   u64 FNV-1a checksum of every preceding byte

template <typename T>
void save_checkpoint(const Model<T>& model, std::ostream& out);
template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path);
template <typename T>
Model<T> load_checkpoint(std::istream& in);
template <typename T>
Model<T> load_checkpoint(const std::string& path);
/// Reads only the configuration from a checkpoint file.
ModelConfig peek_checkpoint_config(const std::string& path);

}  // namespace deeptrack

#endif  // DEEPTRACK_MODEL_HPP_
