// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/model.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "deeptrack/random.hpp"

namespace deeptrack {

namespace {

struct VariantInfo {
  Variant variant;
  std::string_view name;
};

constexpr std::array<VariantInfo, 7> kVariants{{
    {Variant::kRnn16, "RNN16"},
    {Variant::kRnn48, "RNN48"},
    {Variant::kGru3_16, "GRU3_16"},
    {Variant::kGru3DilConv16, "GRU3DilConv_16"},
    {Variant::kGru3DilConv48, "GRU3DilConv_48"},
    {Variant::kGru3DilConvBias16, "GRU3DilConvBias_16"},
    {Variant::kGru3DilConvBias48, "GRU3DilConvBias_48"},
}};

template <typename T>
ConvParams<T> make_conv(int in, int out, int kernel, int dilation, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in) * kernel * kernel);
  std::vector<T> w(static_cast<std::size_t>(out) * in * kernel * kernel);
  for (T& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  std::vector<T> b(out);
  for (T& v : b) v = static_cast<T>(rng.uniform(-bound, bound));
  ConvParams<T> p;
  p.weight = Tensor<T>({out, in, kernel, kernel}, std::move(w), true);
  p.bias = Tensor<T>({1, out, 1, 1}, std::move(b), true);
  p.dilation = dilation;
  p.padding = same_padding(kernel, dilation);
  return p;
}

template <typename T>
ConvParams<T> clone_conv(const ConvParams<T>& c) {
  return {c.weight.clone(), c.bias.clone(), c.dilation, c.padding};
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& info : kVariants) {
    if (info.variant == v) return info.name;
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  if (name == "GRU3_16_A") return Variant::kGru3_16;
  for (const auto& info : kVariants) {
    if (info.name == name) return info.variant;
  }
  return std::nullopt;
}

ModelConfig ModelConfig::for_variant(Variant v, const GridSpec& grid, bool use_stm) {
  ModelConfig c;
  c.variant = v;
  c.use_stm = use_stm;
  c.grid = grid;
  const std::vector<LayerSpec> dilated{{16, 3, 1}, {16, 3, 2}, {16, 3, 4}};
  switch (v) {
    case Variant::kRnn16:
      c.layers = {{16, 5, 1}};
      break;
    case Variant::kRnn48:
      c.layers = {{48, 5, 1}};
      break;
    case Variant::kGru3_16:
      // Dense kernels with the same 3/7/15 receptive fields as the dilated stack.
      c.layers = {{16, 3, 1}, {16, 5, 1}, {16, 9, 1}};
      break;
    default:
      c.layers = dilated;
      break;
  }
  c.decode_full_state = v == Variant::kRnn48 || v == Variant::kGru3DilConv48 || v == Variant::kGru3DilConvBias48;
  c.static_bias = v == Variant::kGru3DilConvBias16 || v == Variant::kGru3DilConvBias48;
  return c;
}

void ModelConfig::validate() const {
  grid.validate();
  if (!parse_variant(variant_name(variant))) throw std::invalid_argument("ModelConfig: unknown variant");
  const ModelConfig canonical = for_variant(variant, grid, use_stm);
  if (layers != canonical.layers) {
    throw std::invalid_argument("ModelConfig: layer stack does not match variant " + std::string(variant_name(variant)));
  }
  if (decode_full_state != canonical.decode_full_state) {
    throw std::invalid_argument("ModelConfig: decode_full_state must be set iff the variant decodes 48 maps");
  }
  if (static_bias != canonical.static_bias) {
    throw std::invalid_argument("ModelConfig: static_bias must be set iff the variant carries a bias memory");
  }
}

CellType ModelConfig::cell() const {
  return variant == Variant::kRnn16 || variant == Variant::kRnn48 ? CellType::kRnn : CellType::kGru;
}

int ModelConfig::hidden_channels() const {
  int n = 0;
  for (const LayerSpec& l : layers) n += l.feature_maps;
  return n;
}

int ModelConfig::decoder_channels() const {
  return decode_full_state ? hidden_channels() : layers.back().feature_maps;
}

// --- Model --------------------------------------------------------------

template <typename T>
Model<T> Model<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m(config);
  Rng rng(seed);
  const int size = config.grid.size_cells;
  int below = 2;
  for (const LayerSpec& spec : config.layers) {
    Layer layer;
    const int in = below + spec.feature_maps;
    if (config.cell() == CellType::kGru) {
      layer.gates.update = make_conv<T>(in, spec.feature_maps, spec.kernel, spec.dilation, rng);
      layer.gates.reset = make_conv<T>(in, spec.feature_maps, spec.kernel, spec.dilation, rng);
    }
    layer.gates.candidate = make_conv<T>(in, spec.feature_maps, spec.kernel, spec.dilation, rng);
    if (config.static_bias) layer.static_bias = Tensor<T>({1, spec.feature_maps, size, size}, true);
    m.layers_.push_back(std::move(layer));
    below = spec.feature_maps;
  }
  m.decoder_ = make_conv<T>(config.decoder_channels(), 1, 3, 1, rng);
  return m;
}

template <typename T>
void Model<T>::copy_from(const Model& other) {
  config_ = other.config_;
  layers_.clear();
  for (const Layer& l : other.layers_) {
    Layer c;
    if (l.gates.update.weight.defined()) c.gates.update = clone_conv(l.gates.update);
    if (l.gates.reset.weight.defined()) c.gates.reset = clone_conv(l.gates.reset);
    c.gates.candidate = clone_conv(l.gates.candidate);
    if (l.static_bias.defined()) c.static_bias = l.static_bias.clone();
    layers_.push_back(std::move(c));
  }
  decoder_ = clone_conv(other.decoder_);
}

template <typename T>
Model<T>::Model(const Model& other) {
  copy_from(other);
}

template <typename T>
Model<T>& Model<T>::operator=(const Model& other) {
  if (this != &other) copy_from(other);
  return *this;
}

template <typename T>
std::vector<Tensor<T>*> Model<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (Layer& l : layers_) {
    for (ConvParams<T>* c : {&l.gates.update, &l.gates.reset, &l.gates.candidate}) {
      if (!c->weight.defined()) continue;
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    }
    if (l.static_bias.defined()) out.push_back(&l.static_bias);
  }
  out.push_back(&decoder_.weight);
  out.push_back(&decoder_.bias);
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Model<T>::parameters() const {
  std::vector<const Tensor<T>*> out;
  for (Tensor<T>* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor<T>* p : parameters()) n += p->size();
  return n;
}

template <typename T>
std::size_t Model<T>::static_bias_parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) {
    if (l.static_bias.defined()) n += l.static_bias.size();
  }
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (Tensor<T>* p : parameters()) p->zero_grad();
}

template <typename T>
HiddenState<T> Model<T>::initial_state() const {
  HiddenState<T> h;
  const int size = config_.grid.size_cells;
  for (const LayerSpec& l : config_.layers) h.layers.emplace_back(TensorShape{1, l.feature_maps, size, size});
  return h;
}

template <typename T>
HiddenState<T> Model<T>::step(const HiddenState<T>& h_prev, const ObservationGrid* obs, const Pose2& egomotion) const {
  if (!config_.use_stm && !egomotion.is_identity()) {
    throw std::invalid_argument("Model::step: egomotion given to a model without the spatial transformer");
  }
  if (h_prev.layers.size() != layers_.size()) throw std::invalid_argument("Model::step: hidden state layer count");
  const int size = config_.grid.size_cells;
  Tensor<T> below = obs ? observation_tensor<T>(*obs) : Tensor<T>(TensorShape{1, 2, size, size});
  if (below.shape().h != size) throw std::invalid_argument("Model::step: observation size does not match the grid");

  HiddenState<T> next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    Tensor<T> prev = h_prev.layers[l];
    if (config_.use_stm && !egomotion.is_identity()) prev = bilinear_sample(prev, egomotion, config_.grid);
    Tensor<T> h;
    if (config_.cell() == CellType::kGru) {
      h = conv_gru_step(prev, below, layer.gates, layer.static_bias);
    } else {
      Tensor<T> pre = conv2d(concat_channels(below, prev), layer.gates.candidate);
      if (layer.static_bias.defined()) pre = add(pre, layer.static_bias);
      h = tanh(pre);
    }
    next.layers.push_back(h);
    below = h;
  }
  return next;
}

template <typename T>
Tensor<T> Model<T>::decode(const HiddenState<T>& h) const {
  if (h.layers.size() != layers_.size()) throw std::invalid_argument("Model::decode: hidden state layer count");
  const Tensor<T> input =
      config_.decode_full_state ? concat_channels<T>(std::span<const Tensor<T>>(h.layers)) : h.layers.back();
  return sigmoid(conv2d(input, decoder_));
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out = Model<U>::build(config_, 0);
  auto dst = out.parameters();
  const auto src = parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto d = dst[i]->mutable_values();
    const auto s = src[i]->values();
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<U>(s[k]);
  }
  return out;
}

template <typename T>
Tensor<T> grid_tensor(const BinaryGrid& grid) {
  const int m = grid.size();
  std::vector<T> v(grid.cells().begin(), grid.cells().end());
  return Tensor<T>({1, 1, m, m}, std::move(v));
}

template <typename T>
Tensor<T> observation_tensor(const ObservationGrid& obs) {
  const int m = obs.vis.size();
  std::vector<T> v;
  v.reserve(2 * static_cast<std::size_t>(m) * m);
  v.insert(v.end(), obs.vis.cells().begin(), obs.vis.cells().end());
  v.insert(v.end(), obs.occ.cells().begin(), obs.occ.cells().end());
  return Tensor<T>({1, 2, m, m}, std::move(v));
}

template <typename T>
std::vector<Tensor<T>> rollout(const Model<T>& model, const SequenceBatch& batch, const ShowBlankSchedule& schedule) {
  schedule.validate();
  if (schedule.total_frames != batch.frame_count()) {
    throw std::invalid_argument("rollout: schedule length does not match the sequence");
  }
  const bool warp = model.config().use_stm;
  if (warp && batch.rel_transforms.size() != batch.observations.size()) {
    throw std::invalid_argument("rollout: sequence lacks per-frame egomotion");
  }
  std::vector<Tensor<T>> preds;
  HiddenState<T> h = model.initial_state();
  for (int k = 0; k < batch.frame_count(); ++k) {
    const ObservationGrid* obs = schedule.is_blank(k) ? nullptr : &batch.observations[k];
    h = model.step(h, obs, warp ? batch.rel_transforms[k] : Pose2::identity());
    preds.push_back(model.decode(h));
  }
  return preds;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;
template Tensor<float> observation_tensor<float>(const ObservationGrid&);
template Tensor<double> observation_tensor<double>(const ObservationGrid&);
template Tensor<float> grid_tensor<float>(const BinaryGrid&);
template Tensor<double> grid_tensor<double>(const BinaryGrid&);
template std::vector<Tensor<float>> rollout(const Model<float>&, const SequenceBatch&, const ShowBlankSchedule&);
template std::vector<Tensor<double>> rollout(const Model<double>&, const SequenceBatch&, const ShowBlankSchedule&);

}  // namespace deeptrack
