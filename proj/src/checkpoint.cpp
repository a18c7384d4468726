// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "deeptrack/model.hpp"

namespace deeptrack {

namespace {

constexpr char kMagic[6] = {'D', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) hash_ = (hash_ ^ p[i]) * kFnvPrime;
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  template <typename U>
  void le(U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(U));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::uint64_t hash() const { return hash_; }

 private:
  std::ostream& out_;
  std::uint64_t hash_ = kFnvOffset;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw std::runtime_error("checkpoint: truncated file");
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) hash_ = (hash_ ^ p[i]) * kFnvPrime;
  }
  template <typename U>
  U le() {
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::uint64_t hash() const { return hash_; }

 private:
  std::istream& in_;
  std::uint64_t hash_ = kFnvOffset;
};

void write_config(Writer& w, const ModelConfig& c) {
  w.bytes(kMagic, sizeof(kMagic));
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.variant));
  w.le<std::uint8_t>(c.use_stm ? 1 : 0);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.grid.size_cells));
  w.f64(c.grid.cell_size);
  w.f64(c.grid.max_range);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.layers.size()));
  for (const LayerSpec& l : c.layers) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(l.feature_maps));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(l.kernel));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(l.dilation));
  }
  w.le<std::uint8_t>(c.decode_full_state ? 1 : 0);
  w.le<std::uint8_t>(c.static_bias ? 1 : 0);
}

ModelConfig read_config(Reader& r) {
  char magic[sizeof(kMagic)];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("checkpoint: bad magic");
  if (r.le<std::uint16_t>() != kVersion) throw std::runtime_error("checkpoint: unsupported format version");
  ModelConfig c;
  const auto variant = r.le<std::uint32_t>();
  if (variant > static_cast<std::uint32_t>(Variant::kGru3DilConvBias48)) {
    throw std::runtime_error("checkpoint: unknown variant");
  }
  c.variant = static_cast<Variant>(variant);
  c.use_stm = r.le<std::uint8_t>() != 0;
  c.grid.size_cells = static_cast<int>(r.le<std::uint32_t>());
  c.grid.cell_size = r.f64();
  c.grid.max_range = r.f64();
  const auto layers = r.le<std::uint32_t>();
  if (layers > 64) throw std::runtime_error("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < layers; ++i) {
    LayerSpec l;
    l.feature_maps = static_cast<int>(r.le<std::uint32_t>());
    l.kernel = static_cast<int>(r.le<std::uint32_t>());
    l.dilation = static_cast<int>(r.le<std::uint32_t>());
    c.layers.push_back(l);
  }
  c.decode_full_state = r.le<std::uint8_t>() != 0;
  c.static_bias = r.le<std::uint8_t>() != 0;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  return c;
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, std::ostream& out) {
  Writer w(out);
  write_config(w, model.config());
  w.le<std::uint8_t>(sizeof(T));
  w.le<std::uint64_t>(model.parameter_count());
  for (const Tensor<T>* p : model.parameters()) {
    for (T v : p->values()) {
      if constexpr (sizeof(T) == 4) {
        w.f32(v);
      } else {
        w.f64(v);
      }
    }
  }
  const std::uint64_t checksum = w.hash();
  w.le<std::uint64_t>(checksum);
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  save_checkpoint(model, out);
}

template <typename T>
Model<T> load_checkpoint(std::istream& in) {
  Reader r(in);
  const ModelConfig config = read_config(r);
  const auto width = r.le<std::uint8_t>();
  if (width != 4 && width != 8) throw std::runtime_error("checkpoint: bad scalar width");
  Model<T> model = Model<T>::build(config, 0);
  if (r.le<std::uint64_t>() != model.parameter_count()) {
    throw std::runtime_error("checkpoint: parameter count does not match the configuration");
  }
  for (Tensor<T>* p : model.parameters()) {
    for (T& v : p->mutable_values()) v = static_cast<T>(width == 4 ? static_cast<double>(r.f32()) : r.f64());
  }
  const std::uint64_t expected = r.hash();
  if (r.le<std::uint64_t>() != expected) throw std::runtime_error("checkpoint: checksum mismatch");
  return model;
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  return load_checkpoint<T>(in);
}

ModelConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  Reader r(in);
  return read_config(r);
}

template void save_checkpoint(const Model<float>&, std::ostream&);
template void save_checkpoint(const Model<double>&, std::ostream&);
template void save_checkpoint(const Model<float>&, const std::string&);
template void save_checkpoint(const Model<double>&, const std::string&);
template Model<float> load_checkpoint<float>(std::istream&);
template Model<double> load_checkpoint<double>(std::istream&);
template Model<float> load_checkpoint<float>(const std::string&);
template Model<double> load_checkpoint<double>(const std::string&);

}  // namespace deeptrack
