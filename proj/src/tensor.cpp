// SPDX-License-Identifier: Apache-2.0

#include "deeptrack/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <new>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace deeptrack {

std::string TensorShape::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

namespace {
thread_local bool g_no_grad = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

// --- Tensor -------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(TensorShape shape, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->shape = shape;
  node_->value.assign(shape.size(), T(0));
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(TensorShape shape, std::vector<T> values, bool requires_grad) : node_(std::make_shared<Node>()) {
  if (values.size() != shape.size()) {
    throw std::invalid_argument("Tensor: value count does not match shape " + shape.str());
  }
  node_->shape = shape;
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw std::logic_error("Tensor::item on a non-scalar of shape " + shape().str());
  return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() {
  if (size() != 1) throw std::logic_error("Tensor::backward requires a scalar");
  if (!node_->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return clone_with(node_->requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::clone_with(bool requires_grad) const {
  return Tensor(node_->shape, node_->value, requires_grad);
}

// --- op plumbing --------------------------------------------------------

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
Tensor<T> make_result(TensorShape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> parents,
                      std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  if (!NoGradGuard::active()) {
    bool any = false;
    for (const Tensor<T>* p : parents) any = any || p->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor<T>* p : parents) node->parents.push_back(p->node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Convolution as one GEMM per kernel tap over a zero-padded, row-flattened
// copy of the input. With the padded row width wp, output pixel (oy, ox)
// lives at column oy * wp + ox, and tap (ky, kx) reads the padded plane at a
// constant offset from that column, so every tap is a contiguous slice. The
// wp - out_w columns past each output row are scratch and get dropped.
struct ConvGeometry {
  int in_c, h, w, k, dilation, padding, out_h, out_w;
  int hp() const { return h + 2 * padding; }
  int wp() const { return w + 2 * padding; }
  // Padded plane length plus slack so the last tap's slice stays in bounds.
  std::size_t plane() const { return static_cast<std::size_t>(hp()) * wp() + (k - 1) * dilation; }
  std::size_t span() const { return static_cast<std::size_t>(out_h) * wp(); }
  std::size_t offset(int ky, int kx) const {
    return static_cast<std::size_t>(ky) * dilation * wp() + static_cast<std::size_t>(kx) * dilation;
  }
};

template <typename T>
using StridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutStridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;

template <typename T>
void pad_input(const T* in, const ConvGeometry& g, T* padded) {
  std::fill(padded, padded + g.plane() * g.in_c, T(0));
  for (int c = 0; c < g.in_c; ++c) {
    for (int y = 0; y < g.h; ++y) {
      const T* src = in + (static_cast<std::size_t>(c) * g.h + y) * g.w;
      std::copy(src, src + g.w, padded + c * g.plane() + static_cast<std::size_t>(y + g.padding) * g.wp() + g.padding);
    }
  }
}

// Weights (out, in, k, k) regrouped as k*k contiguous (out, in) blocks.
template <typename T>
void pack_taps(const T* w, int out_c, int in_c, int k, T* taps) {
  for (int o = 0; o < out_c; ++o) {
    for (int i = 0; i < in_c; ++i) {
      for (int t = 0; t < k * k; ++t) taps[(static_cast<std::size_t>(t) * out_c + o) * in_c + i] = w[(o * in_c + i) * k * k + t];
    }
  }
}

// Eigen's kernels peel differently depending on pointer alignment, which
// would change the summation order between threads and runs. Pinning every
// GEMM operand to a 64-byte boundary keeps results bit-reproducible.
template <typename T>
struct Aligned64 {
  using value_type = T;
  Aligned64() = default;
  template <typename U>
  Aligned64(const Aligned64<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{64}));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t{64}); }
  friend bool operator==(const Aligned64&, const Aligned64&) { return true; }
};

template <typename T>
using AlignedVec = std::vector<T, Aligned64<T>>;

template <typename T>
AlignedVec<T>& scratch(int slot) {
  thread_local AlignedVec<T> buffers[4];
  return buffers[slot];
}

}  // namespace

// --- convolution --------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params) {
  const TensorShape& is = input.shape();
  const TensorShape& ws = params.weight.shape();
  if (ws.c != is.c || ws.h != ws.w) {
    throw std::invalid_argument("conv2d: input " + is.str() + " incompatible with kernel " + ws.str());
  }
  if (params.bias.defined() && params.bias.size() != static_cast<std::size_t>(ws.n)) {
    throw std::invalid_argument("conv2d: bias size does not match output channels");
  }
  if (params.dilation < 1 || params.padding < 0) throw std::invalid_argument("conv2d: bad dilation/padding");
  const int reach = params.dilation * (ws.h - 1);
  const ConvGeometry g{is.c, is.h, is.w, ws.h, params.dilation, params.padding, is.h + 2 * params.padding - reach,
                       is.w + 2 * params.padding - reach};
  if (g.out_h <= 0 || g.out_w <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

  const int out_c = ws.n;
  const TensorShape os{is.n, out_c, g.out_h, g.out_w};
  std::vector<T> out(os.size());
  AlignedVec<T>& padded = scratch<T>(0);
  AlignedVec<T>& taps = scratch<T>(1);
  AlignedVec<T>& acc = scratch<T>(2);
  padded.resize(g.plane() * g.in_c);
  taps.resize(params.weight.size());
  acc.resize(static_cast<std::size_t>(out_c) * g.span());
  pack_taps(params.weight.values().data(), out_c, g.in_c, g.k, taps.data());
  const std::size_t in_stride = static_cast<std::size_t>(is.c) * is.h * is.w;
  for (int n = 0; n < is.n; ++n) {
    pad_input(input.values().data() + n * in_stride, g, padded.data());
    MatMap<T> a(acc.data(), out_c, static_cast<Eigen::Index>(g.span()));
    a.setZero();
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        ConstMatMap<T> wt(taps.data() + static_cast<std::size_t>(ky * g.k + kx) * out_c * g.in_c, out_c, g.in_c);
        StridedMap<T> x(padded.data() + g.offset(ky, kx), g.in_c, static_cast<Eigen::Index>(g.span()),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(g.plane())));
        a.noalias() += wt * x;
      }
    }
    T* dst = out.data() + static_cast<std::size_t>(n) * out_c * g.out_h * g.out_w;
    for (int o = 0; o < out_c; ++o) {
      const T b = params.bias.defined() ? params.bias.values()[o] : T(0);
      for (int y = 0; y < g.out_h; ++y) {
        const T* src = acc.data() + static_cast<std::size_t>(o) * g.span() + static_cast<std::size_t>(y) * g.wp();
        T* row = dst + (static_cast<std::size_t>(o) * g.out_h + y) * g.out_w;
        for (int x = 0; x < g.out_w; ++x) row[x] = src[x] + b;
      }
    }
  }

  const bool has_bias = params.bias.defined();
  auto backward = [g, is, out_c, has_bias](detail::Node<T>& self) {
    auto& in = *self.parents[0];
    auto& wt = *self.parents[1];
    const std::size_t in_stride = static_cast<std::size_t>(is.c) * is.h * is.w;
    const std::size_t out_stride = static_cast<std::size_t>(out_c) * g.out_h * g.out_w;
    AlignedVec<T>& padded = scratch<T>(0);
    AlignedVec<T>& taps = scratch<T>(1);
    AlignedVec<T>& dy = scratch<T>(2);
    AlignedVec<T>& dpad = scratch<T>(3);
    padded.resize(g.plane() * g.in_c);
    dy.resize(static_cast<std::size_t>(out_c) * g.span());
    AlignedVec<T> dtaps;
    if (wt.requires_grad) dtaps.assign(wt.value.size(), T(0));
    if (in.requires_grad) {
      taps.resize(wt.value.size());
      pack_taps(wt.value.data(), out_c, g.in_c, g.k, taps.data());
      dpad.resize(g.plane() * g.in_c);
    }
    for (int n = 0; n < is.n; ++n) {
      // Output gradient laid out on the padded row width, zero in the
      // scratch columns.
      const T* gy = self.grad.data() + n * out_stride;
      std::fill(dy.begin(), dy.end(), T(0));
      for (int o = 0; o < out_c; ++o) {
        for (int y = 0; y < g.out_h; ++y) {
          const T* src = gy + (static_cast<std::size_t>(o) * g.out_h + y) * g.out_w;
          std::copy(src, src + g.out_w, dy.data() + static_cast<std::size_t>(o) * g.span() + static_cast<std::size_t>(y) * g.wp());
        }
      }
      ConstMatMap<T> d(dy.data(), out_c, static_cast<Eigen::Index>(g.span()));
      if (has_bias && self.parents[2]->requires_grad) {
        auto& db = self.parents[2]->ensure_grad();
        for (int o = 0; o < out_c; ++o) db[o] += d.row(o).sum();
      }
      if (wt.requires_grad) {
        pad_input(in.value.data() + n * in_stride, g, padded.data());
        for (int t = 0; t < g.k * g.k; ++t) {
          StridedMap<T> x(padded.data() + g.offset(t / g.k, t % g.k), g.in_c, static_cast<Eigen::Index>(g.span()),
                          Eigen::OuterStride<>(static_cast<Eigen::Index>(g.plane())));
          MatMap<T> dw(dtaps.data() + static_cast<std::size_t>(t) * out_c * g.in_c, out_c, g.in_c);
          dw.noalias() += d * x.transpose();
        }
      }
      if (in.requires_grad) {
        std::fill(dpad.begin(), dpad.end(), T(0));
        for (int t = 0; t < g.k * g.k; ++t) {
          ConstMatMap<T> w(taps.data() + static_cast<std::size_t>(t) * out_c * g.in_c, out_c, g.in_c);
          MutStridedMap<T> dx(dpad.data() + g.offset(t / g.k, t % g.k), g.in_c, static_cast<Eigen::Index>(g.span()),
                              Eigen::OuterStride<>(static_cast<Eigen::Index>(g.plane())));
          dx.noalias() += w.transpose() * d;
        }
        T* gi = in.ensure_grad().data() + n * in_stride;
        for (int c = 0; c < g.in_c; ++c) {
          for (int y = 0; y < g.h; ++y) {
            const T* src = dpad.data() + c * g.plane() + static_cast<std::size_t>(y + g.padding) * g.wp() + g.padding;
            T* row = gi + (static_cast<std::size_t>(c) * g.h + y) * g.w;
            for (int x = 0; x < g.w; ++x) row[x] += src[x];
          }
        }
      }
    }
    if (wt.requires_grad) {
      auto& gw = wt.ensure_grad();
      const int kk = g.k * g.k;
      for (int o = 0; o < out_c; ++o) {
        for (int i = 0; i < g.in_c; ++i) {
          for (int t = 0; t < kk; ++t) gw[(o * g.in_c + i) * kk + t] += dtaps[(static_cast<std::size_t>(t) * out_c + o) * g.in_c + i];
        }
      }
    }
  };
  if (has_bias) return make_result<T>(os, std::move(out), {&input, &params.weight, &params.bias}, backward);
  return make_result<T>(os, std::move(out), {&input, &params.weight}, backward);
}

// --- elementwise --------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
  return make_result<T>(a.shape(), std::move(out), {&a}, [s](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.values()[i];
    if (x >= 0) {
      out[i] = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      out[i] = e / (T(1) + e);
    }
  }
  // Derivative from the input, e / (1 + e)^2 with e = exp(-|x|), so that
  // saturated outputs still pass a (tiny) gradient.
  return make_result<T>(a.shape(), std::move(out), {&a}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T e = std::exp(-std::abs(p.value[i]));
      const T d = T(1) + e;
      g[i] += self.grad[i] * (e / (d * d));
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  return make_result<T>(a.shape(), std::move(out), {&a}, [](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  return make_result<T>({1, 1, 1, 1}, {s}, {&a}, [](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const TensorShape& s0 = parts[0].shape();
  TensorShape os = s0;
  os.c = 0;
  for (const auto& p : parts) {
    const TensorShape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw std::invalid_argument("concat_channels: shape mismatch " + s.str() + " vs " + s0.str());
    }
    os.c += s.c;
  }
  std::vector<T> out(os.size());
  const std::size_t plane = os.plane();
  for (int n = 0; n < os.n; ++n) {
    std::size_t dst = static_cast<std::size_t>(n) * os.c * plane;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      std::copy_n(p.values().data() + n * len, len, out.data() + dst);
      dst += len;
    }
  }

  auto node = std::make_shared<detail::Node<T>>();
  node->shape = os;
  node->value = std::move(out);
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && !NoGradGuard::active()) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward = [os, plane](detail::Node<T>& self) {
      for (int n = 0; n < os.n; ++n) {
        std::size_t src = static_cast<std::size_t>(n) * os.c * plane;
        for (auto& p : self.parents) {
          const std::size_t len = static_cast<std::size_t>(p->shape.c) * plane;
          if (p->requires_grad) {
            T* g = p->ensure_grad().data() + n * len;
            for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[src + i];
          }
          src += len;
        }
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Tensor<T> parts[2] = {a, b};
  return concat_channels<T>(std::span<const Tensor<T>>(parts));
}

template <typename T>
Tensor<T> gated_blend(const Tensor<T>& z, const Tensor<T>& h_prev, const Tensor<T>& candidate) {
  require_same_shape(z, h_prev, "gated_blend");
  require_same_shape(z, candidate, "gated_blend");
  std::vector<T> out(z.size());
  const auto zv = z.values();
  const auto hv = h_prev.values();
  const auto cv = candidate.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = zv[i] * hv[i] + (T(1) - zv[i]) * cv[i];
  return make_result<T>(z.shape(), std::move(out), {&z, &h_prev, &candidate}, [](detail::Node<T>& self) {
    auto& pz = *self.parents[0];
    auto& ph = *self.parents[1];
    auto& pc = *self.parents[2];
    const std::size_t n = self.grad.size();
    if (pz.requires_grad) {
      auto& g = pz.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * (ph.value[i] - pc.value[i]);
    }
    if (ph.requires_grad) {
      auto& g = ph.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pz.value[i];
    }
    if (pc.requires_grad) {
      auto& g = pc.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * (T(1) - pz.value[i]);
    }
  });
}

template <typename T>
Tensor<T> conv_gru_step(const Tensor<T>& h_prev, const Tensor<T>& input, const GruGates<T>& gates,
                        const Tensor<T>& static_bias) {
  const int hc = h_prev.shape().c;
  if (gates.update.out_channels() != hc || gates.reset.out_channels() != hc || gates.candidate.out_channels() != hc) {
    throw std::invalid_argument("conv_gru_step: gate output channels do not match the hidden state");
  }
  const Tensor<T> xh = concat_channels(input, h_prev);
  const Tensor<T> z = sigmoid(conv2d(xh, gates.update));
  const Tensor<T> r = sigmoid(conv2d(xh, gates.reset));
  Tensor<T> pre = conv2d(concat_channels(input, mul(r, h_prev)), gates.candidate);
  if (static_bias.defined()) pre = add(pre, static_bias);
  return gated_blend(z, h_prev, tanh(pre));
}

// --- spatial sampler ----------------------------------------------------

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const Pose2& transform, const GridSpec& spec) {
  if (!transform.is_finite()) throw std::invalid_argument("bilinear_sample: non-finite transform");
  const TensorShape& s = input.shape();
  const int m = spec.size_cells;
  if (s.h != m || s.w != m) {
    throw std::invalid_argument("bilinear_sample: input " + s.str() + " does not match grid size");
  }

  // Inverse transform in cell units.
  const Pose2 inv = transform.inverse();
  const double ct = std::cos(inv.theta());
  const double st = std::sin(inv.theta());
  const double tx = inv.x() / spec.cell_size;
  const double ty = inv.y() / spec.cell_size;
  const int center = spec.center_index();

  struct Tap {
    int index;
    T weight;
  };
  auto taps = std::make_shared<std::vector<std::array<Tap, 4>>>(static_cast<std::size_t>(m) * m);
  auto snap = [](double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
  };
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      const double px = c - center;
      const double py = r - center;
      const double sx = snap(tx + ct * px - st * py + center);
      const double sy = snap(ty + st * px + ct * py + center);
      const double x0 = std::floor(sx);
      const double y0 = std::floor(sy);
      const double ax = sx - x0;
      const double ay = sy - y0;
      std::array<Tap, 4>& t = (*taps)[static_cast<std::size_t>(r) * m + c];
      const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      for (int q = 0; q < 4; ++q) {
        const double xi = x0 + (q & 1);
        const double yi = y0 + (q >> 1);
        const bool inside = xi >= 0 && xi < m && yi >= 0 && yi < m && wts[q] != 0.0;
        t[q] = inside ? Tap{static_cast<int>(yi) * m + static_cast<int>(xi), static_cast<T>(wts[q])} : Tap{-1, T(0)};
      }
    }
  }

  const std::size_t plane = s.plane();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  std::vector<T> out(s.size(), T(0));
  const T* in = input.values().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in + p * plane;
    T* dst = out.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      T acc = 0;
      bool any = false;
      for (const Tap& t : (*taps)[i]) {
        if (t.index < 0) continue;
        acc = any ? acc + t.weight * src[t.index] : t.weight * src[t.index];
        any = true;
      }
      dst[i] = acc;
    }
  }

  return make_result<T>(s, std::move(out), {&input}, [taps, plane, planes](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* dy = self.grad.data() + p * plane;
      T* dx = g.data() + p * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        for (const Tap& t : (*taps)[i]) {
          if (t.index >= 0) dx[t.index] += t.weight * dy[i];
        }
      }
    }
  });
}

// --- loss ---------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> masked_bce_impl(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask, bool average) {
  require_same_shape(pred, target, "masked_bce");
  require_same_shape(pred, mask, "masked_bce");
  constexpr T eps = ScalarTraits<T>::kBceEpsilon;
  const auto p = pred.values();
  const auto t = target.values();
  const auto m = mask.values();
  std::size_t count = 0;
  T total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (m[i] == T(0)) continue;
    ++count;
    const T pc = std::clamp(p[i], eps, T(1) - eps);
    total -= t[i] * std::log(pc) + (T(1) - t[i]) * std::log(T(1) - pc);
  }
  const T divisor = average && count > 0 ? static_cast<T>(count) : T(1);
  const T value = count > 0 ? total / divisor : T(0);

  // Gradient passes straight through the clamp so a saturated wrong
  // prediction still receives a signal.
  return make_result<T>({1, 1, 1, 1}, {value}, {&pred}, [target, mask, divisor](detail::Node<T>& self) {
    auto& pp = *self.parents[0];
    auto& g = pp.ensure_grad();
    const auto t = target.values();
    const auto m = mask.values();
    const T scale = self.grad[0] / divisor;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (m[i] == T(0)) continue;
      const T pc = std::clamp(pp.value[i], ScalarTraits<T>::kBceEpsilon, T(1) - ScalarTraits<T>::kBceEpsilon);
      g[i] += scale * (pc - t[i]) / (pc * (T(1) - pc));
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> masked_bce(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  return masked_bce_impl(pred, target, mask, true);
}

template <typename T>
Tensor<T> masked_bce_sum(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  return masked_bce_impl(pred, target, mask, false);
}

// --- verification -------------------------------------------------------

double grad_check(const std::function<Tensor<double>()>& f, std::span<Tensor<double>> inputs, double h,
                  std::size_t max_entries) {
  for (auto& in : inputs) in.zero_grad();
  Tensor<double> y = f();
  y.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    const auto g = in.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(in.size(), 0.0);
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    const std::size_t stride =
        max_entries == 0 || values.size() <= max_entries ? 1 : (values.size() + max_entries - 1) / max_entries;
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      values[i] = saved + h;
      const double fp = f().item();
      values[i] = saved - h;
      const double fm = f().item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// --- instantiations -----------------------------------------------------

#define DEEPTRACK_INSTANTIATE(T)                                                                          \
  template class Tensor<T>;                                                                               \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvParams<T>&);                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                                          \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                           \
  template Tensor<T> tanh(const Tensor<T>&);                                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                                         \
  template Tensor<T> gated_blend(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> conv_gru_step(const Tensor<T>&, const Tensor<T>&, const GruGates<T>&, const Tensor<T>&); \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Pose2&, const GridSpec&);                    \
  template Tensor<T> masked_bce(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> masked_bce_sum(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

DEEPTRACK_INSTANTIATE(float)
DEEPTRACK_INSTANTIATE(double)

#undef DEEPTRACK_INSTANTIATE

}  // namespace deeptrack
