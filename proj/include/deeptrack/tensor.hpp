// SPDX-License-Identifier: Apache-2.0
//
// Dense NCHW tensors with tape-free reverse-mode differentiation. Every op
// records its parents and a backward closure on the result node; calling
// backward() on a scalar walks the graph in reverse topological order.
//
// Scalar type is a template parameter: float for training, double for
// gradient verification.

#ifndef DEEPTRACK_TENSOR_HPP_
#define DEEPTRACK_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "deeptrack/geometry.hpp"

namespace deeptrack {

struct TensorShape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::string str() const;
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

template <typename T>
struct ScalarTraits;
template <>
struct ScalarTraits<float> {
  static constexpr float kBceEpsilon = 1e-7f;
};
template <>
struct ScalarTraits<double> {
  static constexpr double kBceEpsilon = 1e-12;
};

namespace detail {

template <typename T>
struct Node {
  TensorShape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// While alive, ops on this thread do not record graph edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

/// Shared handle to a graph node, like a framework tensor. Copies alias the
/// same storage; use clone() for an independent leaf.
template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(TensorShape shape, bool requires_grad = false);
  Tensor(TensorShape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1, 1, 1, 1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const TensorShape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  /// Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  T item() const;

  /// Reverse-mode sweep from this scalar. Intermediate nodes release their
  /// graph edges afterwards; leaf gradients accumulate.
  void backward();
  void zero_grad();

  /// Independent leaf holding a copy of the values.
  Tensor clone() const;
  Tensor detach() const { return clone_with(false); }

  const std::shared_ptr<Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  Tensor clone_with(bool requires_grad) const;

  std::shared_ptr<Node> node_;
};

template <typename T>
struct ConvParams {
  Tensor<T> weight;  // (out, in, k, k)
  Tensor<T> bias;    // (1, out, 1, 1)
  int dilation = 1;
  int padding = 0;

  int out_channels() const { return weight.shape().n; }
  int in_channels() const { return weight.shape().c; }
  int kernel() const { return weight.shape().h; }
};

/// Padding giving a same-size output for an odd kernel.
inline int same_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

// --- differentiable ops -------------------------------------------------

/// Stride-1 zero-padded dilated cross-correlation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T>
Tensor<T> tanh(const Tensor<T>& a);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

/// z * h_prev + (1 - z) * candidate.
template <typename T>
Tensor<T> gated_blend(const Tensor<T>& z, const Tensor<T>& h_prev, const Tensor<T>& candidate);

template <typename T>
struct GruGates {
  ConvParams<T> update;     // z
  ConvParams<T> reset;      // r
  ConvParams<T> candidate;  // h~
};

/// One convolutional GRU update:
///   z = sigmoid(conv([x, h]; W_z)), r = sigmoid(conv([x, h]; W_r)),
///   c = tanh(conv([x, r * h]; W_h) + static_bias), h' = z * h + (1 - z) * c.
/// z = 1 keeps the previous state. `static_bias` may be undefined.
template <typename T>
Tensor<T> conv_gru_step(const Tensor<T>& h_prev, const Tensor<T>& input, const GruGates<T>& gates,
                        const Tensor<T>& static_bias = {});

/// Resamples feature maps into the frame reached by `transform`: each output
/// cell centre is mapped through the inverse transform into the input grid
/// and bilinearly interpolated. Samples outside the grid read as zero. The
/// transform is a constant; gradients flow to the input values only.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const Pose2& transform, const GridSpec& spec);

/// Mean binary cross-entropy over cells where mask = 1, with predictions
/// clamped to [eps, 1 - eps]. Zero (and zero gradient) for an empty mask.
template <typename T>
Tensor<T> masked_bce(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);

/// Summed (not averaged) variant used to pool several frames into one mean.
template <typename T>
Tensor<T> masked_bce_sum(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);

/// Max relative error between reverse-mode gradients of `f` with respect to
/// `inputs` and central finite differences with step `h`; the relative
/// error denominator is max(|a|, |b|, 1e-8). With `max_entries` > 0 only
/// that many evenly strided entries of each input are perturbed.
double grad_check(const std::function<Tensor<double>()>& f, std::span<Tensor<double>> inputs, double h,
                  std::size_t max_entries = 0);

}  // namespace deeptrack

#endif  // DEEPTRACK_TENSOR_HPP_
