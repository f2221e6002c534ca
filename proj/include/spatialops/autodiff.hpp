#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "spatialops/tensor.hpp"

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation applied to its Vars in execution order, so
// the recorded graph is acyclic and topologically sorted by construction.
// backward() walks the tape once from the loss towards the leaves. Tapes are
// single-threaded; distinct tapes may be used concurrently.
namespace spatialops::ad {

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  // Receives the node's own id and the gradient flowing into it, and
  // accumulates into the parents.
  using BackwardFn = std::function<void(Tape&, std::size_t self, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  // Trainable leaf; receives a gradient on every backward().
  Var<T> parameter(Tensor<T> value);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward);

  void backward(Var<T> loss);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id()).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  // Gradient of the last backward() target; zeros when the node was not reached.
  Tensor<T> grad(Var<T> v) const;
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id()).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Zero-initialized on first use. Intended for BackwardFn implementations.
  Tensor<T>& grad_buffer(std::size_t id);
  void accumulate(std::size_t id, const Tensor<T>& g);

  // Checked mode rejects domain errors such as log of a nonpositive value.
  bool checked() const { return checked_; }
  void set_checked(bool on) { checked_ = on; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool trainable = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool checked_ = true;
  bool backward_done_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

enum class Unary { Tanh, Relu, Sigmoid, Exp, Log, Sin, Cos, Square };

template <typename T>
Var<T> apply(Unary fn, Var<T> x);

template <typename T> Var<T> tanh(Var<T> x) { return apply(Unary::Tanh, x); }
template <typename T> Var<T> relu(Var<T> x) { return apply(Unary::Relu, x); }
template <typename T> Var<T> sigmoid(Var<T> x) { return apply(Unary::Sigmoid, x); }
template <typename T> Var<T> exp(Var<T> x) { return apply(Unary::Exp, x); }
template <typename T> Var<T> log(Var<T> x) { return apply(Unary::Log, x); }
template <typename T> Var<T> sin(Var<T> x) { return apply(Unary::Sin, x); }
template <typename T> Var<T> cos(Var<T> x) { return apply(Unary::Cos, x); }
template <typename T> Var<T> square(Var<T> x) { return apply(Unary::Square, x); }

// Elementwise, identical shapes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> atan2(Var<T> y, Var<T> x);

template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> add_scalar(Var<T> x, T offset);
// x[..., n] + b[n], broadcast over every leading axis.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);

template <typename T> Var<T> softmax(Var<T> x, std::size_t axis);
template <typename T> Var<T> log_softmax(Var<T> x, std::size_t axis);
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// Removes `axis`.
template <typename T> Var<T> sum_axis(Var<T> x, std::size_t axis);

// Half-open column range [begin, end) of the last axis.
template <typename T> Var<T> slice_last(Var<T> x, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_last(Var<T> a, Var<T> b);

// Rows of table[n, d] selected by index -> [index.size(), d].
template <typename T> Var<T> gather_rows(Var<T> table, std::span<const std::size_t> index);
// x[b, index[b]] for x[B, K] -> [B].
template <typename T> Var<T> pick(Var<T> x, std::span<const std::size_t> index);
// out[b, n] = x[b, index[b*N + n]], or 0 where the index is negative. x is [B, K].
template <typename T> Var<T> gather_cols(Var<T> x, std::span<const int> index, std::size_t n);

// Same-padded 3D cross-correlation. input [B, D, H, W, C], kernel
// [kd, kh, kw, C, Cout], bias [Cout] -> [B, D, H, W, Cout]. Even kernel
// extents pad one more voxel after than before.
template <typename T> Var<T> conv3d(Var<T> input, Var<T> kernel, Var<T> bias);

// out[b, d, h, w, c] = field[b, d, h, w] * vec[b, c].
template <typename T> Var<T> outer_broadcast(Var<T> field, Var<T> vec);

// Equal to conv3d(outer_broadcast(field, vec), kernel, bias), evaluated by first
// contracting the kernel with vec so the convolution runs on one channel.
template <typename T> Var<T> conv3d_rank1(Var<T> field, Var<T> vec, Var<T> kernel, Var<T> bias);

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean({channels}, T{0}), running_var({channels}, T{1}) {}
};

// Normalizes every channel (last axis) over all other axes. Train mode uses
// batch statistics and updates the running moments; eval mode uses the
// running moments.
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, bool train);

}  // namespace spatialops::ad
