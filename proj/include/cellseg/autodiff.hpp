#pragma once

// Minimal reverse-mode autodiff over Tensor<T>.
//
// A Var is a shared handle to a graph node. Ops record a node only when at
// least one input requires a gradient, so inference and frozen-encoder passes
// build no tape. The graph belongs to the thread that built it.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cellseg/kernels.hpp"
#include "cellseg/tensor.hpp"

namespace cellseg::ad {

using kernels::Upsample;

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  // Zero-filled tensor of the value's shape when no gradient has arrived yet.
  Tensor<T> grad() const { return has_grad() ? node_->grad : Tensor<T>(node_->value.shape()); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  const char* op() const { return node_->op; }

  // Scalar value of a (1,1,1,1) tensor.
  T item() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// While alive, ops on this thread record nothing (inference / validation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_enabled();

// Populates gradients of every requires-grad leaf reachable from `loss`.
// Leaf gradients accumulate across calls; interior gradients are reset.
template <class T>
void backward(const Var<T>& loss);

// ---- layers --------------------------------------------------------------

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t pad);

template <class T>
Var<T> relu(const Var<T>& x);

template <class T>
Var<T> sigmoid(const Var<T>& x);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> upsample(const Var<T>& x, std::size_t factor, Upsample mode);

template <class T>
Var<T> softmax_channels(const Var<T>& x);

// ---- reductions and losses (all return (1,1,1,1) scalars) ------------------

template <class T>
Var<T> sum(const Var<T>& x);

// sum_i weights_i * x_i.
template <class T>
Var<T> dot(const Var<T>& x, const Tensor<T>& weights);

// a * x + b, elementwise.
template <class T>
Var<T> affine(const Var<T>& x, T a, T b);

// sum_i weights[i] * terms[i] over scalar terms.
template <class T>
Var<T> weighted_sum(std::span<const Var<T>> terms, std::span<const T> weights);

// Mean over pixels of -sum_c target_c * log softmax(logits)_c.
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensor<T>& target);

// Class-averaged soft Dice coefficient (2I + s) / (P + Y + s); sums run over
// batch and pixels per class.
template <class T>
Var<T> soft_dice(const Var<T>& probs, const Tensor<T>& target, T smooth);

// Class-averaged Tversky index (TP + s) / (TP + alpha FP + beta FN + s).
template <class T>
Var<T> tversky(const Var<T>& probs, const Tensor<T>& target, T alpha, T beta, T smooth);

template <class T>
Var<T> mean_abs_error(const Var<T>& pred, const Tensor<T>& target);

}  // namespace cellseg::ad
