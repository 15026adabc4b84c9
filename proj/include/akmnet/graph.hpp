#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "akmnet/tensor.hpp"

namespace akmnet::nn {

template <typename T>
struct Node;

template <typename T>
using BackwardRule = std::function<void(Node<T>& self)>;

/// One vertex of the define-by-run compute graph. Inputs are held strongly,
/// so a graph lives exactly as long as the last handle to its output.
template <typename T>
struct Node {
  std::string op;
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardRule<T> backward;

  bool is_leaf() const { return inputs.empty(); }

  /// Gradient buffer, zero-initialized on first touch.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }

  /// Gradient buffer of input `i`, or nullptr when that input needs none.
  Tensor<T>* input_grad(std::size_t i) {
    return inputs[i]->requires_grad ? &inputs[i]->grad_buffer() : nullptr;
  }
};

/// Handle to a graph node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  /// Gradient accumulated by backpropagate(); zeros when never reached.
  Tensor<T> grad() const {
    return node_->grad.empty() ? Tensor<T>(node_->value.shape(), T(0)) : node_->grad;
  }
  void zero_grad() const { node_->grad = Tensor<T>(); }

  /// In-place access for leaves (parameter updates, finite differences).
  Tensor<T>& mutable_value() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value);

template <typename T>
Var<T> parameter(Tensor<T> value);

/// Registers a primitive output. `requires_grad` is inherited from inputs.
template <typename T>
Var<T> make_op(std::string op, Tensor<T> value, std::vector<Var<T>> inputs,
               BackwardRule<T> backward);

/// Reverse sweep from a scalar loss. Each node is visited once, in reverse
/// topological order; leaf gradients accumulate across calls.
template <typename T>
void backpropagate(const Var<T>& loss);

/// Gradients of `loss` with respect to each of `leaves` (zeros when a leaf is
/// unreachable). Clears the leaves' accumulated gradients first.
template <typename T>
std::vector<Tensor<T>> gradients(const Var<T>& loss, std::vector<Var<T>> leaves);

/// Test hook: while set, the backward rule of every node whose op matches
/// is fed a distorted (x1.5) upstream gradient. Thread-local.
void inject_backward_fault(const std::string& op);
void clear_backward_fault();
const std::string& injected_backward_fault();

}  // namespace akmnet::nn
