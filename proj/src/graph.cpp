#include "akmnet/graph.hpp"

#include <stdexcept>
#include <unordered_set>

namespace akmnet::nn {

namespace {
thread_local std::string g_faulty_op;
}

void inject_backward_fault(const std::string& op) { g_faulty_op = op; }
void clear_backward_fault() { g_faulty_op.clear(); }
const std::string& injected_backward_fault() { return g_faulty_op; }

template <typename T>
Tensor<T>& Var<T>::mutable_value() const {
  if (!node_->is_leaf()) throw std::logic_error("var: mutable_value on non-leaf '" + node_->op + "'");
  return node_->value;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->op = "constant";
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->op = "parameter";
  node->value = std::move(value);
  node->requires_grad = true;
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_op(std::string op, Tensor<T> value, std::vector<Var<T>> inputs,
               BackwardRule<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->value = std::move(value);
  node->inputs.reserve(inputs.size());
  for (auto& in : inputs) {
    node->requires_grad = node->requires_grad || in.requires_grad();
    node->inputs.push_back(in.shared());
  }
  if (node->requires_grad) node->backward = std::move(backward);
  return Var<T>(std::move(node));
}

template <typename T>
void backpropagate(const Var<T>& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backpropagate: loss must be scalar, got " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS: each node appears once, after all its inputs.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  const std::string& faulty = g_faulty_op;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->is_leaf() || !node->backward || node->grad.empty()) continue;
    if (!faulty.empty() && node->op == faulty) {
      for (auto& g : node->grad.values()) g *= T(1.5);
    }
    node->backward(*node);
    // Interior gradients are no longer needed once propagated.
    node->grad = Tensor<T>();
  }
}

template <typename T>
std::vector<Tensor<T>> gradients(const Var<T>& loss, std::vector<Var<T>> leaves) {
  for (auto& leaf : leaves) leaf.zero_grad();
  backpropagate(loss);
  std::vector<Tensor<T>> out;
  out.reserve(leaves.size());
  for (auto& leaf : leaves) out.push_back(leaf.grad());
  return out;
}

#define AKMNET_INSTANTIATE(T)                                                              \
  template class Var<T>;                                                                   \
  template Var<T> constant<T>(Tensor<T>);                                                  \
  template Var<T> parameter<T>(Tensor<T>);                                                 \
  template Var<T> make_op<T>(std::string, Tensor<T>, std::vector<Var<T>>, BackwardRule<T>); \
  template void backpropagate<T>(const Var<T>&);                                           \
  template std::vector<Tensor<T>> gradients<T>(const Var<T>&, std::vector<Var<T>>);

AKMNET_INSTANTIATE(float)
AKMNET_INSTANTIATE(double)
AKMNET_INSTANTIATE(long double)

}  // namespace akmnet::nn
