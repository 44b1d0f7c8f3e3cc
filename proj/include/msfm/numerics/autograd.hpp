#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "msfm/numerics/error.hpp"
#include "msfm/numerics/tensor.hpp"

namespace msfm {

// Adjoint of one operation: given dL/d(output), accumulate into dL/d(input_i)
// for every input whose slot is non-null.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

struct Node {
  std::uint64_t id = 0;
  std::string op;
  std::shared_ptr<const Tensor> value;
  std::vector<std::shared_ptr<Node>> inputs;  // empty unless requires_grad
  BackwardFn backward;
  bool requires_grad = false;
  bool leaf = false;
};

using NodePtr = std::shared_ptr<Node>;

namespace detail {
inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

// Handle to a value in the computation graph. Graph edges are only kept for
// nodes that depend on a parameter requiring gradients; everything else is a
// plain value whose inputs are released as soon as it is computed.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Tensor t) { return leaf(std::make_shared<const Tensor>(std::move(t)), false); }
  static Var param(Tensor t) { return leaf(std::make_shared<const Tensor>(std::move(t)), true); }
  static Var leaf(std::shared_ptr<const Tensor> t, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->id = detail::next_node_id();
    n->op = "leaf";
    n->value = std::move(t);
    n->requires_grad = requires_grad;
    n->leaf = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return *node_->value; }
  const Shape& shape() const { return node_->value->shape(); }
  std::size_t dim(std::size_t i) const { return node_->value->dim(i); }
  std::size_t rank() const { return node_->value->rank(); }
  std::size_t numel() const { return node_->value->numel(); }
  double item() const { return node_->value->item(); }
  bool requires_grad() const { return node_->requires_grad; }
  std::uint64_t id() const { return node_->id; }
  const std::string& op() const { return node_->op; }
  const NodePtr& node() const { return node_; }

  // Same value, cut from the graph (stop-gradient).
  Var detached() const { return leaf(node_->value, false); }

 private:
  NodePtr node_;
};

// Records a new node. `value` is checked for finiteness; a NaN/Inf raises a
// NumericFault naming the op and node id.
inline Var make_op(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->id = detail::next_node_id();
  n->op = std::string(op);
  if (!value.all_finite()) throw NumericFault(n->op, n->id);
  n->value = std::make_shared<const Tensor>(std::move(value));
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (const auto& v : inputs) n->inputs.push_back(v.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

// Nodes reachable from `root` through requires-grad edges, inputs before
// consumers, each node exactly once.
inline std::vector<const Node*> topo_order(const Var& root) {
  std::vector<const Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

class Gradients;
Gradients backward(const Var& root, bool retain_intermediate = false);

class Gradients {
 public:
  bool has(const Var& v) const { return grads_.count(v.node().get()) != 0; }
  const Tensor* find(const Var& v) const {
    auto it = grads_.find(v.node().get());
    return it == grads_.end() ? nullptr : &it->second;
  }
  const Tensor& of(const Var& v) const {
    const Tensor* g = find(v);
    if (!g) throw ContractViolation("no gradient recorded for node " + std::to_string(v.id()));
    return *g;
  }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend Gradients backward(const Var& root, bool retain_intermediate);
  std::unordered_map<const Node*, Tensor> grads_;
};

// Reverse-mode sweep from a scalar root. Leaf gradients are always returned;
// intermediate ones only when `retain_intermediate` is set.
inline Gradients backward(const Var& root, bool retain_intermediate) {
  require(root.numel() == 1, "backward root must be scalar, got shape " + shape_str(root.shape()));
  Gradients out;
  if (!root.requires_grad()) return out;
  const auto order = topo_order(root);
  auto& grads = out.grads_;
  grads.emplace(root.node().get(), Tensor(root.shape(), 1.0));
  std::vector<Tensor*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    auto g = grads.find(node);
    if (g == grads.end() || node->leaf) continue;
    const Tensor& grad_out = g->second;  // references survive rehashing, iterators do not
    slots.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      auto [slot, fresh] = grads.try_emplace(in, in->value->shape());
      slots[i] = &slot->second;
    }
    node->backward(grad_out, slots);
    if (!retain_intermediate && node != root.node().get()) grads.erase(node);
  }
  if (!retain_intermediate && !root.node()->leaf) grads.erase(root.node().get());
  return out;
}

}  // namespace msfm
