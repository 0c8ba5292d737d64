#include "lcye/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace lcye::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::ensure_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (node_->value.size() != 1) {
    throw std::logic_error("item() on tensor of shape " + shape_str(node_->value.shape()));
  }
  return node_->value[0];
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Tensor value, const std::vector<Var>& inputs, std::function<void(const Tensor&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var(node);
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node());
    }
    node->backward_fn = std::move(fn);
  }
  return Var(node);
}

Tensor* grad_slot(const Var& v) {
  if (!v.requires_grad()) return nullptr;
  return &v.node()->ensure_grad();
}

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw std::logic_error("backward() requires a scalar root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the reachable tape.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
  }
}

}  // namespace lcye::ag
