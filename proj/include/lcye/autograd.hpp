#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lcye/tensor.hpp"

namespace lcye::ag {

/// One vertex of the reverse-mode tape. Leaves (parameters, inputs) have no
/// parents; interior nodes carry the closure that pushes their gradient back.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor&)> backward_fn;

  Tensor& ensure_grad();
};

/// Shared handle to a tape node. Copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->ensure_grad(); }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  double item() const;
  void zero_grad();
  Var detach() const { return Var(node_->value, false); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable
/// node that requires them. `root` must hold a single element.
void backward(const Var& root);

bool grad_enabled();

/// Disables tape recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an interior node. `fn` receives the output gradient and must add the
/// input gradients through `grad_slot`.
Var make_op(Tensor value, const std::vector<Var>& inputs, std::function<void(const Tensor&)> fn);

/// Gradient buffer of `v` if it participates in differentiation, else nullptr.
Tensor* grad_slot(const Var& v);

}  // namespace lcye::ag
