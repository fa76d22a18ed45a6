#pragma once

// Reverse-mode differentiation over Tensor values. A Var is a shared handle
// to a graph node; ops create nodes that remember their parents and a closure
// that pushes the node's gradient into those parents. backward() runs the
// closures in reverse topological order from a scalar root.

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "eve/numerics/tensor.hpp"

namespace eve::num {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  // Mutation is for leaves (optimizers, checkpoint loads, finite differences).
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  // Leaves only. Frozen parameters are switched off so no weight gradient is built.
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T{0});
  }
  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// While alive, ops on this thread build no graph (inference, frozen teacher).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled() noexcept;

// Seeds d(root)/d(root) = 1 and accumulates into every reachable node that
// requires grad. Root must hold exactly one element.
template <class T>
void backward(const Var<T>& root);

// Helper for op implementations: builds the output node, wiring parents only
// when at least one input requires grad and grad mode is on.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn);

// Named, ordered collection of trainable leaves.
template <class T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Var<T>& get(const std::string& name) const;
  Var<T>& get(const std::string& name);
  void erase_prefix(const std::string& prefix);
  void zero_grad();
  std::size_t num_elements() const;

  const std::map<std::string, Var<T>>& entries() const noexcept { return params_; }
  std::map<std::string, Var<T>>& entries() noexcept { return params_; }

 private:
  std::map<std::string, Var<T>> params_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template void backward<float>(const Var<float>&);
extern template void backward<double>(const Var<double>&);
extern template Var<float> make_result<float>(Tensor<float>, std::vector<Var<float>>,
                                              std::function<void(Node<float>&)>);
extern template Var<double> make_result<double>(Tensor<double>, std::vector<Var<double>>,
                                                std::function<void(Node<double>&)>);

}  // namespace eve::num
