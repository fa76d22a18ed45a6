#include "eve/numerics/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace eve::num {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() noexcept { return g_grad_enabled; }

template <class T>
void backward(const Var<T>& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " +
                     (root.defined() ? to_string(root.shape()) : std::string("undefined")));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; deep decoder graphs would overflow recursion.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  Var<T> out(std::move(value));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  Node<T>* n = out.node();
  n->requires_grad = true;
  n->parents.reserve(inputs.size());
  for (auto& in : inputs) n->parents.push_back(in.node_ptr());
  n->backward_fn = std::move(backward_fn);
  return out;
}

template <class T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  Var<T> v(std::move(init), true);
  params_.emplace(name, v);
  return v;
}

template <class T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <class T>
Var<T>& ParamStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

template <class T>
void ParamStore<T>::erase_prefix(const std::string& prefix) {
  for (auto it = params_.begin(); it != params_.end();) {
    if (it->first.compare(0, prefix.size(), prefix) == 0) it = params_.erase(it);
    else ++it;
  }
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

template <class T>
std::size_t ParamStore<T>::num_elements() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().size();
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;
template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template Var<float> make_result<float>(Tensor<float>, std::vector<Var<float>>,
                                       std::function<void(Node<float>&)>);
template Var<double> make_result<double>(Tensor<double>, std::vector<Var<double>>,
                                         std::function<void(Node<double>&)>);

}  // namespace eve::num
