#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "npr/core/common.hpp"

namespace npr::ad {

using Shape = std::vector<long>;

inline long numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // same length as value once touched
  bool requires_grad = false;
  bool is_leaf = true;
  bool backward_ran = false;  // set on the node backward() was called on
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Value-semantic handle to a graph node. Copies share the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    return filled(std::move(s), T(0), requires_grad);
  }
  static Tensor filled(Shape s, T v, bool requires_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<Node<T>>();
    t.n_->shape = std::move(s);
    t.n_->value.assign(size_t(numel(t.n_->shape)), v);
    t.n_->requires_grad = requires_grad;
    return t;
  }
  static Tensor from_data(Shape s, std::vector<T> data, bool requires_grad = false) {
    if (long(data.size()) != numel(s))
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(s));
    Tensor t;
    t.n_ = std::make_shared<Node<T>>();
    t.n_->shape = std::move(s);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return bool(n_); }
  const Shape& shape() const { return n_->shape; }
  long size() const { return numel(n_->shape); }
  long rows() const { return n_->shape.empty() ? 1 : n_->shape[0]; }
  long cols() const { return n_->shape.size() < 2 ? 1 : n_->shape[1]; }
  std::vector<T>& values() { return n_->value; }
  const std::vector<T>& values() const { return n_->value; }
  T item() const {
    if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
    return n_->value[0];
  }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }
  bool is_leaf() const { return n_->is_leaf; }
  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }

  std::shared_ptr<Node<T>> node() const { return n_; }

  // Detached copy of the values; never participates in a graph.
  Tensor detach() const {
    Tensor t;
    t.n_ = std::make_shared<Node<T>>();
    t.n_->shape = n_->shape;
    t.n_->value = n_->value;
    t.n_->requires_grad = false;
    return t;
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
inline void toposort(Node<T>* root, std::vector<Node<T>*>& order) {
  // Iterative DFS postorder over the grad-requiring ancestry.
  std::vector<std::pair<Node<T>*, size_t>> stack;
  std::unordered_map<Node<T>*, bool> visited;
  stack.push_back({root, 0});
  visited[root] = true;
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && !visited[p]) {
        visited[p] = true;
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate into leaves;
// calling twice on the same node without rebuilding the graph is an error.
template <typename T>
inline void backward(Tensor<T> loss) {
  auto root = loss.node();
  if (numel(root->shape) != 1)
    throw std::invalid_argument("backward expects a scalar loss, got shape " +
                                shape_str(root->shape));
  if (!root->requires_grad)
    throw std::invalid_argument("backward on a tensor detached from all parameters");
  if (root->backward_ran)
    throw std::logic_error("second backward without graph reset");
  root->backward_ran = true;

  std::vector<Node<T>*> order;
  detail::toposort(root.get(), order);
  for (Node<T>* n : order)
    if (!n->is_leaf) n->grad.assign(n->value.size(), T(0));
    else n->ensure_grad();
  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace npr::ad
