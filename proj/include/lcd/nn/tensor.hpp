#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "lcd/error.hpp"

namespace lcd::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

bool grad_enabled();

/// Disables graph recording for its lifetime (inference, parameter updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with an optional position in the autodiff graph. Copies share the node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    if (values.size() != numel(shape))
      throw Error(ErrorCode::kShapeMismatch, "tensor: value count does not match shape " + shape_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T& operator[](std::size_t i) { return node_->value[i]; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (size() != 1) throw Error(ErrorCode::kShapeMismatch, "tensor: item() on non-scalar");
    return node_->value[0];
  }

  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  void zero_grad() { node_->grad.clear(); }

  /// New leaf with copied values and no history.
  Tensor detach() const { return Tensor(node_->shape, node_->value); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Reverse topological order of the graph below a root, each node exactly once.
template <typename T>
class Tape {
 public:
  explicit Tape(const Tensor<T>& root);

  /// Seeds d(root)/d(root) = 1 (root must be a scalar) and runs every recorded backward step.
  void backward();

  /// Nodes in the order backward() visits them.
  const std::vector<Node<T>*>& order() const { return order_; }

 private:
  std::shared_ptr<Node<T>> root_;
  std::vector<Node<T>*> order_;
};

template <typename T>
void backward(const Tensor<T>& root) {
  Tape<T>(root).backward();
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lcd::nn
