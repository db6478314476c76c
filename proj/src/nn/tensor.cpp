#include "lcd/nn/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

namespace lcd::nn {
namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string shape_string(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << ']';
  return out.str();
}

template <typename T>
Tape<T>::Tape(const Tensor<T>& root) : root_(root.node()) {
  if (!root_) throw Error(ErrorCode::kInvalidArgument, "tape: undefined root");
  // Iterative post-order DFS; the reverse of the post-order is a topological order.
  std::vector<Node<T>*> post;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  if (root_->requires_grad) {
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  order_.assign(post.rbegin(), post.rend());
}

template <typename T>
void Tape<T>::backward() {
  if (root_->value.size() != 1) throw Error(ErrorCode::kShapeMismatch, "backward: root must be a scalar");
  if (!root_->requires_grad) return;
  root_->grad_buffer()[0] += T(1);
  for (Node<T>* node : order_)
    if (node->backward && !node->grad.empty()) node->backward(*node);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lcd::nn
