#pragma once

#include <functional>
#include <vector>

#include "sldb/numerics/tensor.hpp"

namespace sldb {

/// Records backward rules of differentiable kernels in execution order.
///
/// Constructing a Tape makes it the active tape for its scalar type on the
/// calling thread; destruction restores the previously active one. Only
/// kernels executed while a tape is active and with at least one input that
/// requires gradients are recorded. backward() may run once per tape.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_rule);
  /// Seeds d(loss)/d(loss) = 1 and replays recorded rules in reverse.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return rules_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> rules_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

namespace autograd {

/// True when a tape is active and any argument requires gradients.
template <typename T, typename... Rest>
bool needs_grad(const Tensor<T>& first, const Rest&... rest) {
  if (Tape<T>::active() == nullptr) return false;
  return first.requires_grad() || (rest.requires_grad() || ...);
}

/// Returns the gradient buffer of a node, allocating zeros on first use.
template <typename T>
std::vector<T>& grad_buffer(TensorNode<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
  return node.grad;
}

/// Marks `out` as differentiable and records its backward rule.
template <typename T>
void record(Tensor<T>& out, std::function<void()> rule) {
  out.set_requires_grad(true);
  Tape<T>::active()->record(std::move(rule));
}

}  // namespace autograd
}  // namespace sldb
