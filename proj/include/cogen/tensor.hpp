#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cogen {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename Real>
struct Node;

template <typename Real>
using NodePtr = std::shared_ptr<Node<Real>>;

// One vertex of the dynamic computation graph. Backward rules read `grad` of
// the node they are attached to and accumulate into the parents' grads.
template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty means "no gradient yet" (all zeros)
  bool requires_grad = false;
  std::vector<NodePtr<Real>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  // Returns the parent's grad buffer, allocating zeros on first use.
  std::vector<Real>& parent_grad(std::size_t i);
  bool parent_wants_grad(std::size_t i) const { return parents[i]->requires_grad; }
};

// Graph recording is on by default; NoGradGuard turns it off for the current
// thread (inference, incremental decoding).
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor handle. Copies share the underlying node.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using BackwardFn = std::function<void(Node<Real>&)>;

  Tensor() = default;
  explicit Tensor(NodePtr<Real> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  // Creates the result of an operation. When recording is off or no parent
  // requires a gradient, the parents and backward rule are dropped.
  static Tensor from_op(Shape shape, std::vector<Real> data,
                        std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  // Leading dims flattened: a [.. x n] tensor viewed as rows() x cols().
  std::size_t cols() const { return node_->shape.back(); }
  std::size_t rows() const { return numel() / cols(); }

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }
  Real item() const;
  Real at(std::size_t row, std::size_t col) const { return node_->data[row * cols() + col]; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient view; an absent gradient reads as zeros via grad_or_zero().
  std::span<const Real> grad() const { return node_->grad; }
  std::vector<Real> grad_or_zero() const;
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Tensor detach() const;
  Node<Real>* node() const { return node_.get(); }
  const NodePtr<Real>& node_ptr() const { return node_; }

 private:
  NodePtr<Real> node_;
};

// Topologically ordered record of the operations reachable from a root.
template <typename Real>
class Graph {
 public:
  explicit Graph(const Tensor<Real>& root);
  const std::vector<Node<Real>*>& order() const { return order_; }
  // Seeds d(root)/d(root) = 1 and runs every backward rule once, in reverse.
  void backward();

 private:
  Tensor<Real> root_;
  std::vector<Node<Real>*> order_;
};

template <typename Real>
void backward(const Tensor<Real>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;
extern template struct Node<float>;
extern template struct Node<double>;

}  // namespace cogen
