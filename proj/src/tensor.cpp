#include "cogen/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "cogen/error.hpp"

namespace cogen {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {
thread_local bool grad_mode_enabled = true;

void check_shape(const Shape& shape, std::size_t size) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != size) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(size) +
                         " values");
  }
}
}  // namespace

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

template <typename Real>
std::vector<Real>& Node<Real>::parent_grad(std::size_t i) {
  auto& p = *parents[i];
  if (p.grad.empty()) p.grad.assign(p.data.size(), Real(0));
  return p.grad;
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::from(Shape shape, std::vector<Real> data, bool requires_grad) {
  check_shape(shape, data.size());
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::from_op(Shape shape, std::vector<Real> data, std::vector<Tensor> parents,
                                   BackwardFn backward) {
  check_shape(shape, data.size());
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = false;
  if (GradMode::enabled()) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (numel() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

template <typename Real>
std::vector<Real> Tensor<Real>::grad_or_zero() const {
  if (node_->grad.empty()) return std::vector<Real>(numel(), Real(0));
  return node_->grad;
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  return from(shape(), node_->data, false);
}

template <typename Real>
Graph<Real>::Graph(const Tensor<Real>& root) : root_(root) {
  // Iterative post-order DFS; parents are emitted before their consumers.
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack;
  Node<Real>* start = root.node();
  if (!start->requires_grad) return;
  stack.emplace_back(start, 0);
  seen.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
}

template <typename Real>
void Graph<Real>::backward() {
  if (order_.empty()) return;
  // Interior gradients are recomputed on every pass; only leaves accumulate.
  for (Node<Real>* n : order_) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), Real(0));
  }
  Node<Real>* root = root_.node();
  if (root->grad.empty()) root->grad.assign(1, Real(0));
  root->grad[0] += Real(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

template <typename Real>
void backward(const Tensor<Real>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  Graph<Real>(loss).backward();
}

template struct Node<float>;
template struct Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace cogen
