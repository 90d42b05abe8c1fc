#ifndef FG_TENSOR_HPP
#define FG_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fg/common.hpp"

namespace fg {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One node of the dynamic computation graph. Holds the value buffer, an
// optional gradient buffer of identical length, and a closure that pushes
// this node's gradient into its parents.
class Node {
 public:
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad();
  // Accumulates into the grad buffer, allocating it on first touch.
  void add_grad(const double* g, int64_t n);
};

using NodePtr = std::shared_ptr<Node>;

// Value handle over a graph node. Copies are shallow (same node).
class Tensor {
 public:
  Tensor() = default;

  // Leaf without gradient tracking (inputs, targets).
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  // Trainable leaf: requires_grad set, grad buffer allocated up front so a
  // parameter disconnected from the loss still reports a zero gradient.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int64_t size() const;

  std::span<const double> values() const;
  std::span<double> values();
  // Empty span when no gradient buffer has been allocated.
  std::span<const double> grad() const;

  double item() const;
  bool requires_grad() const;
  void zero_grad();

  // Value copy detached from any graph; keeps requires_grad = false.
  Tensor detach() const;

  NodePtr node() const { return node_; }
  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodePtr node_;
};

// Allocates a graph node for an op result. requires_grad is inherited from
// the parents; `backprop` may be empty for leafs.
Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<NodePtr> parents,
               std::function<void(Node&)> backprop);

// Reverse-mode accumulation from a scalar loss. Gradients accumulate across
// repeated calls until zero_grad() is invoked on the leaves; this is the
// documented contract (no implicit reset).
void backward(const Tensor& loss);

// Throws EngineError naming `what` if any value is NaN/Inf.
void check_finite(const Tensor& t, const char* what);

// --- shape/view ops -------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape);

// Zero-pads the two innermost (spatial) axes of an [N,C,H,W] tensor.
Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right);

// Drops rows/columns from the two innermost axes of an [N,C,H,W] tensor.
Tensor crop2d(const Tensor& x, int top, int bottom, int left, int right);

// Concatenates two [N,C,H,W] tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Sum of all elements, as a scalar tensor.
Tensor sum(const Tensor& x);

}  // namespace fg

#endif  // FG_TENSOR_HPP
