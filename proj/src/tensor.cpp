#include "fg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace fg {

namespace {
std::atomic<uint64_t> g_seq{1};
}

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError(str("non-positive extent in shape ", shape_str(shape)));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

void Node::add_grad(const double* g, int64_t n) {
  ensure_grad();
  for (int64_t i = 0; i < n; ++i) grad[i] += g[i];
}

static NodePtr new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  const int64_t n = numel(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw ShapeError(str("value buffer length ", values.size(),
                         " does not match shape ", shape_str(shape)));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return wrap(new_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::zeros(Shape shape) {
  const int64_t n = numel(shape);
  return wrap(new_node(std::move(shape), std::vector<double>(n, 0.0), false));
}

Tensor Tensor::full(Shape shape, double v) {
  const int64_t n = numel(shape);
  return wrap(new_node(std::move(shape), std::vector<double>(n, v), false));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  auto node = new_node(std::move(shape), std::move(values), true);
  node->ensure_grad();
  return wrap(node);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

int Tensor::dim(int i) const { return shape().at(static_cast<size_t>(i)); }

int64_t Tensor::size() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->size();
}

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

std::span<double> Tensor::values() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError(str("item() on tensor of shape ", shape_str(shape())));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::zero_grad() {
  if (!node_) return;
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  if (!node_) return Tensor();
  return constant(node_->shape, node_->value);
}

Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<NodePtr> parents,
               std::function<void(Node&)> backprop) {
  bool req = false;
  for (const auto& p : parents) req = req || (p && p->requires_grad);
  auto node = new_node(std::move(shape), std::move(values), req);
  if (req) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor::wrap(node);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on undefined tensor");
  if (loss.size() != 1)
    throw ContractError(str("backward requires a scalar loss, got shape ",
                            shape_str(loss.shape())));
  NodePtr root = loss.node();
  if (!root->requires_grad) return;  // nothing reachable is trainable

  // Collect the reachable subgraph that participates in gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  // Newer nodes depend only on older ones, so decreasing creation order is a
  // valid reverse topological order.
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!std::isfinite(v))
      throw EngineError(str("non-finite value in ", what));
  }
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel(new_shape) != x.size())
    throw ShapeError(str("cannot reshape ", shape_str(x.shape()), " to ",
                         shape_str(new_shape), ": element counts differ"));
  auto xn = x.node();
  std::vector<double> vals(x.values().begin(), x.values().end());
  return make_op(std::move(new_shape), std::move(vals), {xn},
                 [xn](Node& out) { xn->add_grad(out.grad.data(), out.size()); });
}

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right) {
  if (x.ndim() != 4) throw ShapeError(str("pad2d expects an [N,C,H,W] tensor, got ", shape_str(x.shape())));
  if (top < 0 || bottom < 0 || left < 0 || right < 0)
    throw ShapeError("pad2d amounts must be non-negative");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h + top + bottom, wo = w + left + right;
  std::vector<double> out(static_cast<size_t>(n) * c * ho * wo, 0.0);
  auto xv = x.values();
  for (int i = 0; i < n * c; ++i) {
    const double* src = xv.data() + static_cast<int64_t>(i) * h * w;
    double* dst = out.data() + static_cast<int64_t>(i) * ho * wo;
    for (int r = 0; r < h; ++r)
      std::copy(src + static_cast<int64_t>(r) * w, src + static_cast<int64_t>(r + 1) * w,
                dst + static_cast<int64_t>(r + top) * wo + left);
  }
  auto xn = x.node();
  return make_op({n, c, ho, wo}, std::move(out), {xn},
                 [xn, n, c, h, w, ho, wo, top, left](Node& o) {
                   xn->ensure_grad();
                   for (int i = 0; i < n * c; ++i) {
                     const double* g = o.grad.data() + static_cast<int64_t>(i) * ho * wo;
                     double* dst = xn->grad.data() + static_cast<int64_t>(i) * h * w;
                     for (int r = 0; r < h; ++r)
                       for (int q = 0; q < w; ++q)
                         dst[static_cast<int64_t>(r) * w + q] +=
                             g[static_cast<int64_t>(r + top) * wo + (q + left)];
                   }
                 });
}

Tensor crop2d(const Tensor& x, int top, int bottom, int left, int right) {
  if (x.ndim() != 4) throw ShapeError(str("crop2d expects an [N,C,H,W] tensor, got ", shape_str(x.shape())));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h - top - bottom, wo = w - left - right;
  if (top < 0 || bottom < 0 || left < 0 || right < 0 || ho <= 0 || wo <= 0)
    throw ShapeError(str("invalid crop of ", shape_str(x.shape())));
  std::vector<double> out(static_cast<size_t>(n) * c * ho * wo);
  auto xv = x.values();
  for (int i = 0; i < n * c; ++i) {
    const double* src = xv.data() + static_cast<int64_t>(i) * h * w;
    double* dst = out.data() + static_cast<int64_t>(i) * ho * wo;
    for (int r = 0; r < ho; ++r)
      std::copy(src + static_cast<int64_t>(r + top) * w + left,
                src + static_cast<int64_t>(r + top) * w + left + wo,
                dst + static_cast<int64_t>(r) * wo);
  }
  auto xn = x.node();
  return make_op({n, c, ho, wo}, std::move(out), {xn},
                 [xn, n, c, h, w, ho, wo, top, left](Node& o) {
                   xn->ensure_grad();
                   for (int i = 0; i < n * c; ++i) {
                     const double* g = o.grad.data() + static_cast<int64_t>(i) * ho * wo;
                     double* dst = xn->grad.data() + static_cast<int64_t>(i) * h * w;
                     for (int r = 0; r < ho; ++r)
                       for (int q = 0; q < wo; ++q)
                         dst[static_cast<int64_t>(r + top) * w + (q + left)] +=
                             g[static_cast<int64_t>(r) * wo + q];
                   }
                 });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 4 || b.ndim() != 4)
    throw ShapeError("concat_channels expects [N,C,H,W] tensors");
  const int n = a.dim(0), ca = a.dim(1), h = a.dim(2), w = a.dim(3);
  const int cb = b.dim(1);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w)
    throw ShapeError(str("concat_channels: shapes ", shape_str(a.shape()), " and ",
                         shape_str(b.shape()), " differ outside the channel axis"));
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<double> out(static_cast<size_t>(n) * (ca + cb) * plane);
  auto av = a.values();
  auto bv = b.values();
  for (int i = 0; i < n; ++i) {
    std::copy(av.begin() + static_cast<int64_t>(i) * ca * plane,
              av.begin() + static_cast<int64_t>(i + 1) * ca * plane,
              out.begin() + static_cast<int64_t>(i) * (ca + cb) * plane);
    std::copy(bv.begin() + static_cast<int64_t>(i) * cb * plane,
              bv.begin() + static_cast<int64_t>(i + 1) * cb * plane,
              out.begin() + (static_cast<int64_t>(i) * (ca + cb) + ca) * plane);
  }
  auto an = a.node(), bn = b.node();
  return make_op({n, ca + cb, h, w}, std::move(out), {an, bn},
                 [an, bn, n, ca, cb, plane](Node& o) {
                   for (int i = 0; i < n; ++i) {
                     const double* g = o.grad.data() + static_cast<int64_t>(i) * (ca + cb) * plane;
                     if (an->requires_grad) {
                       an->ensure_grad();
                       double* dst = an->grad.data() + static_cast<int64_t>(i) * ca * plane;
                       for (int64_t j = 0; j < static_cast<int64_t>(ca) * plane; ++j)
                         dst[j] += g[j];
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       double* dst = bn->grad.data() + static_cast<int64_t>(i) * cb * plane;
                       const double* gb = g + static_cast<int64_t>(ca) * plane;
                       for (int64_t j = 0; j < static_cast<int64_t>(cb) * plane; ++j)
                         dst[j] += gb[j];
                     }
                   }
                 });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xn = x.node();
  return make_op({1}, {s}, {xn}, [xn](Node& o) {
    xn->ensure_grad();
    const double g = o.grad[0];
    for (auto& gv : xn->grad) gv += g;
  });
}

}  // namespace fg
