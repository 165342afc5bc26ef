#pragma once

// A small reverse-mode graph restricted to the operator set in ops.hpp.
// Nodes are created only when some input requires a gradient, so running
// with frozen parameters (or under NoGradGuard) keeps nothing alive beyond
// the values still referenced by the caller.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtpn/ops.hpp"
#include "mtpn/vjp.hpp"

namespace mtpn::ag {

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <Element T>
struct Node {
  std::shared_ptr<const Tensor<T>> value;
  std::optional<Tensor<T>> grad;
  bool requires_grad = false;
  const char* non_differentiable = nullptr;  // op name when the node blocks gradients
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(Tensor<T> g) {
    if (!requires_grad) return;
    if (!grad) {
      grad = std::move(g);
      return;
    }
    auto dst = grad->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  void accumulate(std::span<const T> g, const Shape& shape) {
    accumulate(Tensor<T>(shape, std::vector<T>(g.begin(), g.end())));
  }
};

template <Element T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  /// Owns a copy of t; never requires a gradient.
  static Var constant(Tensor<T> t) { return leaf(std::move(t), false); }

  static Var leaf(Tensor<T> t, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::make_shared<const Tensor<T>>(std::move(t));
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  /// Wraps t without copying. t must outlive every graph built from this Var.
  static Var borrow(const Tensor<T>& t, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::shared_ptr<const Tensor<T>>(std::shared_ptr<const Tensor<T>>(), &t);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool valid() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return *node_->value; }
  const Shape& shape() const { return node_->value->shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const Tensor<T>* grad() const { return node_->grad ? &*node_->grad : nullptr; }
  const NodePtr& node() const noexcept { return node_; }

 private:
  NodePtr node_;
};

/// Builds the output node of an op. backward is attached only when recording
/// and at least one input requires a gradient.
template <Element T, class Backward>
Var<T> make_op(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::make_shared<const Tensor<T>>(std::move(value));
  bool any = false;
  for (const Var<T>& v : inputs) any = any || v.requires_grad();
  if (detail::grad_enabled && any) {
    n->requires_grad = true;
    for (const Var<T>& v : inputs) n->parents.push_back(v.node());
    n->backward = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(n));
}

template <Element T, class Backward>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::make_shared<const Tensor<T>>(std::move(value));
  bool any = false;
  for (const Var<T>& v : inputs) any = any || v.requires_grad();
  if (detail::grad_enabled && any) {
    n->requires_grad = true;
    for (const Var<T>& v : inputs) n->parents.push_back(v.node());
    n->backward = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(n));
}

template <Element T>
Var<T> non_differentiable(Tensor<T> value, const Var<T>& input, const char* op) {
  auto out = make_op(std::move(value), {input}, [](Node<T>&) {});
  out.node()->non_differentiable = op;
  return out;
}

/// Propagates seed (same shape as root) back through the recorded graph.
template <Element T>
void backward(const Var<T>& root, Tensor<T> seed) {
  if (!root.requires_grad()) return;
  if (!(seed.shape() == root.shape())) throw ShapeError("backward", "seed", "shape must match root");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(std::move(seed));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->grad || node->parents.empty()) continue;
    if (node->non_differentiable) {
      throw GradientError(std::string("no gradient through non-differentiable op '") + node->non_differentiable + "'");
    }
    node->backward(*node);
    node->grad.reset();
  }
}

template <Element T>
void backward(const Var<T>& root) {
  if (root.value().numel() != 1) throw ShapeError("backward", "root", "implicit seed needs a scalar root");
  backward(root, Tensor<T>(root.shape(), T(1)));
}

namespace detail {
template <Element T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  return *self.parents[i];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operators

/// bias may be an invalid Var for bias-free convolutions.
template <Element T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ops::Conv2dParams& p) {
  const bool has_bias = bias.valid();
  std::span<const T> b = has_bias ? bias.value().data() : std::span<const T>{};
  Tensor<T> y = ops::conv2d(x.value(), weight.value(), b, p);
  auto back = [p, has_bias](Node<T>& self) {
    Node<T>& nx = detail::parent(self, 0);
    Node<T>& nw = detail::parent(self, 1);
    auto g = vjp::conv2d(*nx.value, *nw.value, has_bias, p, *self.grad);
    nx.accumulate(std::move(g.input));
    nw.accumulate(std::move(g.weight));
    if (has_bias) {
      Node<T>& nb = detail::parent(self, 2);
      nb.accumulate(std::span<const T>(g.bias), nb.value->shape());
    }
  };
  if (has_bias) return make_op(std::move(y), {x, weight, bias}, back);
  return make_op(std::move(y), {x, weight}, back);
}

template <Element T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const Var<T>& mean, const Var<T>& var,
                 T eps) {
  Tensor<T> y = ops::batchnorm_infer(x.value(), gamma.value().data(), beta.value().data(), mean.value().data(),
                                     var.value().data(), eps);
  return make_op(std::move(y), {x, gamma, beta, mean, var}, [eps](Node<T>& self) {
    Node<T>& nx = detail::parent(self, 0);
    Node<T>& ng = detail::parent(self, 1);
    Node<T>& nb = detail::parent(self, 2);
    auto g = vjp::batchnorm_infer(*nx.value, ng.value->data(), detail::parent(self, 3).value->data(),
                                  detail::parent(self, 4).value->data(), eps, *self.grad);
    nx.accumulate(std::move(g.input));
    ng.accumulate(std::span<const T>(g.gamma), ng.value->shape());
    nb.accumulate(std::span<const T>(g.beta), nb.value->shape());
  });
}

template <Element T>
Var<T> relu(const Var<T>& x) {
  return make_op(ops::relu(x.value()), {x}, [](Node<T>& self) {
    Node<T>& nx = detail::parent(self, 0);
    nx.accumulate(vjp::relu(*nx.value, *self.grad));
  });
}

template <Element T>
Var<T> relu6(const Var<T>& x) {
  return make_op(ops::relu6(x.value()), {x}, [](Node<T>& self) {
    Node<T>& nx = detail::parent(self, 0);
    nx.accumulate(vjp::relu6(*nx.value, *self.grad));
  });
}

template <Element T>
Var<T> sigmoid(const Var<T>& x) {
  return make_op(ops::sigmoid(x.value()), {x}, [](Node<T>& self) {
    detail::parent(self, 0).accumulate(vjp::sigmoid(*self.value, *self.grad));
  });
}

template <Element T>
Var<T> softmax_channels(const Var<T>& x) {
  return make_op(ops::softmax_channels(x.value()), {x}, [](Node<T>& self) {
    detail::parent(self, 0).accumulate(vjp::softmax_channels(*self.value, *self.grad));
  });
}

template <Element T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_op(ops::add(a.value(), b.value()), {a, b}, [](Node<T>& self) {
    detail::parent(self, 0).accumulate(*self.grad);
    detail::parent(self, 1).accumulate(*self.grad);
  });
}

template <Element T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  std::vector<const Tensor<T>*> values;
  for (const Var<T>& v : parts) values.push_back(&v.value());
  Tensor<T> y = ops::concat_channels<T>(values);
  return make_op(std::move(y), parts, [](Node<T>& self) {
    std::vector<Shape> shapes;
    for (auto& p : self.parents) shapes.push_back(p->value->shape());
    auto grads = vjp::concat_channels<T>(shapes, *self.grad);
    for (std::size_t i = 0; i < grads.size(); ++i) self.parents[i]->accumulate(std::move(grads[i]));
  });
}

template <Element T>
Var<T> maxpool(const Var<T>& x, const ops::PoolParams& p) {
  return make_op(ops::maxpool(x.value(), p), {x}, [p](Node<T>& self) {
    Node<T>& nx = detail::parent(self, 0);
    nx.accumulate(vjp::maxpool(*nx.value, p, *self.grad));
  });
}

template <Element T>
Var<T> avgpool(const Var<T>& x, const ops::PoolParams& p) {
  return make_op(ops::avgpool(x.value(), p), {x}, [p](Node<T>& self) {
    Node<T>& nx = detail::parent(self, 0);
    nx.accumulate(vjp::avgpool(nx.value->shape(), p, *self.grad));
  });
}

template <Element T>
Var<T> global_avgpool(const Var<T>& x) {
  return make_op(ops::global_avgpool(x.value()), {x}, [](Node<T>& self) {
    Node<T>& nx = detail::parent(self, 0);
    nx.accumulate(vjp::global_avgpool(nx.value->shape(), *self.grad));
  });
}

template <Element T>
Var<T> resize_bilinear(const Var<T>& x, std::int64_t out_h, std::int64_t out_w) {
  return make_op(ops::resize_bilinear(x.value(), out_h, out_w), {x}, [](Node<T>& self) {
    Node<T>& nx = detail::parent(self, 0);
    nx.accumulate(vjp::resize_bilinear(nx.value->shape(), *self.grad));
  });
}

/// inputs fused with the raw weight vector stored in `weights` (shape (1, m, 1, 1)).
template <Element T>
Var<T> weighted_fusion(const std::vector<Var<T>>& inputs, const Var<T>& weights, T eps) {
  std::vector<const Tensor<T>*> values;
  for (const Var<T>& v : inputs) values.push_back(&v.value());
  Tensor<T> y = ops::weighted_fusion<T>(values, weights.value().data(), eps);
  std::vector<Var<T>> all = inputs;
  all.push_back(weights);
  return make_op(std::move(y), all, [eps](Node<T>& self) {
    const std::size_t m = self.parents.size() - 1;
    std::vector<const Tensor<T>*> xs;
    for (std::size_t i = 0; i < m; ++i) xs.push_back(self.parents[i]->value.get());
    Node<T>& nw = *self.parents[m];
    auto g = vjp::weighted_fusion<T>(xs, nw.value->data(), eps, *self.grad);
    for (std::size_t i = 0; i < m; ++i) self.parents[i]->accumulate(std::move(g.inputs[i]));
    nw.accumulate(std::span<const T>(g.weights), nw.value->shape());
  });
}

// ---------------------------------------------------------------------------
// Non-differentiable operators: values flow, gradients raise GradientError.

template <Element T>
Var<T> argmax_channels(const Var<T>& x) {
  return non_differentiable(ops::argmax_channels(x.value()), x, "argmax");
}

template <Element T>
Var<T> threshold(const Var<T>& x, T level) {
  return non_differentiable(ops::threshold(x.value(), level), x, "threshold");
}

}  // namespace mtpn::ag
