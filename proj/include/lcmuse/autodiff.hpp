#pragma once

// Reverse-mode automatic differentiation over whole tensors.
//
// Every vector-Jacobian rule is written in terms of the differentiable ops of
// this header, so running a backward pass with `create_graph = true` records
// the gradient computation itself and a second backward pass through it is
// valid (reverse-over-reverse). With `create_graph = false` the rules run with
// recording disabled and only produce values.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "lcmuse/conv.hpp"
#include "lcmuse/tensor.hpp"

namespace lcmuse::ad {

template <class T>
class Var;

namespace detail {

inline bool& recording_flag() {
  thread_local bool recording = true;
  return recording;
}

template <class T>
struct Node {
  using Vjp = std::function<std::vector<Var<T>>(const Node&, const Var<T>&, const std::vector<bool>&)>;

  Tensor<T> value;
  std::vector<Var<T>> parents;
  // Maps the upstream gradient to one gradient per parent; entries whose
  // `needed` flag is false may be left undefined.
  Vjp vjp;
  bool requires_grad = false;
  const char* op = "leaf";
};

}  // namespace detail

/// Disables graph recording for its lifetime on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::recording_flag()) { detail::recording_flag() = false; }
  ~NoGradGuard() { detail::recording_flag() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

inline bool is_recording() { return detail::recording_flag(); }

/// Handle to a node of the computation graph. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<detail::Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }
  bool is_leaf() const { return node_->parents.empty(); }

  const detail::Node<T>* node() const noexcept { return node_.get(); }

  static Var from_node(std::shared_ptr<detail::Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

template <class T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <class T>
Var<T> variable(Tensor<T> value) {
  return Var<T>(std::move(value), true);
}

namespace detail {

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, typename Node<T>::Vjp vjp, const char* op) {
  bool needs = false;
  if (is_recording()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (!needs) return constant(std::move(value));
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->vjp = std::move(vjp);
  n->requires_grad = true;
  n->op = op;
  return Var<T>::from_node(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels);
template <class T>
Var<T> conv2d_transpose(const Var<T>& g, const Var<T>& kernels);
template <class T>
Var<T> conv2d_kernel_grad(const Var<T>& x, const Var<T>& g, std::size_t k);
template <class T>
Var<T> channel_sum(const Var<T>& x);
template <class T>
Var<T> broadcast_channels(const Var<T>& v, std::size_t h, std::size_t w);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::make_op<T>(a.value() + b.value(), {a, b},
                            [](const detail::Node<T>&, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{g, g};
                            },
                            "add");
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::make_op<T>(a.value() * s, {a},
                            [s](const detail::Node<T>&, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{scale(g, s)};
                            },
                            "scale");
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::make_op<T>(a.value() - b.value(), {a, b},
                            [](const detail::Node<T>&, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{g, neg(g)};
                            },
                            "sub");
}

/// Elementwise product. A scalar (size-1) operand is broadcast.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.size() == 1 && bv.size() != 1) return mul(b, a);
  if (bv.size() == 1 && av.size() != 1) {
    // broadcast scalar b over a
    Tensor<T> out = av * bv[0];
    return detail::make_op<T>(std::move(out), {a, b},
                              [](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>& need) {
                                std::vector<Var<T>> r(2);
                                if (need[0]) r[0] = mul(g, n.parents[1]);
                                if (need[1]) r[1] = dot(g, n.parents[0]);
                                return r;
                              },
                              "mul_scalar");
  }
  return detail::make_op<T>(hadamard(av, bv), {a, b},
                            [](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>& need) {
                              std::vector<Var<T>> r(2);
                              if (need[0]) r[0] = mul(g, n.parents[1]);
                              if (need[1]) r[1] = mul(g, n.parents[0]);
                              return r;
                            },
                            "mul");
}

/// Inner product of two same-shape tensors, as a scalar.
template <class T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  return detail::make_op<T>(Tensor<T>::scalar(lcmuse::dot(a.value(), b.value())), {a, b},
                            [](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>& need) {
                              std::vector<Var<T>> r(2);
                              if (need[0]) r[0] = mul(n.parents[1], g);
                              if (need[1]) r[1] = mul(n.parents[0], g);
                              return r;
                            },
                            "dot");
}

template <class T>
Var<T> sum_squares(const Var<T>& a) {
  return dot(a, a);
}

template <class T>
Var<T> sum(const Var<T>& a) {
  return detail::make_op<T>(Tensor<T>::scalar(lcmuse::sum(a.value())), {a},
                            [](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{mul(constant(Tensor<T>(n.parents[0].shape(), T(1))), g)};
                            },
                            "sum");
}

/// Scalar square root.
template <class T>
Var<T> sqrt(const Var<T>& a) {
  if (a.value().size() != 1) throw ShapeError("sqrt: expects a scalar");
  return detail::make_op<T>(Tensor<T>::scalar(std::sqrt(a.value()[0])), {a},
                            [](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{div(g, scale(sqrt(n.parents[0]), T(2)))};
                            },
                            "sqrt");
}

/// Scalar division a / b.
template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  if (a.value().size() != 1 || b.value().size() != 1) throw ShapeError("div: expects scalars");
  return detail::make_op<T>(Tensor<T>::scalar(a.value()[0] / b.value()[0]), {a, b},
                            [](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>& need) {
                              std::vector<Var<T>> r(2);
                              const auto& a = n.parents[0];
                              const auto& b = n.parents[1];
                              if (need[0]) r[0] = div(g, b);
                              if (need[1]) r[1] = neg(div(mul(g, a), mul(b, b)));
                              return r;
                            },
                            "div");
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> mask(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = x.value()[i] > T(0) ? T(1) : T(0);
  Tensor<T> out = hadamard(x.value(), mask);
  // The kink has measure zero, so the mask is treated as a constant.
  return detail::make_op<T>(std::move(out), {x},
                            [mask = std::move(mask)](const detail::Node<T>&, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{mul(g, constant(mask))};
                            },
                            "relu");
}

/// Logistic function; its derivative s (1 - s) is built from recorded ops so
/// that derivatives of any order are available.
template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::make_op<T>(lcmuse::sigmoid(x.value()), {x},
                            [](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>&) {
                              const auto s = sigmoid(n.parents[0]);
                              const auto one = constant(Tensor<T>(s.shape(), T(1)));
                              return std::vector<Var<T>>{mul(g, mul(s, sub(one, s)))};
                            },
                            "sigmoid");
}

/// log(1 + e^x), a smooth counterpart of relu with derivative sigmoid(x).
template <class T>
Var<T> softplus(const Var<T>& x) {
  return detail::make_op<T>(lcmuse::softplus(x.value()), {x},
                            [](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{mul(g, sigmoid(n.parents[0]))};
                            },
                            "softplus");
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels) {
  const std::size_t k = kernels.value().dim(2);
  return detail::make_op<T>(lcmuse::conv2d(x.value(), kernels.value()), {x, kernels},
                            [k](const detail::Node<T>& n, const Var<T>& g, const std::vector<bool>& need) {
                              std::vector<Var<T>> r(2);
                              if (need[0]) r[0] = conv2d_transpose(g, n.parents[1]);
                              if (need[1]) r[1] = conv2d_kernel_grad(n.parents[0], g, k);
                              return r;
                            },
                            "conv2d");
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels, const Var<T>& bias) {
  const std::size_t h = x.value().dim(1), w = x.value().dim(2);
  return add(conv2d(x, kernels), broadcast_channels(bias, h, w));
}

template <class T>
Var<T> conv2d_transpose(const Var<T>& g, const Var<T>& kernels) {
  const std::size_t k = kernels.value().dim(2);
  return detail::make_op<T>(lcmuse::conv2d_input_grad(g.value(), kernels.value()), {g, kernels},
                            [k](const detail::Node<T>& n, const Var<T>& up, const std::vector<bool>& need) {
                              std::vector<Var<T>> r(2);
                              if (need[0]) r[0] = conv2d(up, n.parents[1]);
                              if (need[1]) r[1] = conv2d_kernel_grad(up, n.parents[0], k);
                              return r;
                            },
                            "conv2d_transpose");
}

template <class T>
Var<T> conv2d_kernel_grad(const Var<T>& x, const Var<T>& g, std::size_t k) {
  return detail::make_op<T>(lcmuse::conv2d_kernel_grad(x.value(), g.value(), k), {x, g},
                            [](const detail::Node<T>& n, const Var<T>& up, const std::vector<bool>& need) {
                              std::vector<Var<T>> r(2);
                              if (need[0]) r[0] = conv2d_transpose(n.parents[1], up);
                              if (need[1]) r[1] = conv2d(n.parents[0], up);
                              return r;
                            },
                            "conv2d_kernel_grad");
}

template <class T>
Var<T> channel_sum(const Var<T>& x) {
  const std::size_t h = x.value().dim(1), w = x.value().dim(2);
  return detail::make_op<T>(lcmuse::channel_sum(x.value()), {x},
                            [h, w](const detail::Node<T>&, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{broadcast_channels(g, h, w)};
                            },
                            "channel_sum");
}

template <class T>
Var<T> broadcast_channels(const Var<T>& v, std::size_t h, std::size_t w) {
  return detail::make_op<T>(lcmuse::broadcast_channels(v.value(), h, w), {v},
                            [](const detail::Node<T>&, const Var<T>& g, const std::vector<bool>&) {
                              return std::vector<Var<T>>{channel_sum(g)};
                            },
                            "broadcast_channels");
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

template <class T>
struct Gradients {
  std::vector<Var<T>> values;
  // true where the corresponding wrt node is not reachable from the root; its
  // gradient is then zero
  std::vector<bool> unreachable;

  bool any_unreachable() const {
    for (bool u : unreachable)
      if (u) return true;
    return false;
  }
  const Tensor<T>& operator[](std::size_t i) const { return values[i].value(); }
  std::size_t size() const { return values.size(); }
};

/// Gradients of a scalar root with respect to `wrt`.
///
/// With `create_graph` the returned gradients are recorded graph nodes and can
/// themselves be differentiated.
template <class T>
Gradients<T> grad(const Var<T>& root, const std::vector<Var<T>>& wrt, bool create_graph = false) {
  using NodeT = detail::Node<T>;
  if (!root.defined() || root.value().size() != 1) {
    throw ShapeError("grad: root must be a scalar, got shape " +
                     (root.defined() ? shape_string(root.shape()) : std::string("<undefined>")));
  }

  std::unordered_set<const NodeT*> targets;
  for (const auto& w : wrt) targets.insert(w.node());

  // Post-order over the recorded graph: parents come before children.
  std::vector<const NodeT*> order;
  std::unordered_map<const NodeT*, bool> reaches;  // node lies on a path to some wrt node
  if (root.requires_grad()) {
    std::vector<std::pair<const NodeT*, std::size_t>> stack{{root.node(), 0}};
    std::unordered_set<const NodeT*> visited{root.node()};
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        const NodeT* p = n->parents[next++].node();
        if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        continue;
      }
      bool r = targets.count(n) > 0;
      for (const auto& p : n->parents) {
        auto it = reaches.find(p.node());
        r = r || (it != reaches.end() && it->second);
      }
      reaches[n] = r;
      order.push_back(n);
      stack.pop_back();
    }
  }

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  std::unordered_map<const NodeT*, Var<T>> grads;
  if (!order.empty()) grads[root.node()] = constant(Tensor<T>(root.shape(), T(1)));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodeT* n = *it;
    if (!reaches[n] || !n->vjp) continue;
    auto g = grads.find(n);
    if (g == grads.end()) continue;
    std::vector<bool> need(n->parents.size());
    bool any = false;
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      const auto* p = n->parents[i].node();
      auto rp = reaches.find(p);
      need[i] = p->requires_grad && rp != reaches.end() && rp->second;
      any = any || need[i];
    }
    if (!any) continue;
    const Var<T> upstream = g->second;
    auto pg = n->vjp(*n, upstream, need);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      if (!need[i] || !pg[i].defined()) continue;
      const NodeT* p = n->parents[i].node();
      auto slot = grads.find(p);
      if (slot == grads.end()) {
        grads.emplace(p, pg[i]);
      } else {
        slot->second = add(slot->second, pg[i]);
      }
    }
  }

  Gradients<T> out;
  out.values.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto g = grads.find(w.node());
    if (g == grads.end()) {
      out.values.push_back(constant(Tensor<T>(w.shape())));
      out.unreachable.push_back(true);
    } else {
      Var<T> v = g->second;
      if (!create_graph && v.requires_grad()) v = constant(v.value());
      out.values.push_back(std::move(v));
      out.unreachable.push_back(false);
    }
  }
  return out;
}

}  // namespace lcmuse::ad
