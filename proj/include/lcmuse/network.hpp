#pragma once

// Energy model E(x) = ||x - psi(x)||^2 / (2 sigma_f^2) on a plain convolutional
// network psi, its score H = grad_x E and the residual map T = I - H.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lcmuse/autodiff.hpp"
#include "lcmuse/conv.hpp"
#include "lcmuse/errors.hpp"
#include "lcmuse/rng.hpp"
#include "lcmuse/tensor.hpp"

namespace lcmuse {

enum class Activation { relu, softplus };

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  throw ConfigError("network: unknown activation '" + s + "' (expected relu|softplus)");
}

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "softplus"; }

struct NetworkSpec {
  int layers = 5;
  int channels = 64;
  int kernel_size = 3;
  int io_channels = 2;
  bool bias = true;
  // relu makes the score piecewise constant in its Jacobian and discontinuous
  // across activation boundaries; softplus keeps it locally Lipschitz
  Activation activation = Activation::relu;

  void validate() const {
    if (layers < 1) throw ConfigError("network: layers must be >= 1");
    if (channels < 1) throw ConfigError("network: channels must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("network: kernel_size must be odd");
    if (io_channels < 1) throw ConfigError("network: io_channels must be >= 1");
  }

  std::size_t in_channels(int layer) const {
    return static_cast<std::size_t>(layer == 0 ? io_channels : channels);
  }
  std::size_t out_channels(int layer) const {
    return static_cast<std::size_t>(layer == layers - 1 ? io_channels : channels);
  }
  Shape kernel_shape(int layer) const {
    const auto k = static_cast<std::size_t>(kernel_size);
    return {out_channels(layer), in_channels(layer), k, k};
  }

  bool operator==(const NetworkSpec&) const = default;
};

enum class InitKind { uniform, near_identity };

inline InitKind parse_init_kind(const std::string& s) {
  if (s == "uniform") return InitKind::uniform;
  if (s == "identity" || s == "near_identity") return InitKind::near_identity;
  throw ConfigError("network: unknown init '" + s + "' (expected uniform|identity)");
}

/// Network parameters plus sigma_f. Parameters are stored layer by layer as
/// kernel, then bias when biases are enabled.
template <class T>
class EnergyModel {
 public:
  EnergyModel() = default;

  EnergyModel(NetworkSpec spec, T sigma_f) : spec_(spec), sigma_f_(sigma_f) {
    spec_.validate();
    if (!(sigma_f > T(0))) throw ConfigError("energy model: sigma_f must be positive");
    for (int l = 0; l < spec_.layers; ++l) {
      params_.emplace_back(spec_.kernel_shape(l));
      if (spec_.bias) params_.emplace_back(Shape{spec_.out_channels(l)});
    }
  }

  const NetworkSpec& spec() const { return spec_; }
  T sigma_f() const { return sigma_f_; }

  std::vector<Tensor<T>>& parameters() { return params_; }
  const std::vector<Tensor<T>>& parameters() const { return params_; }

  std::size_t stride() const { return spec_.bias ? 2 : 1; }
  Tensor<T>& kernel(int layer) { return params_[layer * stride()]; }
  const Tensor<T>& kernel(int layer) const { return params_[layer * stride()]; }
  Tensor<T>* bias(int layer) { return spec_.bias ? &params_[layer * 2 + 1] : nullptr; }
  const Tensor<T>* bias(int layer) const { return spec_.bias ? &params_[layer * 2 + 1] : nullptr; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  template <class U>
  EnergyModel<U> cast() const {
    EnergyModel<U> out(spec_, static_cast<U>(sigma_f_));
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i] = params_[i].template cast<U>();
    return out;
  }

 private:
  NetworkSpec spec_;
  T sigma_f_ = T(0.1);
  std::vector<Tensor<T>> params_;
};

/// Builds a model with the requested initialization. Biases start at zero.
///
/// `uniform` draws kernels from U(-b, b) with b = sqrt(6 / fan_in).
/// `near_identity` wires channels 0..3 so that psi(x) = x exactly (a positive
/// and negative part per input channel, act(x) - act(-x) = x for relu and
/// softplus) and fills the remaining weights with small uniform noise: 0.1 b
/// in the hidden layers and 1e-3 b in the output layer, so that H starts near
/// zero instead of amplifying the noise by 1 / sigma_f^2.
template <class T>
EnergyModel<T> make_model(const NetworkSpec& spec, T sigma_f, InitKind init, std::uint64_t seed) {
  EnergyModel<T> model(spec, sigma_f);
  Rng rng(seed);
  const std::size_t k = static_cast<std::size_t>(spec.kernel_size);
  const std::size_t c = k / 2;
  for (int l = 0; l < spec.layers; ++l) {
    auto& K = model.kernel(l);
    const double fan_in = static_cast<double>(K.dim(1) * k * k);
    const T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
    const bool last = l == spec.layers - 1 && spec.layers > 1;
    const T amp = init == InitKind::uniform ? bound : (last ? T(1e-3) : T(0.1)) * bound;
    K = uniform_tensor<T>(K.shape(), rng, -amp, amp);
  }
  if (init == InitKind::uniform) return model;

  const int io = spec.io_channels;
  if (spec.layers == 1) {
    auto& K = model.kernel(0);
    K.fill(T(0));
    for (int i = 0; i < io; ++i) K(i, i, c, c) = T(1);
    return model;
  }
  if (spec.channels < 2 * io) {
    throw ConfigError("network: identity init needs at least " + std::to_string(2 * io) + " channels");
  }
  const std::size_t carried = static_cast<std::size_t>(2 * io);
  auto clear_rows = [&](Tensor<T>& K, std::size_t rows) {
    const std::size_t row = K.size() / K.dim(0);
    std::fill(K.data(), K.data() + rows * row, T(0));
  };
  {
    auto& K = model.kernel(0);
    clear_rows(K, carried);
    for (int i = 0; i < io; ++i) {
      K(i, i, c, c) = T(1);
      K(io + i, i, c, c) = T(-1);
    }
  }
  for (int l = 1; l < spec.layers - 1; ++l) {
    auto& K = model.kernel(l);
    clear_rows(K, carried);
    // (a, b) -> (act(a - b), act(b - a)) keeps a - b = x for relu and softplus
    for (int i = 0; i < io; ++i) {
      K(i, i, c, c) = T(1);
      K(i, io + i, c, c) = T(-1);
      K(io + i, io + i, c, c) = T(1);
      K(io + i, i, c, c) = T(-1);
    }
  }
  {
    auto& K = model.kernel(spec.layers - 1);
    for (int i = 0; i < io; ++i) {
      K(i, i, c, c) += T(1);
      K(i, io + i, c, c) -= T(1);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Plain evaluation
// ---------------------------------------------------------------------------

template <class T>
void check_image_shape(const EnergyModel<T>& model, const Tensor<T>& x, const char* op) {
  if (x.rank() != 3) throw ShapeError(std::string(op) + ": expected [C,H,W], got " + shape_string(x.shape()));
  if (x.dim(0) != static_cast<std::size_t>(model.spec().io_channels)) {
    throw ShapeError(std::string(op) + ": axis 0 (channels) is " + std::to_string(x.dim(0)) + ", network expects " +
                     std::to_string(model.spec().io_channels));
  }
}

/// Network forward pass; activation after every layer but the last.
template <class T>
Tensor<T> psi(const EnergyModel<T>& model, const Tensor<T>& x) {
  check_image_shape(model, x, "psi");
  Tensor<T> h = x;
  const int L = model.spec().layers;
  for (int l = 0; l < L; ++l) {
    const auto* b = model.bias(l);
    h = conv2d(h, model.kernel(l), b ? *b : Tensor<T>{});
    if (l < L - 1) h = model.spec().activation == Activation::relu ? relu(std::move(h)) : softplus(std::move(h));
  }
  return h;
}

template <class T>
T energy(const EnergyModel<T>& model, const Tensor<T>& x) {
  const auto r = x - psi(model, x);
  return squared_norm(r) / (T(2) * model.sigma_f() * model.sigma_f());
}

// ---------------------------------------------------------------------------
// Differentiable evaluation
// ---------------------------------------------------------------------------

/// Model parameters lifted into graph nodes. Trainable nodes collect gradients.
template <class T>
struct BoundModel {
  NetworkSpec spec;
  T sigma_f;
  std::vector<ad::Var<T>> params;

  const ad::Var<T>& kernel(int layer) const { return params[layer * (spec.bias ? 2 : 1)]; }
  const ad::Var<T>* bias(int layer) const { return spec.bias ? &params[layer * 2 + 1] : nullptr; }
};

template <class T>
BoundModel<T> bind(const EnergyModel<T>& model, bool trainable) {
  BoundModel<T> b{model.spec(), model.sigma_f(), {}};
  for (const auto& p : model.parameters()) b.params.emplace_back(p, trainable);
  return b;
}

template <class T>
ad::Var<T> psi(const BoundModel<T>& m, const ad::Var<T>& x) {
  ad::Var<T> h = x;
  for (int l = 0; l < m.spec.layers; ++l) {
    const auto* b = m.bias(l);
    h = b ? ad::conv2d(h, m.kernel(l), *b) : ad::conv2d(h, m.kernel(l));
    if (l < m.spec.layers - 1) h = m.spec.activation == Activation::relu ? ad::relu(h) : ad::softplus(h);
  }
  return h;
}

template <class T>
ad::Var<T> energy(const BoundModel<T>& m, const ad::Var<T>& x) {
  return ad::scale(ad::sum_squares(ad::sub(x, psi(m, x))), T(1) / (T(2) * m.sigma_f * m.sigma_f));
}

/// Score as a graph node. With `create_graph` it stays differentiable in x and
/// in trainable parameters. `x` must be a graph variable.
template <class T>
ad::Var<T> score(const BoundModel<T>& m, const ad::Var<T>& x, bool create_graph) {
  if (!x.requires_grad()) throw ConfigError("score: x must be a variable node");
  return ad::grad(energy(m, x), {x}, create_graph).values[0];
}

template <class T>
ad::Var<T> t_map(const BoundModel<T>& m, const ad::Var<T>& x, bool create_graph) {
  return ad::sub(x, score(m, x, create_graph));
}

template <class T>
Tensor<T> score(const EnergyModel<T>& model, const Tensor<T>& x) {
  check_image_shape(model, x, "score");
  const auto bm = bind(model, false);
  return score(bm, ad::variable(x), false).value();
}

template <class T>
Tensor<T> t_map(const EnergyModel<T>& model, const Tensor<T>& x) {
  return x - score(model, x);
}

/// Certified smoothness constant of the score when T = I - H is (1 - m)-Lipschitz.
template <class T>
T score_lipschitz_bound(T m) {
  if (!(m > T(0) && m <= T(1))) throw ConfigError("score_lipschitz_bound: m must lie in (0, 1]");
  return T(2) - m;
}

/// Closed Euclidean ball.
template <class T>
struct Ball {
  Tensor<T> center;
  T radius;

  bool contains(const Tensor<T>& u, T slack = T(0)) const { return norm(u - center) <= radius * (T(1) + slack); }

  Tensor<T> project(const Tensor<T>& u) const {
    auto d = u - center;
    const T n = norm(d);
    if (n <= radius) return u;
    d *= radius / n;
    return center + d;
  }
};

}  // namespace lcmuse
