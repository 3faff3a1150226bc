#pragma once

// Cartesian multi-coil MRI forward model A = S F C, its adjoint, SENSE
// initialization and synthetic data (coil maps, phantoms, masks).
//
// k-space is stored in DFT-native order: the DC sample sits at index (0, 0)
// and the "center" of k-space is the set of indices closest to 0 modulo H, W.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "lcmuse/cg.hpp"
#include "lcmuse/errors.hpp"
#include "lcmuse/fft.hpp"
#include "lcmuse/rng.hpp"
#include "lcmuse/tensor.hpp"

namespace lcmuse {

enum class MaskKind { one_d, two_d };

inline MaskKind parse_mask_kind(const std::string& s) {
  if (s == "1d" || s == "1D") return MaskKind::one_d;
  if (s == "2d" || s == "2D") return MaskKind::two_d;
  throw ConfigError("mask kind must be 1d or 2d, got '" + s + "'");
}

inline std::string to_string(MaskKind k) { return k == MaskKind::one_d ? "1d" : "2d"; }

namespace detail {

// Indices closest to 0 modulo n, `count` of them: 0, 1, n-1, 2, n-2, ...
inline std::vector<std::size_t> low_frequency_indices(std::size_t n, std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t d = 0; out.size() < count && d <= n / 2; ++d) {
    out.push_back(d % n);
    if (out.size() < count && d != 0 && n - d != d) out.push_back(n - d);
  }
  return out;
}

}  // namespace detail

/// Binary Cartesian sampling mask [H, W].
///
/// 1d samples whole phase-encode columns, 2d samples individual points. The
/// low-frequency region (a fraction `center_fraction` of each sampled axis) is
/// always included; the rest of the budget round(total / R) is drawn at random.
template <class T = double>
Tensor<T> make_mask(MaskKind kind, double acceleration, double center_fraction, std::uint64_t seed, std::size_t height,
                    std::size_t width) {
  if (!(acceleration >= 1.0)) throw ConfigError("make_mask: acceleration must be >= 1");
  if (center_fraction < 0.0 || center_fraction > 1.0) throw ConfigError("make_mask: center fraction outside [0, 1]");
  Tensor<T> mask(Shape{height, width});
  if (acceleration == 1.0) {
    mask.fill(T(1));
    return mask;
  }
  Rng rng(seed);
  auto pick = [&](std::vector<std::size_t> candidates, std::size_t n) {
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(n);
    return candidates;
  };
  auto center_count = [&](std::size_t n) {
    return center_fraction > 0.0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(center_fraction * n)))
                                 : std::size_t{0};
  };

  if (kind == MaskKind::one_d) {
    const auto budget = static_cast<std::size_t>(std::lround(static_cast<double>(width) / acceleration));
    const auto center = detail::low_frequency_indices(width, center_count(width));
    if (center.size() > budget) {
      throw ConfigError("make_mask: " + std::to_string(center.size()) + " center columns exceed the budget of " +
                        std::to_string(budget) + " at R=" + std::to_string(acceleration));
    }
    std::vector<bool> taken(width, false);
    for (auto c : center) taken[c] = true;
    std::vector<std::size_t> rest;
    for (std::size_t j = 0; j < width; ++j)
      if (!taken[j]) rest.push_back(j);
    for (auto j : pick(rest, budget - center.size())) taken[j] = true;
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) mask(i, j) = taken[j] ? T(1) : T(0);
    return mask;
  }

  const std::size_t total = height * width;
  const auto budget = static_cast<std::size_t>(std::lround(static_cast<double>(total) / acceleration));
  const auto rows = detail::low_frequency_indices(height, center_count(height));
  const auto cols = detail::low_frequency_indices(width, center_count(width));
  if (rows.size() * cols.size() > budget) {
    throw ConfigError("make_mask: center block of " + std::to_string(rows.size() * cols.size()) +
                      " points exceeds the budget of " + std::to_string(budget));
  }
  std::vector<bool> taken(total, false);
  for (auto i : rows)
    for (auto j : cols) taken[i * width + j] = true;
  std::vector<std::size_t> rest;
  for (std::size_t p = 0; p < total; ++p)
    if (!taken[p]) rest.push_back(p);
  const std::size_t n_center = rows.size() * cols.size();
  for (auto p : pick(rest, budget - n_center)) taken[p] = true;
  for (std::size_t p = 0; p < total; ++p) mask[p] = taken[p] ? T(1) : T(0);
  return mask;
}

/// Total samples divided by acquired samples (columns for 1d masks reduce to the same ratio).
template <class T>
double realized_acceleration(const Tensor<T>& mask) {
  const double acquired = static_cast<double>(sum(mask));
  return acquired > 0 ? static_cast<double>(mask.size()) / acquired : std::numeric_limits<double>::infinity();
}

/// Smooth complex coil sensitivities [N_c, 2, H, W] normalized so that
/// sum_c |C_c(p)|^2 = 1 at every pixel. Each coil is a Gaussian bump placed on
/// a ring around the field of view with a gentle linear phase ramp.
template <class T = double>
Tensor<T> make_coil_maps(std::size_t coils, std::size_t height, std::size_t width) {
  if (coils == 0) throw ConfigError("make_coil_maps: need at least one coil");
  Tensor<T> out(Shape{coils, 2, height, width});
  const std::size_t hw = height * width;
  std::vector<double> ssq(hw, 0.0);
  for (std::size_t c = 0; c < coils; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(coils) + std::numbers::pi / 4;
    const double cx = 0.9 * std::cos(angle), cy = 0.9 * std::sin(angle);
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        const double y = (i + 0.5) / height * 2.0 - 1.0;
        const double x = (j + 0.5) / width * 2.0 - 1.0;
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double mag = std::exp(-d2 / (2.0 * 0.7 * 0.7));
        const double phase = 0.4 * std::numbers::pi * (std::cos(angle) * x + std::sin(angle) * y) + 0.25 * c;
        out(c, 0, i, j) = static_cast<T>(mag * std::cos(phase));
        out(c, 1, i, j) = static_cast<T>(mag * std::sin(phase));
        ssq[i * width + j] += mag * mag;
      }
    }
  }
  for (std::size_t c = 0; c < coils; ++c)
    for (std::size_t part = 0; part < 2; ++part)
      for (std::size_t p = 0; p < hw; ++p) out[(c * 2 + part) * hw + p] /= static_cast<T>(std::sqrt(ssq[p]));
  return out;
}

/// Random piecewise-smooth complex phantom [2, H, W]: 3-8 overlapping ellipses
/// with intensities in [0.2, 1] (later ellipses overwrite earlier ones; the
/// first one is a large body outline), a smooth polynomial phase field, and
/// max magnitude normalized to 1. Edges are area-averaged over 4x4 subsamples.
template <class T = double>
Tensor<T> make_phantom(std::uint64_t seed, std::size_t height, std::size_t width) {
  if (height < 16 || width < 16) throw ConfigError("make_phantom: H and W must be >= 16");
  Rng rng(seed);
  auto U = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t, value;
  };
  const int count = 3 + static_cast<int>(std::floor(uniform01(rng) * 6.0));
  std::vector<Ellipse> ellipses;
  for (int e = 0; e < count; ++e) {
    const double t = U(0.0, std::numbers::pi);
    if (e == 0) {
      ellipses.push_back({U(-0.08, 0.08), U(-0.08, 0.08), U(0.65, 0.85), U(0.55, 0.8), std::cos(t), std::sin(t), U(0.2, 1.0)});
    } else {
      ellipses.push_back({U(-0.45, 0.45), U(-0.45, 0.45), U(0.08, 0.4), U(0.08, 0.4), std::cos(t), std::sin(t), U(0.2, 1.0)});
    }
  }
  const double p0 = U(-std::numbers::pi, std::numbers::pi);
  const double p1 = U(-0.8, 0.8), p2 = U(-0.8, 0.8), p3 = U(-0.6, 0.6);

  constexpr int sub = 4;
  Tensor<T> out(Shape{2, height, width});
  const std::size_t hw = height * width;
  double peak = 0.0;
  std::vector<double> mag(hw, 0.0);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      double acc = 0.0;
      for (int si = 0; si < sub; ++si) {
        for (int sj = 0; sj < sub; ++sj) {
          const double y = (i + (si + 0.5) / sub) / height * 2.0 - 1.0;
          const double x = (j + (sj + 0.5) / sub) / width * 2.0 - 1.0;
          double v = 0.0;
          for (const auto& el : ellipses) {
            const double dx = x - el.cx, dy = y - el.cy;
            const double u = (dx * el.cos_t + dy * el.sin_t) / el.a;
            const double w = (-dx * el.sin_t + dy * el.cos_t) / el.b;
            if (u * u + w * w <= 1.0) v = el.value;
          }
          acc += v;
        }
      }
      mag[i * width + j] = acc / (sub * sub);
      peak = std::max(peak, mag[i * width + j]);
    }
  }
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const double y = (i + 0.5) / height * 2.0 - 1.0;
      const double x = (j + 0.5) / width * 2.0 - 1.0;
      const double phase = p0 + p1 * x + p2 * y + p3 * (x * x + y * y);
      const double m = mag[i * width + j] / peak;
      out[i * width + j] = static_cast<T>(m * std::cos(phase));
      out[hw + i * width + j] = static_cast<T>(m * std::sin(phase));
    }
  }
  return out;
}

/// Pixelwise magnitude of a [2, H, W] complex image as [H, W].
template <class T>
Tensor<T> magnitude(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(0) != 2) throw ShapeError("magnitude: expected [2,H,W], got " + shape_string(x.shape()));
  const std::size_t hw = x.dim(1) * x.dim(2);
  Tensor<T> out(Shape{x.dim(1), x.dim(2)});
  for (std::size_t p = 0; p < hw; ++p) out[p] = std::hypot(x[p], x[hw + p]);
  return out;
}

/// A = S F C with binary mask S, unitary DFT F and coil maps C.
template <class T>
class ForwardOperator {
 public:
  ForwardOperator(Tensor<T> mask, Tensor<T> coils)
      : mask_(std::move(mask)), coils_(std::move(coils)), dft_(mask_.rank() == 2 ? mask_.dim(0) : 1,
                                                               mask_.rank() == 2 ? mask_.dim(1) : 1) {
    if (mask_.rank() != 2) throw ShapeError("forward operator: mask must be [H,W], got " + shape_string(mask_.shape()));
    if (coils_.rank() != 4 || coils_.dim(1) != 2) {
      throw ShapeError("forward operator: coil maps must be [N_c,2,H,W], got " + shape_string(coils_.shape()));
    }
    if (coils_.dim(2) != mask_.dim(0)) throw ShapeError("forward operator: axis 2 (height) of coil maps differs from mask");
    if (coils_.dim(3) != mask_.dim(1)) throw ShapeError("forward operator: axis 3 (width) of coil maps differs from mask");
  }

  std::size_t coils() const { return coils_.dim(0); }
  std::size_t height() const { return mask_.dim(0); }
  std::size_t width() const { return mask_.dim(1); }
  Shape image_shape() const { return {2, height(), width()}; }
  Shape measurement_shape() const { return {coils(), 2, height(), width()}; }
  const Tensor<T>& mask() const { return mask_; }
  const Tensor<T>& coil_maps() const { return coils_; }

  /// Per coil: mask * fft2(C_c * x).
  Tensor<T> apply(const Tensor<T>& x) const {
    check_same_shape(x.shape(), image_shape(), "apply");
    const std::size_t hw = height() * width();
    Tensor<T> out(measurement_shape());
    Tensor<T> cx(image_shape());
    for (std::size_t c = 0; c < coils(); ++c) {
      const T* cr = coils_.data() + c * 2 * hw;
      const T* ci = cr + hw;
      for (std::size_t p = 0; p < hw; ++p) {
        cx[p] = cr[p] * x[p] - ci[p] * x[hw + p];
        cx[hw + p] = cr[p] * x[hw + p] + ci[p] * x[p];
      }
      const auto k = dft_.forward(cx);
      T* dst = out.data() + c * 2 * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        dst[p] = mask_[p] * k[p];
        dst[hw + p] = mask_[p] * k[hw + p];
      }
    }
    return out;
  }

  /// sum_c conj(C_c) * ifft2(mask * y_c).
  Tensor<T> adjoint(const Tensor<T>& y) const {
    check_same_shape(y.shape(), measurement_shape(), "adjoint");
    const std::size_t hw = height() * width();
    Tensor<T> out(image_shape());
    Tensor<T> k(image_shape());
    for (std::size_t c = 0; c < coils(); ++c) {
      const T* src = y.data() + c * 2 * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        k[p] = mask_[p] * src[p];
        k[hw + p] = mask_[p] * src[hw + p];
      }
      const auto img = dft_.inverse(k);
      const T* cr = coils_.data() + c * 2 * hw;
      const T* ci = cr + hw;
      for (std::size_t p = 0; p < hw; ++p) {
        out[p] += cr[p] * img[p] + ci[p] * img[hw + p];
        out[hw + p] += cr[p] * img[hw + p] - ci[p] * img[p];
      }
    }
    return out;
  }

  Tensor<T> normal(const Tensor<T>& x) const { return adjoint(apply(x)); }

 private:
  Tensor<T> mask_;
  Tensor<T> coils_;
  Dft2<T> dft_;
};

/// b = A x + n with n ~ N(0, eta^2) per real component on acquired samples only.
template <class T>
Tensor<T> simulate_measurement(const ForwardOperator<T>& op, const Tensor<T>& x, T eta, Rng& rng) {
  auto b = op.apply(x);
  if (eta == T(0)) return b;
  std::normal_distribution<double> dist(0.0, 1.0);
  const std::size_t hw = op.height() * op.width();
  for (std::size_t c = 0; c < op.coils(); ++c)
    for (std::size_t part = 0; part < 2; ++part)
      for (std::size_t p = 0; p < hw; ++p) {
        const double n = dist(rng);
        if (op.mask()[p] != T(0)) b[(c * 2 + part) * hw + p] += static_cast<T>(eta * n);
      }
  return b;
}

template <class T>
struct SenseResult {
  Tensor<T> x;
  int iterations = 0;
  T relative_residual = T(0);
  bool converged = false;  // false: best iterate returned, treat as a warning
};

/// SENSE reconstruction: solves (A^H A + lambda I) x = A^H b by conjugate gradient.
template <class T>
SenseResult<T> sense_init(const ForwardOperator<T>& op, const Tensor<T>& b, T lambda, T tol = T(1e-8),
                          int max_iterations = 500) {
  if (lambda < T(0)) throw ConfigError("sense_init: lambda must be >= 0");
  const auto rhs = op.adjoint(b);
  auto res = conjugate_gradient<T>(
      [&](const Tensor<T>& v) {
        auto r = op.normal(v);
        axpy(lambda, v, r);
        return r;
      },
      rhs, zeros_like(rhs), tol, max_iterations);
  return {std::move(res.x), res.iterations, res.relative_residual, res.converged};
}

/// Worst-case distance between SENSE reconstructions and their references.
template <class T>
T delta_from_sense(const std::vector<Tensor<T>>& references, const std::vector<ForwardOperator<T>>& operators,
                   const std::vector<Tensor<T>>& measurements, T lambda, T tol = T(1e-8)) {
  if (references.empty()) throw ConfigError("delta_from_sense: training set is empty");
  if (operators.size() != references.size() || measurements.size() != references.size()) {
    throw ConfigError("delta_from_sense: references, operators and measurements must have equal length");
  }
  T worst = T(0);
  for (std::size_t i = 0; i < references.size(); ++i) {
    const auto x0 = sense_init(operators[i], measurements[i], lambda, tol).x;
    worst = std::max(worst, norm(x0 - references[i]));
  }
  return worst;
}

}  // namespace lcmuse
