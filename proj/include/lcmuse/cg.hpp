#pragma once

#include <cmath>
#include <limits>

#include "lcmuse/tensor.hpp"

namespace lcmuse {

template <class T>
struct CgResult {
  Tensor<T> x;
  int iterations = 0;
  T relative_residual = T(0);
  bool converged = false;
};

/// Conjugate gradient for a symmetric positive (semi)definite operator.
///
/// Stops when ||b - Ax|| <= tol * ||b||. If that does not happen within
/// `max_iterations`, the iterate with the smallest residual is returned with
/// `converged = false`.
template <class T, class Op>
CgResult<T> conjugate_gradient(Op&& apply, const Tensor<T>& rhs, Tensor<T> x0, T tol, int max_iterations) {
  check_same_shape(rhs.shape(), x0.shape(), "conjugate_gradient");
  const T rhs_norm = norm(rhs);
  CgResult<T> out;
  if (rhs_norm == T(0)) {
    out.x = zeros_like(rhs);
    out.converged = true;
    return out;
  }
  Tensor<T> x = std::move(x0);
  Tensor<T> r = rhs - apply(x);
  Tensor<T> p = r;
  T rr = squared_norm(r);
  out.x = x;
  out.relative_residual = std::sqrt(rr) / rhs_norm;
  if (out.relative_residual <= tol) {
    out.converged = true;
    return out;
  }
  for (int it = 1; it <= max_iterations; ++it) {
    const Tensor<T> ap = apply(p);
    const T pap = dot(p, ap);
    if (!(pap > T(0))) break;  // operator not positive along p
    const T alpha = rr / pap;
    axpy(alpha, p, x);
    axpy(-alpha, ap, r);
    const T rr_new = squared_norm(r);
    const T rel = std::sqrt(rr_new) / rhs_norm;
    out.iterations = it;
    if (rel < out.relative_residual) {
      out.x = x;
      out.relative_residual = rel;
    }
    if (!std::isfinite(rel)) break;
    if (rel <= tol) {
      out.converged = true;
      return out;
    }
    const T beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
  }
  return out;
}

}  // namespace lcmuse
