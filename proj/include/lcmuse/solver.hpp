#pragma once

// MAP reconstruction by majorization-minimization. Each step solves
//   (A^H A / zeta^2 + L I) x = A^H b / zeta^2 + L x_n - grad E(x_n),  zeta = eta / sigma_f,
// by conjugate gradient. Dividing by sigma_f^2 shows this is the MM step for
//   f(x) = ||A x - b||^2 / (2 eta^2) + E(x) / sigma_f^2
// with curvature L / sigma_f^2 on the energy term, so f is the tracked objective.

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lcmuse/cg.hpp"
#include "lcmuse/errors.hpp"
#include "lcmuse/mri.hpp"
#include "lcmuse/network.hpp"
#include "lcmuse/tensor.hpp"

namespace lcmuse {

struct SolverConfig {
  double eta = 0.01;
  double m = 0.1;
  double safety = 1.1;
  std::optional<double> lipschitz;  // unset: (2 - m) * safety
  int max_iterations = 200;
  double tolerance = 1e-6;  // relative iterate change
  double cg_tolerance = 1e-10;
  int cg_max_iterations = 200;

  double smoothness() const { return lipschitz.value_or(score_lipschitz_bound(m) * safety); }
  double zeta(double sigma_f) const { return eta / sigma_f; }

  void validate() const {
    if (!(eta > 0)) throw ConfigError("solver.eta must be positive");
    if (!(m > 0 && m <= 1)) throw ConfigError("solver.m must lie in (0, 1]");
    if (!(safety > 0)) throw ConfigError("solver.safety must be positive");
    if (lipschitz && !(*lipschitz > 0)) throw ConfigError("solver.lipschitz must be positive");
    if (max_iterations < 0) throw ConfigError("solver.max_iterations must be >= 0");
    if (!(tolerance >= 0)) throw ConfigError("solver.tolerance must be >= 0");
    if (!(cg_tolerance > 0)) throw ConfigError("solver.cg_tolerance must be positive");
    if (cg_max_iterations < 1) throw ConfigError("solver.cg_max_iterations must be >= 1");
  }
};

/// f(x) = ||A x - b||^2 / (2 eta^2) + E(x) / sigma_f^2.
template <class T>
T objective(const EnergyModel<T>& model, const ForwardOperator<T>& op, const Tensor<T>& b, const Tensor<T>& x, T eta) {
  if (!(eta > T(0))) throw ConfigError("objective: eta must be positive");
  const T s2 = model.sigma_f() * model.sigma_f();
  return squared_norm(op.apply(x) - b) / (T(2) * eta * eta) + energy(model, x) / s2;
}

/// grad f(x) = A^H (A x - b) / eta^2 + H(x) / sigma_f^2.
template <class T>
Tensor<T> objective_gradient(const EnergyModel<T>& model, const ForwardOperator<T>& op, const Tensor<T>& b,
                             const Tensor<T>& x, T eta) {
  if (!(eta > T(0))) throw ConfigError("objective: eta must be positive");
  auto g = op.adjoint(op.apply(x) - b) * (T(1) / (eta * eta));
  axpy(T(1) / (model.sigma_f() * model.sigma_f()), score(model, x), g);
  return g;
}

template <class T>
struct StepResult {
  Tensor<T> x;
  int cg_iterations = 0;
  bool cg_converged = true;
};

/// One MM update from x_n; `score_n` is grad E(x_n).
template <class T>
StepResult<T> mm_step(const ForwardOperator<T>& op, const Tensor<T>& b, const Tensor<T>& x_n, const Tensor<T>& score_n,
                      T sigma_f, const SolverConfig& cfg) {
  const T zeta = static_cast<T>(cfg.zeta(static_cast<double>(sigma_f)));
  const T inv_z2 = T(1) / (zeta * zeta);
  const T L = static_cast<T>(cfg.smoothness());
  auto rhs = op.adjoint(b) * inv_z2;
  axpy(L, x_n, rhs);
  rhs -= score_n;
  auto res = conjugate_gradient<T>(
      [&](const Tensor<T>& v) {
        auto r = op.normal(v) * inv_z2;
        axpy(L, v, r);
        return r;
      },
      rhs, x_n, static_cast<T>(cfg.cg_tolerance), cfg.cg_max_iterations);
  return {std::move(res.x), res.iterations, res.converged};
}

template <class T>
StepResult<T> mm_step(const EnergyModel<T>& model, const ForwardOperator<T>& op, const Tensor<T>& b, const Tensor<T>& x_n,
                      const SolverConfig& cfg) {
  return mm_step(op, b, x_n, score(model, x_n), model.sigma_f(), cfg);
}

template <class T>
struct MMState {
  Tensor<T> x;
  std::vector<double> objective;  // f(x_0), f(x_1), ...
  std::vector<double> change;     // ||x_{n+1} - x_n|| / ||x_n||
  double initial_gradient_norm = 0;
  double final_gradient_norm = 0;
  int iterations = 0;
  int cg_failures = 0;
  bool converged = false;

  double stationarity() const {
    return initial_gradient_norm > 0 ? final_gradient_norm / initial_gradient_norm : 0.0;
  }
  // largest f(x_{n+1}) - f(x_n)
  double max_increase() const {
    double w = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < objective.size(); ++i) w = std::max(w, objective[i] - objective[i - 1]);
    return w;
  }
};

/// Iterates mm_step from x0 until the relative iterate change drops below the
/// tolerance or the iteration budget is spent.
template <class T>
MMState<T> solve(const EnergyModel<T>& model, const ForwardOperator<T>& op, const Tensor<T>& b, const Tensor<T>& x0,
                 const SolverConfig& cfg) {
  cfg.validate();
  check_image_shape(model, x0, "solve");
  const T eta = static_cast<T>(cfg.eta);
  MMState<T> st;
  st.x = x0;
  auto fail = [&](const char* what) {
    std::ostringstream msg;
    msg << "solve: " << what << " at iteration " << st.iterations << " (last objective "
        << (st.objective.empty() ? std::nan("") : st.objective.back()) << ", iterate norm " << norm(st.x) << ')';
    throw NumericalError(msg.str());
  };
  st.objective.push_back(static_cast<double>(objective(model, op, b, st.x, eta)));
  if (!std::isfinite(st.objective.back())) fail("non-finite objective");
  st.initial_gradient_norm = static_cast<double>(norm(objective_gradient(model, op, b, st.x, eta)));
  for (int it = 0; it < cfg.max_iterations; ++it) {
    auto step = mm_step(model, op, b, st.x, cfg);
    st.cg_failures += step.cg_converged ? 0 : 1;
    const T xn = norm(st.x);
    const double change = static_cast<double>(norm(step.x - st.x) / (xn > T(0) ? xn : T(1)));
    st.x = std::move(step.x);
    st.iterations = it + 1;
    st.change.push_back(change);
    st.objective.push_back(static_cast<double>(objective(model, op, b, st.x, eta)));
    if (!std::isfinite(st.objective.back()) || !all_finite(st.x)) fail("non-finite objective");
    if (change < cfg.tolerance) {
      st.converged = true;
      break;
    }
  }
  st.final_gradient_norm = static_cast<double>(norm(objective_gradient(model, op, b, st.x, eta)));
  return st;
}

}  // namespace lcmuse
