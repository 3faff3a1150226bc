#pragma once

// Multiscale denoising score matching with a penalty on the local Lipschitz
// constant of T = I - H, estimated per training image by projected ascent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lcmuse/autodiff.hpp"
#include "lcmuse/errors.hpp"
#include "lcmuse/network.hpp"
#include "lcmuse/probes.hpp"
#include "lcmuse/rng.hpp"
#include "lcmuse/tensor.hpp"

namespace lcmuse {

enum class Precision { f32, f64 };

inline Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "float32") return Precision::f32;
  if (s == "f64" || s == "float64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

inline std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline std::string to_string(InitKind k) { return k == InitKind::uniform ? "uniform" : "identity"; }

struct TrainConfig {
  double sigma_max = 0.1;
  double m = 0.1;
  std::optional<double> delta;  // unset: worst SENSE deviation on the training set
  double lambda = 10.0;
  double lambda_growth = 2.0;
  int lambda_ramp_epochs = 5;
  double violation_threshold = 0.01;
  int ascent_steps = 15;
  std::optional<double> ascent_step_size;  // unset: delta / 10
  int restarts_per_epoch = 1;
  int batch_size = 8;
  int epochs = 20;
  double lr = 1e-4;
  std::optional<double> lr_final;  // unset: constant; else cosine from lr to lr_final over the epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  NetworkSpec network;
  double sigma_f = 0.1;
  InitKind init = InitKind::uniform;
  Precision precision = Precision::f32;
  int monitor_centers = 4;
  int monitor_pairs = 16;

  double l() const { return 1.0 - m; }

  void validate() const {
    network.validate();
    if (!(sigma_max > 0)) throw ConfigError("train.sigma_max must be positive");
    if (!(m > 0 && m < 1)) throw ConfigError("train.m must lie in (0, 1)");
    if (delta && !(*delta > 0)) throw ConfigError("train.delta must be positive");
    if (!(lambda >= 0)) throw ConfigError("train.lambda must be >= 0");
    if (!(lambda_growth >= 1)) throw ConfigError("train.lambda_growth must be >= 1");
    if (lambda_ramp_epochs < 1) throw ConfigError("train.lambda_ramp_epochs must be >= 1");
    if (ascent_steps < 0) throw ConfigError("train.ascent_steps must be >= 0");
    if (ascent_step_size && !(*ascent_step_size > 0)) throw ConfigError("train.ascent_step_size must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (lr_final && !(*lr_final > 0)) throw ConfigError("train.lr_final must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
    if (!(sigma_f > 0)) throw ConfigError("train.sigma_f must be positive");
  }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// mean_i ||H(x_i + s_i z_i) - s_i z_i||^2 as a graph in the model parameters.
template <class T>
ad::Var<T> dsm_loss(const BoundModel<T>& bm, const std::vector<Tensor<T>>& batch, const std::vector<T>& sigmas,
                    const std::vector<Tensor<T>>& noise) {
  if (batch.empty() || sigmas.size() != batch.size() || noise.size() != batch.size()) {
    throw ShapeError("dsm_loss: batch, sigmas and noise must have equal nonzero length");
  }
  ad::Var<T> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_same_shape(batch[i].shape(), noise[i].shape(), "dsm_loss");
    const Tensor<T> target = noise[i] * sigmas[i];
    auto h = score(bm, ad::variable(batch[i] + target), true);
    auto term = ad::sum_squares(ad::sub(h, ad::constant(target)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, T(1) / static_cast<T>(batch.size()));
}

template <class T>
T dsm_loss(const EnergyModel<T>& model, const std::vector<Tensor<T>>& batch, const std::vector<T>& sigmas,
           const std::vector<Tensor<T>>& noise) {
  return dsm_loss(bind(model, false), batch, sigmas, noise).value().item();
}

/// mean over probes of ReLU(ratio - l)^2.
template <class T>
T penalty_from_ratios(const std::vector<T>& ratios, T l) {
  if (ratios.empty()) return T(0);
  T s = T(0);
  for (T r : ratios) {
    const T e = std::max(r - l, T(0));
    s += e * e;
  }
  return s / static_cast<T>(ratios.size());
}

/// Penalty term of one probe with the gradient flowing into the parameters
/// through ||T(x1) - T(x2)|| at the fixed endpoints. Undefined when the probe
/// is inside the dead zone (its value and parameter gradient are zero).
template <class T>
ad::Var<T> probe_penalty(const BoundModel<T>& bm, const LipschitzProbe<T>& probe, T l) {
  const T dist = norm(probe.x1 - probe.x2);
  auto t1 = t_map(bm, ad::variable(probe.x1), true);
  auto t2 = t_map(bm, ad::variable(probe.x2), true);
  const T ratio = norm(t1.value() - t2.value()) / dist;
  if (!(ratio > l)) return {};
  auto r = ad::scale(ad::sqrt(ad::sum_squares(ad::sub(t1, t2))), T(1) / dist);
  auto e = ad::sub(r, ad::constant(Tensor<T>::scalar(l)));
  return ad::mul(e, e);
}

/// Penalty value for probes at the current parameters.
template <class T>
T penalty(const EnergyModel<T>& model, const std::vector<LipschitzProbe<T>>& probes, T l) {
  std::vector<T> ratios;
  for (const auto& p : probes) ratios.push_back(pair_ratio<T>([&](const Tensor<T>& u) { return t_map(model, u); }, p.x1, p.x2));
  return penalty_from_ratios(ratios, l);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <class T>
class Adam {
 public:
  Adam(const std::vector<Tensor<T>>& params, double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params) {
      m_.push_back(zeros_like(p));
      v_.push_back(zeros_like(p));
    }
  }

  void step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      const auto& g = grads[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = static_cast<T>(b1_ * m[i] + (1 - b1_) * g[i]);
        v[i] = static_cast<T>(b2_ * v[i] + (1 - b2_) * g[i] * g[i]);
        p[i] -= static_cast<T>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
      }
    }
  }

  long steps() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct HistoryRow {
  long step = 0;
  int epoch = 0;
  double dsm = 0;
  double penalty = 0;
  double max_ratio = 0;
  double m_estimate = std::numeric_limits<double>::quiet_NaN();  // set on the last step of an epoch
  double lambda = 0;
};

inline void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& rows) {
  os << "step,dsm,penalty,max_ratio,m_estimate,epoch,lambda\n";
  os.precision(9);
  for (const auto& r : rows) {
    os << r.step << ',' << r.dsm << ',' << r.penalty << ',' << r.max_ratio << ',';
    if (!std::isnan(r.m_estimate)) os << r.m_estimate;
    os << ',' << r.epoch << ',' << r.lambda << '\n';
  }
}

struct EpochSummary {
  int epoch = 0;
  double dsm = 0;
  double penalty = 0;
  double max_ratio = 0;
  double violation_rate = 0;
  double m_estimate = std::numeric_limits<double>::quiet_NaN();
  double lambda = 0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::vector<EpochSummary> epochs;
  double delta = 0;
  double final_lambda = 0;
};

template <class T>
struct TrainHooks {
  std::function<void(const EnergyModel<T>&, const EpochSummary&)> on_epoch;
  std::function<void(const EnergyModel<T>&, const std::string&)> on_failure;  // before NumericalError is thrown
};

/// Minimizes dsm_loss + lambda * penalty with Adam. `delta` must be resolved
/// (cfg.delta set). `held_out` feeds the per-epoch monotonicity estimate.
// Learning rate for a 1-based epoch: constant, or cosine from lr down to lr_final at the last epoch.
inline double epoch_lr(const TrainConfig& cfg, int epoch) {
  if (!cfg.lr_final) return cfg.lr;
  const double t = cfg.epochs > 1 ? static_cast<double>(epoch - 1) / (cfg.epochs - 1) : 1.0;
  return *cfg.lr_final + 0.5 * (cfg.lr - *cfg.lr_final) * (1 + std::cos(std::numbers::pi * t));
}

template <class T>
TrainResult train(EnergyModel<T>& model, const std::vector<Tensor<T>>& images, const std::vector<Tensor<T>>& held_out,
                  const TrainConfig& cfg, const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  if (images.empty()) throw ConfigError("train: training set is empty");
  if (!cfg.delta) throw ConfigError("train: delta is not resolved");
  for (const auto& x : images) check_image_shape(model, x, "train");

  const T delta = static_cast<T>(*cfg.delta);
  const T l = static_cast<T>(cfg.l());
  AscentOptions<T> ascent;
  ascent.steps = cfg.ascent_steps;
  ascent.step_size = static_cast<T>(cfg.ascent_step_size.value_or(*cfg.delta / 10.0));

  Rng rng(derive_seed(cfg.seed, 1));
  Adam<T> adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<std::optional<LipschitzProbe<T>>> warm(images.size());
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  result.delta = *cfg.delta;
  double lambda = cfg.lambda;
  long step = 0;
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), images.size());

  auto fail = [&](const std::string& what) {
    std::ostringstream msg;
    msg << "train: " << what << " at step " << step << " (lambda " << lambda << ", parameter norms";
    for (const auto& p : model.parameters()) msg << ' ' << norm(p);
    msg << ')';
    if (hooks.on_failure) hooks.on_failure(model, msg.str());
    throw NumericalError(msg.str());
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    adam.set_lr(epoch_lr(cfg, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (int r = 0; r < cfg.restarts_per_epoch && !images.empty(); ++r) {
      warm[std::uniform_int_distribution<std::size_t>(0, images.size() - 1)(rng)].reset();
    }
    EpochSummary es;
    es.epoch = epoch;
    es.lambda = lambda;
    std::size_t probes = 0, violations = 0, steps_in_epoch = 0;

    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const T inv_b = T(1) / static_cast<T>(end - start);
      ++step;
      std::vector<Tensor<T>> acc;
      for (const auto& p : model.parameters()) acc.push_back(zeros_like(p));
      double dsm = 0, pen = 0, max_ratio = 0;

      const auto map = residual_map(model);
      const auto bm = bind(model, true);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const auto& x = images[i];
        const T sigma = static_cast<T>(cfg.sigma_max * uniform01(rng));
        const auto z = normal_tensor<T>(x.shape(), rng);

        auto dl = dsm_loss(bm, {x}, {sigma}, {z});
        auto g = ad::grad(ad::scale(dl, inv_b), bm.params);
        for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += g[p];
        dsm += static_cast<double>(dl.value().item()) * static_cast<double>(inv_b);

        Rng probe_rng(derive_seed(cfg.seed, 1000003ull * static_cast<std::uint64_t>(step) + i));
        LipschitzProbe<T> probe;
        if (warm[i]) {
          probe = ascend_lipschitz(map, x, delta, warm[i]->x1, warm[i]->x2, ascent, probe_rng);
        } else {
          auto x1 = uniform_in_ball(x, delta, probe_rng);
          auto x2 = uniform_in_ball(x, delta, probe_rng);
          probe = ascend_lipschitz(map, x, delta, std::move(x1), std::move(x2), ascent, probe_rng);
        }
        warm[i] = probe;
        ++probes;
        max_ratio = std::max(max_ratio, static_cast<double>(probe.ratio));
        if (probe.ratio > l) {
          ++violations;
          const double e = static_cast<double>(probe.ratio - l);
          pen += e * e * static_cast<double>(inv_b);
          if (lambda > 0) {
            auto pt = probe_penalty(bm, probe, l);
            if (pt.defined()) {
              auto gp = ad::grad(ad::scale(pt, static_cast<T>(lambda) * inv_b), bm.params);
              for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += gp[p];
            }
          }
        }
      }
      if (!std::isfinite(dsm) || !std::isfinite(pen)) fail("non-finite loss");
      for (const auto& a : acc)
        if (!all_finite(a)) fail("non-finite gradient");
      adam.step(model.parameters(), acc);

      HistoryRow row;
      row.step = step;
      row.epoch = epoch;
      row.dsm = dsm;
      row.penalty = pen;
      row.max_ratio = max_ratio;
      row.lambda = lambda;
      result.history.push_back(row);
      es.dsm += dsm;
      es.penalty += pen;
      es.max_ratio = std::max(es.max_ratio, max_ratio);
      ++steps_in_epoch;
    }
    es.dsm /= static_cast<double>(steps_in_epoch);
    es.penalty /= static_cast<double>(steps_in_epoch);
    es.violation_rate = static_cast<double>(violations) / static_cast<double>(probes);

    if (!held_out.empty() && cfg.monitor_centers > 0 && cfg.monitor_pairs > 0) {
      const std::size_t nc = std::min<std::size_t>(held_out.size(), static_cast<std::size_t>(cfg.monitor_centers));
      const std::vector<Tensor<T>> centers(held_out.begin(), held_out.begin() + static_cast<std::ptrdiff_t>(nc));
      es.m_estimate = static_cast<double>(
          probe_monotonicity(model, centers, delta, static_cast<std::size_t>(cfg.monitor_pairs), derive_seed(cfg.seed, 2))
              .modulus);
      result.history.back().m_estimate = es.m_estimate;
    }
    result.epochs.push_back(es);
    if (hooks.on_epoch) hooks.on_epoch(model, es);

    if (epoch % cfg.lambda_ramp_epochs == 0 && es.violation_rate > cfg.violation_threshold) lambda *= cfg.lambda_growth;
  }
  result.final_lambda = lambda;
  return result;
}

}  // namespace lcmuse
