#pragma once

// Image-quality metrics and empirical checks of the local convexity,
// convergence, uniqueness and robustness properties of a trained model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcmuse/errors.hpp"
#include "lcmuse/mri.hpp"
#include "lcmuse/network.hpp"
#include "lcmuse/probes.hpp"
#include "lcmuse/rng.hpp"
#include "lcmuse/solver.hpp"
#include "lcmuse/tensor.hpp"

namespace lcmuse {

// ---------------------------------------------------------------------------
// Metrics (on magnitude images)
// ---------------------------------------------------------------------------

inline constexpr double kPsnrCap = 99.0;

/// 20 log10(peak / rmse) with peak the largest reference magnitude; capped at 99 dB.
template <class T>
double psnr(const Tensor<T>& ref, const Tensor<T>& rec) {
  check_same_shape(ref.shape(), rec.shape(), "psnr");
  const auto a = magnitude(ref), b = magnitude(rec);
  double se = 0, peak = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
    peak = std::max(peak, static_cast<double>(a[i]));
  }
  const double rmse = std::sqrt(se / static_cast<double>(a.size()));
  if (rmse == 0 || peak == 0) return rmse == 0 ? kPsnrCap : -kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(peak / rmse));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size * size));
  const int c = size / 2;
  double s = 0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
      w[static_cast<std::size_t>(i * size + j)] = v;
      s += v;
    }
  for (auto& v : w) v /= s;
  return w;
}

}  // namespace detail

/// Mean local SSIM over fully contained 7x7 Gaussian windows (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, data range = peak reference magnitude (1 if zero).
template <class T>
double ssim(const Tensor<T>& ref, const Tensor<T>& rec) {
  check_same_shape(ref.shape(), rec.shape(), "ssim");
  const auto a = magnitude(ref), b = magnitude(rec);
  const std::size_t H = a.dim(0), W = a.dim(1);
  constexpr int k = 7;
  if (H < k || W < k) throw ShapeError("ssim: image smaller than the 7x7 window");
  const auto w = detail::gaussian_window(k, 1.5);
  double range = 0;
  for (std::size_t i = 0; i < a.size(); ++i) range = std::max(range, static_cast<double>(a[i]));
  if (range == 0) range = 1;
  const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);

  double total = 0;
  std::size_t windows = 0;
  for (std::size_t i = 0; i + k <= H; ++i)
    for (std::size_t j = 0; j + k <= W; ++j) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
          const double g = w[static_cast<std::size_t>(u * k + v)];
          const double x = a(i + u, j + v), y = b(i + u, j + v);
          mx += g * x;
          my += g * y;
          sxx += g * x * x;
          syy += g * y * y;
          sxy += g * x * y;
        }
      sxx -= mx * mx;
      syy -= my * my;
      sxy -= mx * my;
      total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++windows;
    }
  return total / static_cast<double>(windows);
}

// ---------------------------------------------------------------------------
// Robustness to measurement perturbations
// ---------------------------------------------------------------------------

struct RobustnessResult {
  double amplification = 0;       // max ||dx|| m eta^2 / ||n||
  double amplification_half = 0;  // the same against ||n|| / (2 m eta^2)
  std::size_t trials = 0;
  std::size_t skipped = 0;   // n = 0
  std::size_t failures = 0;  // solver did not converge or raised
  double max_noise_norm = 0;
  double noise_bound = 0;  // m delta eta^2
};

/// Random perturbations n on the acquired samples with ||n|| <= m delta eta^2.
/// Both reconstructions start at the minimizer for b, so only the response
/// to n is measured; `cfg` should carry a tight tolerance.
template <class T>
RobustnessResult probe_robustness(const EnergyModel<T>& model, const ForwardOperator<T>& op, const Tensor<T>& b,
                                  const Tensor<T>& x0, double m, double delta, std::size_t n_trials, std::uint64_t seed,
                                  const SolverConfig& cfg) {
  if (!(m > 0)) throw ConfigError("probe_robustness: measured modulus must be positive");
  if (!(delta > 0)) throw ConfigError("probe_robustness: delta must be positive");
  RobustnessResult out;
  const double eta2 = cfg.eta * cfg.eta;
  out.noise_bound = m * delta * eta2;
  const auto base = solve(model, op, b, x0, cfg);
  Rng rng(seed);
  for (std::size_t t = 0; t < n_trials; ++t) {
    Tensor<T> n(b.shape());
    const auto z = normal_tensor<T>(b.shape(), rng);
    const std::size_t hw = op.mask().size();
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = op.mask()[i % hw] != T(0) ? z[i] : T(0);
    const double scale = out.noise_bound * uniform01(rng);
    const double nn = static_cast<double>(norm(n));
    if (nn == 0 || scale == 0) {
      ++out.skipped;
      continue;
    }
    n *= static_cast<T>(scale / nn);
    const double n_norm = static_cast<double>(norm(n));
    if (n_norm == 0) {
      ++out.skipped;
      continue;
    }
    ++out.trials;
    out.max_noise_norm = std::max(out.max_noise_norm, n_norm);
    try {
      const auto pert = solve(model, op, b + n, base.x, cfg);
      if (!pert.converged) ++out.failures;
      const double a = static_cast<double>(norm(pert.x - base.x)) * m * eta2 / n_norm;
      out.amplification = std::max(out.amplification, a);
      out.amplification_half = std::max(out.amplification_half, 2 * a);
    } catch (const NumericalError&) {
      ++out.failures;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Uniqueness within the ball
// ---------------------------------------------------------------------------

struct UniquenessResult {
  double max_relative_distance = 0;
  int starts = 0;
  bool all_converged = true;
};

/// Restarts the solver from `starts` uniform points in B(x_star, delta) and
/// measures the largest relative distance of the results to x_star.
template <class T>
UniquenessResult probe_uniqueness(const EnergyModel<T>& model, const ForwardOperator<T>& op, const Tensor<T>& b,
                                  const Tensor<T>& x_star, double delta, int starts, std::uint64_t seed,
                                  const SolverConfig& cfg) {
  UniquenessResult out;
  out.starts = starts;
  Rng rng(seed);
  const double ref = static_cast<double>(norm(x_star));
  for (int s = 0; s < starts; ++s) {
    const auto x0 = uniform_in_ball(x_star, static_cast<T>(delta), rng);
    const auto st = solve(model, op, b, x0, cfg);
    out.all_converged = out.all_converged && st.converged;
    out.max_relative_distance =
        std::max(out.max_relative_distance, static_cast<double>(norm(st.x - x_star)) / (ref > 0 ? ref : 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

enum class Comparison { at_most, at_least, above };

inline std::string to_string(Comparison c) {
  return c == Comparison::at_most ? "<=" : c == Comparison::at_least ? ">=" : ">";
}

inline Comparison parse_comparison(const std::string& s) {
  if (s == "<=") return Comparison::at_most;
  if (s == ">=") return Comparison::at_least;
  if (s == ">") return Comparison::above;
  throw ConfigError("report: unknown comparison '" + s + "'");
}

// NaN never passes.
inline bool compare(double measured, Comparison c, double threshold) {
  switch (c) {
    case Comparison::at_most: return measured <= threshold;
    case Comparison::at_least: return measured >= threshold;
    case Comparison::above: return measured > threshold;
  }
  return false;
}

struct CheckRecord {
  std::string id;
  std::size_t samples = 0;
  double measured = 0;
  double threshold = 0;
  Comparison comparison = Comparison::at_most;
  bool gating = true;  // counts toward the overall verdict

  bool pass() const { return compare(measured, comparison, threshold); }
};

struct VerificationReport {
  std::vector<CheckRecord> records;
  std::uint64_t seed = 0;
  double delta = 0;
  double m = 0;
  std::string model_hash;

  void add(std::string id, std::size_t samples, double measured, Comparison c, double threshold, bool gating = true) {
    records.push_back({std::move(id), samples, measured, threshold, c, gating});
  }

  bool passed() const {
    return std::all_of(records.begin(), records.end(), [](const CheckRecord& r) { return !r.gating || r.pass(); });
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["environment"] = {{"seed", seed}, {"delta", delta}, {"m", m}, {"model_hash", model_hash}};
    j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
      j["records"].push_back({{"id", r.id},
                              {"samples", r.samples},
                              {"measured", r.measured},
                              {"threshold", r.threshold},
                              {"comparison", to_string(r.comparison)},
                              {"pass", r.pass()},
                              {"gating", r.gating}});
    }
    j["passed"] = passed();
    return j;
  }
};

/// Recomputes every pass flag (and the overall verdict) from the measured
/// values; returns the ids whose stored flag disagrees.
inline std::vector<std::string> integrity_errors(const nlohmann::json& j) {
  std::vector<std::string> bad;
  bool overall = true;
  for (const auto& r : j.at("records")) {
    // JSON has no NaN; a null measurement reads back as one
    const auto& mv = r.at("measured");
    const double measured = mv.is_null() ? std::numeric_limits<double>::quiet_NaN() : mv.get<double>();
    const bool pass = compare(measured, parse_comparison(r.at("comparison").get<std::string>()),
                              r.at("threshold").get<double>());
    if (pass != r.at("pass").get<bool>()) bad.push_back(r.at("id").get<std::string>());
    if (r.at("gating").get<bool>() && !pass) overall = false;
  }
  if (j.contains("passed") && j.at("passed").get<bool>() != overall) bad.push_back("passed");
  return bad;
}

/// FNV-1a over the raw parameter bytes, as 16 hex digits.
template <class T>
std::string model_hash(const EnergyModel<T>& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : model.parameters()) feed(p.data(), p.size() * sizeof(T));
  const T sf = model.sigma_f();
  feed(&sf, sizeof(T));
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 15];
  return s;
}

}  // namespace lcmuse
