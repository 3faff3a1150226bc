#pragma once

// Sampling probes of local geometry inside Euclidean balls: the local
// Lipschitz constant of a map (by projected gradient ascent), the local
// monotonicity modulus of a score, and the strong-convexity slack of an energy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "lcmuse/autodiff.hpp"
#include "lcmuse/errors.hpp"
#include "lcmuse/network.hpp"
#include "lcmuse/rng.hpp"
#include "lcmuse/tensor.hpp"

namespace lcmuse {

/// Builds a map u -> T(u) as a graph. With `create_graph` the result must stay
/// differentiable in u.
template <class T>
using GraphMap = std::function<ad::Var<T>(const ad::Var<T>&, bool create_graph)>;

template <class T>
using PlainMap = std::function<Tensor<T>(const Tensor<T>&)>;

/// Residual map T = I - H of a model, as a graph builder (parameters frozen).
template <class T>
GraphMap<T> residual_map(const EnergyModel<T>& model) {
  auto bm = std::make_shared<BoundModel<T>>(bind(model, false));
  return [bm](const ad::Var<T>& u, bool cg) { return t_map(*bm, u, cg); };
}

template <class T>
struct LipschitzProbe {
  Tensor<T> x1, x2;
  T ratio = T(0);
  int accepted_steps = 0;
};

template <class T>
struct AscentOptions {
  int steps = 15;
  T step_size = T(0);  // 0: delta / 10
  T separation_floor = T(1e-6);  // relative to delta
};

namespace detail {

template <class T>
struct RatioEval {
  T ratio = T(0);
  Tensor<T> g1, g2;
};

// ||T(x1) - T(x2)|| / ||x1 - x2|| and, when requested, its gradient in x1 and x2.
template <class T>
RatioEval<T> lipschitz_ratio(const GraphMap<T>& map, const Tensor<T>& x1, const Tensor<T>& x2, bool with_grad) {
  auto v1 = ad::variable(x1), v2 = ad::variable(x2);
  auto t1 = map(v1, with_grad), t2 = map(v2, with_grad);
  RatioEval<T> out;
  if (!with_grad) {
    out.ratio = norm(t1.value() - t2.value()) / norm(x1 - x2);
    return out;
  }
  auto num = ad::sqrt(ad::sum_squares(ad::sub(t1, t2)));
  auto den = ad::sqrt(ad::sum_squares(ad::sub(v1, v2)));
  out.ratio = num.value().item() / den.value().item();
  if (num.value().item() == T(0)) {  // T(x1) = T(x2): no ascent direction
    out.g1 = zeros_like(x1);
    out.g2 = zeros_like(x2);
    return out;
  }
  auto g = ad::grad(ad::div(num, den), {v1, v2});
  out.g1 = g[0];
  out.g2 = g[1];
  return out;
}

// Moves x2 away from x1 along a random direction when the pair has collapsed.
template <class T>
void separate(const Ball<T>& ball, const Tensor<T>& x1, Tensor<T>& x2, T floor, Rng& rng) {
  while (norm(x1 - x2) < floor) {
    auto d = random_direction<T>(x1.shape(), rng);
    x2 = ball.project(x1 + d * (ball.radius / T(2)));
  }
}

}  // namespace detail

/// Projected gradient ascent on ||T(x1) - T(x2)|| / ||x1 - x2|| over the ball
/// B(center, delta), started from (x1, x2).
///
/// Steps move along the normalized joint gradient. A step that does not
/// increase the ratio is rejected and the step length halved; an accepted one
/// grows it by 1.5 up to delta. The returned pair is the best one seen.
template <class T>
LipschitzProbe<T> ascend_lipschitz(const GraphMap<T>& map, const Tensor<T>& center, T delta, Tensor<T> x1,
                                   Tensor<T> x2, const AscentOptions<T>& opt, Rng& rng) {
  if (!(delta > T(0))) throw ConfigError("local_lipschitz: delta must be positive");
  const Ball<T> ball{center, delta};
  const T floor = opt.separation_floor * delta;
  x1 = ball.project(x1);
  x2 = ball.project(x2);
  detail::separate(ball, x1, x2, floor, rng);
  T alpha = opt.step_size > T(0) ? opt.step_size : delta / T(10);

  LipschitzProbe<T> best{x1, x2, T(0), 0};
  auto cur = detail::lipschitz_ratio(map, x1, x2, true);
  best.ratio = cur.ratio;
  for (int s = 0; s < opt.steps; ++s) {
    const T gn = std::sqrt(squared_norm(cur.g1) + squared_norm(cur.g2));
    if (!(gn > T(0))) break;
    Tensor<T> c1 = x1, c2 = x2;
    axpy(alpha / gn, cur.g1, c1);
    axpy(alpha / gn, cur.g2, c2);
    c1 = ball.project(c1);
    c2 = ball.project(c2);
    detail::separate(ball, c1, c2, floor, rng);
    auto cand = detail::lipschitz_ratio(map, c1, c2, true);
    if (cand.ratio > cur.ratio) {
      x1 = std::move(c1);
      x2 = std::move(c2);
      cur = std::move(cand);
      best = {x1, x2, cur.ratio, best.accepted_steps + 1};
      alpha = std::min(alpha * T(1.5), delta);
    } else {
      alpha /= T(2);
    }
  }
  return best;
}

/// Local Lipschitz estimate from a pair drawn uniformly in the ball.
template <class T>
LipschitzProbe<T> local_lipschitz(const GraphMap<T>& map, const Tensor<T>& center, T delta, const AscentOptions<T>& opt,
                                  std::uint64_t seed) {
  if (!(delta > T(0))) throw ConfigError("local_lipschitz: delta must be positive");
  Rng rng(seed);
  auto x1 = uniform_in_ball(center, delta, rng);
  auto x2 = uniform_in_ball(center, delta, rng);
  return ascend_lipschitz(map, center, delta, std::move(x1), std::move(x2), opt, rng);
}

template <class T>
LipschitzProbe<T> local_lipschitz(const EnergyModel<T>& model, const Tensor<T>& center, T delta,
                                  const AscentOptions<T>& opt, std::uint64_t seed) {
  return local_lipschitz(residual_map(model), center, delta, opt, seed);
}

/// Ratio ||T(x1) - T(x2)|| / ||x1 - x2|| for a plain map.
template <class T>
T pair_ratio(const PlainMap<T>& map, const Tensor<T>& x1, const Tensor<T>& x2) {
  return norm(map(x1) - map(x2)) / norm(x1 - x2);
}

template <class T>
struct MonotonicityResult {
  T modulus = std::numeric_limits<T>::infinity();  // min over pairs
  double positive_fraction = 0.0;
  std::size_t pairs = 0;
};

namespace detail {

// Visits n_pairs uniform pairs per center; pairs closer than 1e-6 * delta are redrawn.
template <class T, class F>
void for_each_pair(const std::vector<Tensor<T>>& centers, T delta, std::size_t n_pairs, std::uint64_t seed, F&& f) {
  if (!(delta > T(0))) throw ConfigError("probe: delta must be positive");
  for (std::size_t c = 0; c < centers.size(); ++c) {
    Rng rng(derive_seed(seed, c));
    for (std::size_t p = 0; p < n_pairs; ++p) {
      Tensor<T> x, y;
      do {
        x = uniform_in_ball(centers[c], delta, rng);
        y = uniform_in_ball(centers[c], delta, rng);
      } while (norm(x - y) < T(1e-6) * delta);
      f(c, x, y);
    }
  }
}

}  // namespace detail

/// min over sampled pairs of <H(x) - H(y), x - y> / ||x - y||^2.
template <class T>
MonotonicityResult<T> probe_monotonicity(const PlainMap<T>& score_fn, const std::vector<Tensor<T>>& centers, T delta,
                                         std::size_t n_pairs, std::uint64_t seed) {
  MonotonicityResult<T> out;
  std::size_t positive = 0;
  detail::for_each_pair(centers, delta, n_pairs, seed, [&](std::size_t, const Tensor<T>& x, const Tensor<T>& y) {
    const auto d = x - y;
    const T q = dot_re(score_fn(x) - score_fn(y), d) / squared_norm(d);
    out.modulus = std::min(out.modulus, q);
    positive += q > T(0);
    ++out.pairs;
  });
  out.positive_fraction = out.pairs ? static_cast<double>(positive) / static_cast<double>(out.pairs) : 0.0;
  return out;
}

template <class T>
MonotonicityResult<T> probe_monotonicity(const EnergyModel<T>& model, const std::vector<Tensor<T>>& centers, T delta,
                                         std::size_t n_pairs, std::uint64_t seed) {
  return probe_monotonicity<T>([&](const Tensor<T>& u) { return score(model, u); }, centers, delta, n_pairs, seed);
}

/// min over sampled pairs of E(x) - E(y) - <H(y), x - y> - (m/2) ||x - y||^2.
/// Uses the same pairs as probe_monotonicity for equal arguments.
template <class T>
T probe_convexity(const PlainMap<T>& energy_fn, const PlainMap<T>& score_fn, const std::vector<Tensor<T>>& centers,
                  T delta, std::size_t n_pairs, std::uint64_t seed, T m) {
  T worst = std::numeric_limits<T>::infinity();
  detail::for_each_pair(centers, delta, n_pairs, seed, [&](std::size_t, const Tensor<T>& x, const Tensor<T>& y) {
    const auto d = x - y;
    const T slack = energy_fn(x).item() - energy_fn(y).item() - dot_re(score_fn(y), d) - m / T(2) * squared_norm(d);
    worst = std::min(worst, slack);
  });
  return worst;
}

template <class T>
T probe_convexity(const EnergyModel<T>& model, const std::vector<Tensor<T>>& centers, T delta, std::size_t n_pairs,
                  std::uint64_t seed, T m) {
  return probe_convexity<T>([&](const Tensor<T>& u) { return Tensor<T>::scalar(energy(model, u)); },
                            [&](const Tensor<T>& u) { return score(model, u); }, centers, delta, n_pairs, seed, m);
}

}  // namespace lcmuse
