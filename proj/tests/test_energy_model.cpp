#include <gtest/gtest.h>

#include "lcmuse/network.hpp"
#include "lcmuse/rng.hpp"
#include "oracles.hpp"

using namespace lcmuse;

namespace {

NetworkSpec small_spec(int layers = 2, int channels = 4) {
  NetworkSpec s;
  s.layers = layers;
  s.channels = channels;
  return s;
}

EnergyModel<double> zero_model(double sigma_f, int layers = 2) { return EnergyModel<double>(small_spec(layers), sigma_f); }

EnergyModel<double> random_model(std::uint64_t seed, int layers = 2, int channels = 4,
                                 Activation act = Activation::relu) {
  auto spec = small_spec(layers, channels);
  spec.activation = act;
  auto m = make_model<double>(spec, 0.1, InitKind::uniform, seed);
  Rng rng(seed + 100);
  for (int l = 0; l < layers; ++l) *m.bias(l) = normal_tensor<double>(m.bias(l)->shape(), rng, 0.1);
  return m;
}

std::vector<Tensor<double>> kernels_of(const EnergyModel<double>& m) {
  std::vector<Tensor<double>> out;
  for (int l = 0; l < m.spec().layers; ++l) out.push_back(m.kernel(l));
  return out;
}

std::vector<Tensor<double>> biases_of(const EnergyModel<double>& m) {
  std::vector<Tensor<double>> out;
  for (int l = 0; l < m.spec().layers; ++l) out.push_back(*m.bias(l));
  return out;
}

}  // namespace

TEST(Psi, ZeroNetworkGivesZero) {
  Rng rng(1);
  const auto x = normal_tensor<double>({2, 6, 6}, rng);
  const auto y = psi(zero_model(0.1, 5), x);
  EXPECT_EQ(max_abs(y), 0.0);
}

TEST(Psi, SingleLayerIdentityKernel) {
  auto m = make_model<double>(small_spec(1), 0.1, InitKind::near_identity, 3);
  Rng rng(2);
  const auto x = normal_tensor<double>({2, 7, 5}, rng);
  EXPECT_EQ(psi(m, x), x);
}

TEST(Psi, MatchesDirectConvolutionOracle) {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    const auto m = random_model(seed, 3, 5);
    Rng rng(seed);
    const auto x = normal_tensor<double>({2, 8, 7}, rng);
    const auto expected = oracle::direct_psi(kernels_of(m), biases_of(m), x);
    EXPECT_LT(max_abs(psi(m, x) - expected), 1e-10);
  }
}

TEST(Psi, SoftplusMatchesDirectOracle) {
  const auto m = random_model(7, 3, 5, Activation::softplus);
  Rng rng(8);
  const auto x = normal_tensor<double>({2, 6, 7}, rng);
  EXPECT_LT(max_abs(psi(m, x) - oracle::direct_psi(kernels_of(m), biases_of(m), x, true)), 1e-10);
}

TEST(Psi, NearIdentityInitWithSoftplus) {
  auto spec = small_spec(5, 4);
  spec.activation = Activation::softplus;
  auto m = make_model<double>(spec, 0.1, InitKind::near_identity, 9);
  // with exactly 2 * io channels only the output layer carries noise
  auto& out = m.kernel(4);
  out.fill(0.0);
  for (std::size_t o = 0; o < 2; ++o) {
    out(o, o, 1, 1) = 1.0;
    out(o, o + 2, 1, 1) = -1.0;
  }
  Rng rng(10);
  const auto x = normal_tensor<double>({2, 6, 6}, rng);
  EXPECT_LT(max_abs(psi(m, x) - x), 1e-12);
}

TEST(Psi, NearIdentityInitReproducesInputWhenNoiseIsRemoved) {
  auto m = make_model<double>(small_spec(5, 6), 0.1, InitKind::near_identity, 9);
  // zero every weight outside the carried channels 0..3
  for (int l = 0; l < 5; ++l) {
    if (l > 0 && l < 4) continue;  // hidden wiring has no noise on carried rows
    auto& K = m.kernel(l);
    for (std::size_t o = 0; o < K.dim(0); ++o)
      for (std::size_t i = 0; i < K.dim(1); ++i)
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b)
            if (o >= 4 || i >= 4 || a != 1 || b != 1) K(o, i, a, b) = 0.0;
  }
  // the output layer adds its wiring on top of noise; keep only the wiring
  auto& out = m.kernel(4);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 4; ++i) out(o, i, 1, 1) = i == o ? 1.0 : (i == o + 2 ? -1.0 : 0.0);
  Rng rng(10);
  const auto x = normal_tensor<double>({2, 6, 6}, rng);
  EXPECT_LT(max_abs(psi(m, x) - x), 1e-14);
}

TEST(Psi, RejectsWrongChannelCount) {
  Tensor<double> x(Shape{3, 4, 4});
  try {
    psi(zero_model(0.1), x);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 0"), std::string::npos);
  }
}

TEST(Energy, ZeroNetworkClosedForm) {
  Tensor<double> x(Shape{2, 4, 4});
  x[0] = 1.0;
  x[17] = -1.0;  // ||x||^2 = 2
  EXPECT_NEAR(energy(zero_model(0.1), x), 100.0, 1e-12);
}

TEST(Energy, VanishesAtFixedPoint) {
  auto m = make_model<double>(small_spec(1), 0.1, InitKind::near_identity, 3);
  Rng rng(11);
  EXPECT_EQ(energy(m, normal_tensor<double>({2, 5, 5}, rng)), 0.0);
}

TEST(Energy, MatchesOracleRecomputation) {
  const auto m = random_model(12, 3, 4);
  Rng rng(13);
  const auto x = normal_tensor<double>({2, 6, 8}, rng);
  const auto p = oracle::direct_psi(kernels_of(m), biases_of(m), x);
  double ss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) ss += (x[i] - p[i]) * (x[i] - p[i]);
  EXPECT_NEAR(energy(m, x), 0.5 / (0.1 * 0.1) * ss, 1e-10 * ss / 0.01);
  EXPECT_GE(energy(m, x), 0.0);
}

TEST(Score, ZeroNetworkIsScaledIdentity) {
  Rng rng(14);
  const auto x = normal_tensor<double>({2, 5, 6}, rng);
  EXPECT_LT(max_abs(score(zero_model(0.1), x) - x * 100.0), 1e-12);
}

TEST(Score, MatchesFiniteDifferencesOfEnergy) {
  const auto m = random_model(15, 2, 4);
  Rng rng(16);
  const auto x = normal_tensor<double>({2, 5, 5}, rng);
  const auto fd = oracle::fd_gradient([&](const Tensor<double>& u) { return energy(m, u); }, x);
  EXPECT_LT(oracle::rel_err(score(m, x), fd), 1e-6);
}

TEST(Score, SoftplusMatchesFiniteDifferences) {
  const auto m = random_model(25, 3, 4, Activation::softplus);
  Rng rng(26);
  const auto x = normal_tensor<double>({2, 5, 5}, rng);
  const auto fd = oracle::fd_gradient([&](const Tensor<double>& u) { return energy(m, u); }, x);
  EXPECT_LT(oracle::rel_err(score(m, x), fd), 1e-6);
}

TEST(Score, SoftplusScoreIsContinuous) {
  // ratio ||T(x) - T(x + e d)|| / e stays bounded as e shrinks
  const auto m = random_model(27, 3, 6, Activation::softplus);
  Rng rng(28);
  const auto x = normal_tensor<double>({2, 6, 6}, rng);
  const auto d = random_direction<double>(x.shape(), rng);
  const auto t0 = t_map(m, x);
  const double r3 = norm(t_map(m, x + d * 1e-3) - t0) / 1e-3;
  const double r6 = norm(t_map(m, x + d * 1e-6) - t0) / 1e-6;
  EXPECT_NEAR(r6, r3, 0.01 * r3);
}

TEST(Score, DirectionalDerivative) {
  const auto m = random_model(17, 3, 4);
  Rng rng(18);
  for (int t = 0; t < 5; ++t) {
    const auto x = normal_tensor<double>({2, 6, 6}, rng);
    const auto d = random_direction<double>(x.shape(), rng);
    const double eps = 1e-5;
    const double dd = (energy(m, x + d * eps) - energy(m, x - d * eps)) / (2 * eps);
    const double an = dot_re(score(m, x), d);
    EXPECT_LT(std::abs(dd - an), 1e-5 * std::max(1.0, std::abs(an)));
  }
}

TEST(Score, VanishesWhereNetworkIsConstantAndFixed) {
  // psi(x) = c for every x (zero kernels, last-layer bias c): J = 0, x = c is fixed.
  auto m = zero_model(0.1, 2);
  (*m.bias(1))[0] = 0.3;
  (*m.bias(1))[1] = -0.7;
  Tensor<double> x(Shape{2, 4, 4});
  for (std::size_t p = 0; p < 16; ++p) {
    x[p] = 0.3;
    x[16 + p] = -0.7;
  }
  EXPECT_EQ(max_abs(score(m, x)), 0.0);
}

TEST(TMap, ZeroNetworkExamples) {
  Rng rng(19);
  const auto x = normal_tensor<double>({2, 4, 5}, rng);
  EXPECT_LT(max_abs(t_map(zero_model(1.0), x)), 1e-15);
  EXPECT_LT(max_abs(t_map(zero_model(0.1), x) + x * 99.0), 1e-12);
}

TEST(TMap, PlusScoreIsIdentity) {
  const auto m = random_model(20, 3, 4);
  Rng rng(21);
  const auto x = normal_tensor<double>({2, 6, 6}, rng);
  const auto s = score(m, x);
  const auto t = t_map(m, x);
  EXPECT_LT(max_abs(t + s - x), 1e-12 * std::max(1.0, max_abs(s)));
}

TEST(ScoreLipschitzBound, Examples) {
  EXPECT_DOUBLE_EQ(score_lipschitz_bound(0.1), 1.9);
  EXPECT_DOUBLE_EQ(score_lipschitz_bound(1.0), 1.0);
  EXPECT_DOUBLE_EQ(score_lipschitz_bound(0.5), 1.5);
  EXPECT_THROW(score_lipschitz_bound(0.0), ConfigError);
  EXPECT_THROW(score_lipschitz_bound(1.5), ConfigError);
}

TEST(Ball, MembershipAndProjection) {
  Rng rng(22);
  const auto c = normal_tensor<double>({2, 3, 3}, rng);
  Ball<double> ball{c, 0.5};
  for (int i = 0; i < 50; ++i) {
    const auto u = uniform_in_ball(c, 0.5, rng);
    EXPECT_TRUE(ball.contains(u, 1e-12));
    EXPECT_EQ(ball.project(u), u);
  }
  const auto far = c + random_direction<double>(c.shape(), rng) * 3.0;
  EXPECT_FALSE(ball.contains(far));
  EXPECT_NEAR(norm(ball.project(far) - c), 0.5, 1e-12);
}

TEST(EnergyModel, CastRoundTripAndInitBounds) {
  const auto m = make_model<double>(small_spec(3, 8), 0.1, InitKind::uniform, 23);
  for (int l = 0; l < 3; ++l) {
    const double bound = std::sqrt(6.0 / (m.kernel(l).dim(1) * 9.0));
    EXPECT_LE(max_abs(m.kernel(l)), bound);
    EXPECT_EQ(max_abs(*m.bias(l)), 0.0);
  }
  const auto f = m.cast<float>();
  EXPECT_EQ(f.parameter_count(), m.parameter_count());
  EXPECT_FLOAT_EQ(f.sigma_f(), 0.1f);
  NetworkSpec nb = small_spec();
  nb.bias = false;
  EXPECT_EQ(EnergyModel<double>(nb, 1.0).parameters().size(), 2u);
}
