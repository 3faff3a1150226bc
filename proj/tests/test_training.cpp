#include <gtest/gtest.h>

#include <sstream>

#include "lcmuse/mri.hpp"
#include "lcmuse/training.hpp"
#include "oracles.hpp"

using namespace lcmuse;

namespace {

EnergyModel<double> random_model(std::uint64_t seed, int layers, int channels, Activation act = Activation::relu) {
  NetworkSpec spec{layers, channels, 3, 2, true, act};
  auto m = make_model<double>(spec, 0.1, InitKind::uniform, seed);
  Rng rng(seed + 1);
  for (int l = 0; l < layers; ++l) *m.bias(l) = normal_tensor<double>(m.bias(l)->shape(), rng, 0.1);
  return m;
}

// Relative error between an analytic parameter gradient and central differences of f.
double param_grad_error(EnergyModel<double> model, const ad::Gradients<double>& g,
                        const std::function<double(const EnergyModel<double>&)>& f) {
  double num = 0, den = 0;
  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    const auto fd = oracle::fd_gradient(
        [&](const Tensor<double>& p) {
          auto m2 = model;
          m2.parameters()[k] = p;
          return f(m2);
        },
        model.parameters()[k], 1e-6);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      num += (g[k][i] - fd[i]) * (g[k][i] - fd[i]);
      den += fd[i] * fd[i];
    }
  }
  return std::sqrt(num / den);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.network = NetworkSpec{3, 8, 3, 2, true, Activation::softplus};
  cfg.delta = 0.5;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.ascent_steps = 2;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  cfg.monitor_centers = 1;
  cfg.monitor_pairs = 2;
  return cfg;
}

std::vector<Tensor<double>> phantoms(int n, std::uint64_t first, std::size_t size = 16) {
  std::vector<Tensor<double>> out;
  for (int i = 0; i < n; ++i) out.push_back(make_phantom<double>(first + i, size, size));
  return out;
}

}  // namespace

TEST(DsmLoss, ZeroNetworkClosedForm) {
  // H(u) = 100 u, so at x = 0 the residual is (100 - 1) s z
  const EnergyModel<double> zero(NetworkSpec{2, 4, 3, 2, true}, 0.1);
  Rng rng(1);
  const auto z = normal_tensor<double>({2, 4, 4}, rng);
  const Tensor<double> x(Shape{2, 4, 4});
  EXPECT_NEAR(dsm_loss(zero, {x}, {0.05}, {z}), 99 * 99 * 0.05 * 0.05 * squared_norm(z), 1e-8);
  // batch mean of two identical terms is the term; sigma 0 against x = 0 gives zero
  EXPECT_NEAR(dsm_loss(zero, {x, x}, {0.05, 0.0}, {z, z}), 0.5 * 99 * 99 * 0.05 * 0.05 * squared_norm(z), 1e-8);
  EXPECT_THROW(dsm_loss(zero, {x}, {0.05, 0.1}, {z}), ShapeError);
}

TEST(DsmLoss, ParameterGradientMatchesFiniteDifferences) {
  for (auto act : {Activation::relu, Activation::softplus}) {
    const auto model = random_model(2, 2, 4, act);
    Rng rng(3);
    const std::vector<Tensor<double>> xs{normal_tensor<double>({2, 8, 8}, rng), normal_tensor<double>({2, 8, 8}, rng)};
    const std::vector<Tensor<double>> zs{normal_tensor<double>({2, 8, 8}, rng), normal_tensor<double>({2, 8, 8}, rng)};
    const std::vector<double> sig{0.03, 0.08};
    auto bm = bind(model, true);
    const auto g = ad::grad(dsm_loss(bm, xs, sig, zs), bm.params);
    EXPECT_LT(param_grad_error(model, g, [&](const EnergyModel<double>& m) { return dsm_loss(m, xs, sig, zs); }), 1e-4);
  }
}

TEST(Penalty, FromRatiosExamples) {
  EXPECT_DOUBLE_EQ(penalty_from_ratios<double>({1.4}, 0.9), 0.25);
  EXPECT_NEAR(penalty_from_ratios<double>({1.1, 0.5}, 0.9), 0.02, 1e-15);
  EXPECT_EQ(penalty_from_ratios<double>({0.9, 0.2}, 0.9), 0.0);
  EXPECT_EQ(penalty_from_ratios<double>({}, 0.9), 0.0);
}

TEST(Penalty, ProbeGradientMatchesFiniteDifferences) {
  const auto model = random_model(4, 2, 4, Activation::softplus);
  Rng rng(5);
  const auto c = normal_tensor<double>({2, 6, 6}, rng);
  LipschitzProbe<double> p;
  p.x1 = uniform_in_ball(c, 0.5, rng);
  p.x2 = uniform_in_ball(c, 0.5, rng);
  const PlainMap<double> t = [&](const Tensor<double>& u) { return t_map(model, u); };
  const double r = pair_ratio(t, p.x1, p.x2);
  const double l = r / 2;  // active
  auto bm = bind(model, true);
  auto pt = probe_penalty(bm, p, l);
  ASSERT_TRUE(pt.defined());
  EXPECT_NEAR(pt.value().item(), (r - l) * (r - l), 1e-10 * r * r);
  const auto g = ad::grad(pt, bm.params);
  EXPECT_LT(param_grad_error(model, g, [&](const EnergyModel<double>& m) { return penalty(m, {p}, l); }), 1e-4);
  // inside the dead zone the term vanishes
  EXPECT_FALSE(probe_penalty(bind(model, true), p, r * 2).defined());
  EXPECT_EQ(penalty(model, {p}, r * 2), 0.0);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  std::vector<Tensor<double>> params{Tensor<double>(Shape{3}, std::vector<double>{1.0, 2.0, 3.0})};
  const std::vector<Tensor<double>> grads{Tensor<double>(Shape{3}, std::vector<double>{0.5, -4.0, 0.0})};
  Adam<double> adam(params, 0.01, 0.9, 0.999, 1e-8);
  adam.step(params, grads);
  // m_hat / sqrt(v_hat) = g / |g| on the first step
  EXPECT_NEAR(params[0][0], 0.99, 1e-7);
  EXPECT_NEAR(params[0][1], 2.01, 1e-7);
  EXPECT_EQ(params[0][2], 3.0);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, CosineScheduleEndpointsAndMidpoint) {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 5;
  EXPECT_EQ(epoch_lr(cfg, 1), 1e-3);
  EXPECT_EQ(epoch_lr(cfg, 5), 1e-3);
  cfg.lr_final = 1e-4;
  EXPECT_NEAR(epoch_lr(cfg, 1), 1e-3, 1e-18);
  EXPECT_NEAR(epoch_lr(cfg, 3), 5.5e-4, 1e-18);
  EXPECT_NEAR(epoch_lr(cfg, 5), 1e-4, 1e-18);
  EXPECT_GT(epoch_lr(cfg, 2), epoch_lr(cfg, 3));
  cfg.lr_final = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, DsmOnlyTrainingHalvesTheLoss) {
  auto cfg = tiny_config();
  cfg.lambda = 0;
  cfg.ascent_steps = 0;
  cfg.epochs = 25;  // 8 images, batch 1: 200 steps
  cfg.batch_size = 1;
  cfg.network.activation = Activation::relu;
  auto model = make_model<double>(cfg.network, 0.1, InitKind::uniform, 6);
  const auto images = phantoms(8, 10);
  // fixed evaluation noise
  Rng rng(7);
  std::vector<Tensor<double>> zs;
  std::vector<double> sig;
  for (std::size_t i = 0; i < images.size(); ++i) {
    zs.push_back(normal_tensor<double>(images[i].shape(), rng));
    sig.push_back(0.1 * (i + 1) / 8.0);
  }
  const double before = dsm_loss(model, images, sig, zs);
  const auto res = train(model, images, {}, cfg);
  EXPECT_EQ(res.history.size(), 200u);
  EXPECT_LE(dsm_loss(model, images, sig, zs), 0.5 * before);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto cfg = tiny_config();
  const auto images = phantoms(4, 20);
  const auto held = phantoms(1, 30);
  auto a = make_model<double>(cfg.network, 0.1, InitKind::near_identity, 8);
  auto b = a;
  const auto ra = train(a, images, held, cfg);
  const auto rb = train(b, images, held, cfg);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].dsm, rb.history[i].dsm);
    EXPECT_EQ(ra.history[i].max_ratio, rb.history[i].max_ratio);
  }
  for (std::size_t k = 0; k < a.parameters().size(); ++k) EXPECT_EQ(a.parameters()[k], b.parameters()[k]);
  // m' is recorded on the last step of each epoch only
  EXPECT_TRUE(std::isnan(ra.history[0].m_estimate));
  EXPECT_FALSE(std::isnan(ra.history[1].m_estimate));
  EXPECT_EQ(ra.epochs.size(), 2u);
}

TEST(Train, LambdaGrowsWhileViolationsPersist) {
  auto cfg = tiny_config();
  cfg.epochs = 2;
  cfg.lambda_ramp_epochs = 1;
  cfg.violation_threshold = 0.0;
  cfg.m = 0.99;  // l = 0.01: every probe violates
  auto model = make_model<double>(cfg.network, 0.1, InitKind::uniform, 9);
  const auto res = train(model, phantoms(2, 40), {}, cfg);
  EXPECT_EQ(res.epochs[0].lambda, 10.0);
  EXPECT_EQ(res.epochs[1].lambda, 20.0);
  EXPECT_EQ(res.final_lambda, 40.0);
  EXPECT_EQ(res.epochs[0].violation_rate, 1.0);
}

TEST(Train, NonFiniteInputRaisesAfterHook) {
  auto cfg = tiny_config();
  auto model = make_model<double>(cfg.network, 0.1, InitKind::uniform, 10);
  auto images = phantoms(2, 50);
  images[0][5] = std::numeric_limits<double>::quiet_NaN();
  images[1][5] = std::numeric_limits<double>::quiet_NaN();
  std::string seen;
  TrainHooks<double> hooks;
  hooks.on_failure = [&](const EnergyModel<double>&, const std::string& msg) { seen = msg; };
  EXPECT_THROW(train(model, images, {}, cfg, hooks), NumericalError);
  EXPECT_NE(seen.find("non-finite"), std::string::npos);
}

TEST(Train, RejectsInvalidConfiguration) {
  auto cfg = tiny_config();
  auto model = make_model<double>(cfg.network, 0.1, InitKind::uniform, 11);
  const auto images = phantoms(2, 60);
  cfg.delta.reset();
  EXPECT_THROW(train(model, images, {}, cfg), ConfigError);
  cfg = tiny_config();
  cfg.m = 1.0;
  EXPECT_THROW(train(model, images, {}, cfg), ConfigError);
  cfg = tiny_config();
  EXPECT_THROW(train(model, {}, {}, cfg), ConfigError);
  EXPECT_THROW(train(model, {Tensor<double>(Shape{3, 16, 16})}, {}, cfg), ShapeError);
}

TEST(HistoryCsv, HeaderAndBlankEstimate) {
  std::vector<HistoryRow> rows(2);
  rows[0] = {1, 1, 2.5, 0.0, 1.2, std::numeric_limits<double>::quiet_NaN(), 10.0};
  rows[1] = {2, 1, 2.0, 0.1, 1.1, 0.05, 10.0};
  std::ostringstream os;
  write_history_csv(os, rows);
  EXPECT_EQ(os.str(), "step,dsm,penalty,max_ratio,m_estimate,epoch,lambda\n1,2.5,0,1.2,,1,10\n2,2,0.1,1.1,0.05,1,10\n");
}
