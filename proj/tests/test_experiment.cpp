#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lcmuse.hpp"

using namespace lcmuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("lcmuse_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream s;
  s << is.rdbuf();
  return s.str();
}

DataConfig tiny_data() {
  DataConfig c;
  c.size = 16;
  c.coils = 2;
  c.train = 3;
  c.val = 2;
  c.test = 2;
  c.accelerations = {{2.0, MaskKind::one_d}};
  return c;
}

// Small enough to run end to end in a few seconds.
nlohmann::json tiny_experiment(const fs::path& out) {
  return {{"seed", 5},
          {"output", out.string()},
          {"data", {{"size", 16}, {"coils", 2}, {"train", 3}, {"val", 2}, {"test", 2},
                    {"accelerations", {{{"factor", 2}, {"mask", "1d"}}}}}},
          {"train", {{"epochs", 1}, {"batch_size", 2}, {"ascent_steps", 1}, {"init", "identity"},
                     {"network", {{"layers", 3}, {"channels", 4}, {"activation", "softplus"}}},
                     {"monitor_centers", 1}, {"monitor_pairs", 2}}},
          {"solver", {{"max_iterations", 20}}},
          {"verify", {{"balls", 2}, {"ascent_steps", 1}, {"pairs", 4}, {"uniqueness_starts", 1},
                      {"robustness_cases", 1}, {"robustness_trials", 1}}}};
}

bool same(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && std::equal(a.data(), a.data() + a.size(), b.data());
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripDouble) {
  const auto dir = scratch("ckpt64");
  const NetworkSpec spec{3, 4, 3, 2, true, Activation::softplus};
  auto model = make_model<double>(spec, 0.1, InitKind::uniform, 4);
  model.bias(1)->data()[2] = 0.25;
  save_checkpoint(dir / "m.ckpt", model, {0.1, 3.5, ""});
  const auto ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.model.spec().activation, Activation::softplus);
  EXPECT_EQ(ck.model.spec().channels, 4);
  EXPECT_DOUBLE_EQ(ck.model.sigma_f(), 0.1);
  EXPECT_DOUBLE_EQ(ck.info.delta, 3.5);
  EXPECT_EQ(ck.info.precision, "f64");
  ASSERT_EQ(ck.model.parameters().size(), model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    EXPECT_TRUE(same(ck.model.parameters()[i], model.parameters()[i]));
  EXPECT_EQ(model_hash(ck.model), model_hash(model));
}

TEST(Checkpoint, SinglePrecisionLoadsExactly) {
  const auto dir = scratch("ckpt32");
  const auto model = make_model<float>(NetworkSpec{2, 4, 3, 2, true}, 0.1f, InitKind::uniform, 9);
  save_checkpoint(dir / "m.ckpt", model, {});
  const auto ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.info.precision, "f32");
  const auto widened = model.cast<double>();
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    EXPECT_TRUE(same(ck.model.parameters()[i], widened.parameters()[i]));
}

TEST(Checkpoint, RejectsMismatchedSidecar) {
  const auto dir = scratch("ckptbad");
  const auto model = make_model<double>(NetworkSpec{2, 4, 3, 2, true}, 0.1, InitKind::uniform, 1);
  save_checkpoint(dir / "m.ckpt", model, {});
  auto j = nlohmann::json::parse(slurp(dir / "m.ckpt.json"));
  j["network"]["channels"] = 6;
  std::ofstream(dir / "m.ckpt.json") << j.dump();
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), ConfigError);
}

TEST(Checkpoint, RejectsTrailingDataAndMissingSidecar) {
  const auto dir = scratch("ckpttrail");
  const auto model = make_model<double>(NetworkSpec{2, 4, 3, 2, true}, 0.1, InitKind::uniform, 1);
  save_checkpoint(dir / "m.ckpt", model, {});
  std::ofstream(dir / "m.ckpt", std::ios::app | std::ios::binary) << "x";
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), ConfigError);
  fs::remove(dir / "m.ckpt.json");
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), ConfigError);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

TEST(Dataset, SaveLoadRoundTrip) {
  const auto dir = scratch("data_rt");
  const auto d = generate_dataset(tiny_data(), 7);
  save_dataset(d, dir);
  EXPECT_TRUE(fs::exists(dir / "images" / "train_000.lcmt"));
  EXPECT_TRUE(fs::exists(dir / "masks" / "test_001_R2_1d.lcmt"));
  EXPECT_TRUE(fs::exists(dir / "kspace" / "val_001_R2_1d.lcmt"));
  const auto e = load_dataset(dir);
  EXPECT_EQ(e.seed, 7u);
  EXPECT_EQ(e.config.accelerations, d.config.accelerations);
  EXPECT_TRUE(same(e.coil_maps, d.coil_maps));
  for (auto s : {Split::train, Split::val, Split::test}) {
    ASSERT_EQ(e.images(s).size(), d.images(s).size());
    for (std::size_t i = 0; i < d.images(s).size(); ++i) {
      EXPECT_TRUE(same(e.images(s)[i], d.images(s)[i]));
      EXPECT_TRUE(same(e.acquisition(s, 0, i).kspace, d.acquisition(s, 0, i).kspace));
      EXPECT_TRUE(same(e.acquisition(s, 0, i).mask, d.acquisition(s, 0, i).mask));
    }
  }
}

TEST(Dataset, DeterministicPerSeedAndDistinctAcrossSplits) {
  const auto a = generate_dataset(tiny_data(), 7), b = generate_dataset(tiny_data(), 7), c = generate_dataset(tiny_data(), 8);
  EXPECT_TRUE(same(a.test[1], b.test[1]));
  EXPECT_TRUE(same(a.acquisition(Split::test, 0, 1).kspace, b.acquisition(Split::test, 0, 1).kspace));
  EXPECT_FALSE(same(a.test[1], c.test[1]));
  EXPECT_FALSE(same(a.train[0], a.val[0]));
  EXPECT_FALSE(same(a.train[0], a.test[0]));
}

TEST(Dataset, MeasurementIsForwardModelPlusMaskedNoise) {
  auto cfg = tiny_data();
  cfg.eta = 0.05;
  cfg.size = 16;
  const auto d = generate_dataset(cfg, 3);
  const auto op = d.op(Split::train, 0, 0);
  const auto r = d.acquisition(Split::train, 0, 0).kspace - op.apply(d.train[0]);
  const auto& mask = d.acquisition(Split::train, 0, 0).mask;
  double ss = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (mask[i % mask.size()] == 0) {
      EXPECT_EQ(r[i], 0.0);
    } else {
      ss += r[i] * r[i];
      ++n;
    }
  }
  // per real component std eta; n is in the hundreds, so +-25% is many sigmas
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(n)), 0.05, 0.0125);
}

TEST(Dataset, LoadReportsMissingFiles) {
  const auto dir = scratch("data_missing");
  EXPECT_THROW(load_dataset(dir), ConfigError);
  save_dataset(generate_dataset(tiny_data(), 1), dir);
  fs::remove(dir / "kspace" / "test_000_R2_1d.lcmt");
  EXPECT_THROW(load_dataset(dir), ConfigError);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(Config, EmptyObjectGivesDefaults) {
  const auto c = parse_experiment(nlohmann::json::object());
  EXPECT_EQ(c.data.size, 32u);
  EXPECT_EQ(c.data.train, 64u);
  EXPECT_EQ(c.data.val, 8u);
  EXPECT_EQ(c.data.test, 16u);
  EXPECT_EQ(c.data.coils, 4u);
  ASSERT_EQ(c.data.accelerations.size(), 2u);
  EXPECT_EQ(c.data.accelerations[1].tag(), "R4_2d");
  EXPECT_EQ(c.verify.balls, 20u);
  EXPECT_EQ(c.verify.pairs, 1000u);
  EXPECT_DOUBLE_EQ(c.solver.m, c.train.m);
}

TEST(Config, RejectsUnknownKeysWithTheirPath) {
  auto expect_unknown = [](const nlohmann::json& j, const std::string& key) {
    try {
      parse_experiment(j);
      FAIL() << "accepted " << j.dump();
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("'" + key + "'"), std::string::npos) << e.what();
    }
  };
  expect_unknown({{"sede", 1}}, "sede");
  expect_unknown({{"train", {{"epoch", 3}}}}, "train.epoch");
  expect_unknown({{"train", {{"network", {{"width", 3}}}}}}, "train.network.width");
  expect_unknown({{"verify", {{"pair", 3}}}}, "verify.pair");
  expect_unknown({{"solver", {{"iters", 3}}}}, "solver.iters");
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(parse_experiment({{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"train", {{"m", 1.5}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"data", {{"accelerations", {{{"factor", 2}, {"mask", "3d"}}}}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"data", {{"dir", "/nonexistent/lcmuse"}}}}), ConfigError);
}

TEST(Config, SolverNoiseFollowsDataUnlessGiven) {
  EXPECT_DOUBLE_EQ(parse_experiment({{"data", {{"eta", 0.02}}}}).solver.eta, 0.02);
  EXPECT_DOUBLE_EQ(parse_experiment({{"data", {{"eta", 0.02}}}, {"solver", {{"eta", 0.03}}}}).solver.eta, 0.03);
  const auto c = parse_experiment({{"train", {{"m", 0.2}, {"network", {{"activation", "softplus"}}}}}});
  EXPECT_DOUBLE_EQ(c.solver.m, 0.2);
  EXPECT_EQ(c.train.network.activation, Activation::softplus);
}

TEST(Config, LoadedDataNoiseAppliesOnlyWithoutExplicitSolverNoise) {
  Dataset d;
  d.config.eta = 0.04;
  EXPECT_DOUBLE_EQ(solver_for(parse_experiment({{"data", {{"eta", 0.02}}}}), d).eta, 0.04);
  EXPECT_DOUBLE_EQ(solver_for(parse_experiment({{"solver", {{"eta", 0.03}}}}), d).eta, 0.03);
}

TEST(Config, LoadReportsMalformedFiles) {
  const auto dir = scratch("cfg");
  std::ofstream(dir / "bad.json") << "{ \"seed\": ";
  EXPECT_THROW(load_experiment(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_experiment(dir / "absent.json"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& e : fs::directory_iterator(LCMUSE_CONFIG_DIR)) {
    if (e.path().extension() == ".json") {
      EXPECT_NO_THROW(load_experiment(e.path())) << e.path();
    }
  }
}

// ---------------------------------------------------------------------------
// Experiment pipeline
// ---------------------------------------------------------------------------

TEST(Experiment, FullSamplingNoiselessSenseIsExact) {
  auto cfg = tiny_data();
  cfg.eta = 0;
  cfg.sense_lambda = 0;
  cfg.accelerations = {{1.0, MaskKind::one_d}};
  const auto d = generate_dataset(cfg, 2);
  SolverConfig sc;
  sc.max_iterations = 2;
  const auto model = make_model<double>(NetworkSpec{2, 4, 3, 2, true}, 0.1, InitKind::uniform, 1);
  const auto r = reconstruct_test(model, d, sc);
  const auto sense = r.select(0, kSenseMethod);
  ASSERT_EQ(sense.size(), cfg.test);
  for (const auto* s : sense) EXPECT_EQ(s->psnr, kPsnrCap) << s->image;
}

TEST(Experiment, SummaryTableShape) {
  Reconstructions r;
  r.accelerations = {{2.0, MaskKind::one_d}, {4.0, MaskKind::two_d}};
  const double p[2][2] = {{20, 22}, {30, 31}};  // [image][method]
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t i = 0; i < 2; ++i)
      for (int m = 0; m < 2; ++m) {
        ReconRecord x;
        x.image = "test_00" + std::to_string(i);
        x.acceleration = a;
        x.method = m == 0 ? kSenseMethod : kLearnedMethod;
        x.psnr = p[i][m] - static_cast<double>(a);
        x.ssim = 0.5;
        r.records.push_back(x);
      }
  const auto rows = summarize(r);
  ASSERT_EQ(rows.size(), 4u);  // 2 methods x 2 accelerations
  EXPECT_EQ(rows[0].acceleration, "R2_1d");
  EXPECT_EQ(rows[0].method, kSenseMethod);
  EXPECT_DOUBLE_EQ(rows[0].psnr.mean, 25.0);
  EXPECT_DOUBLE_EQ(rows[0].psnr.std, std::sqrt(50.0));
  EXPECT_DOUBLE_EQ(rows[3].psnr.mean, 25.5);
  EXPECT_DOUBLE_EQ(rows[3].ssim.std, 0.0);

  DataConfig dc;
  dc.accelerations = r.accelerations;
  const auto text = render_summary(rows, dc);
  EXPECT_NE(text.find("4x in place of 6x"), std::string::npos);
  EXPECT_NE(text.find("25.00 +- 7.07"), std::string::npos) << text;
  const auto csv = render_summary_csv(rows);
  EXPECT_EQ(count_lines(csv), 1u + 4u * 2u);  // header + rows x metrics
}

TEST(Experiment, ReportListsEveryMissingArtifact) {
  const auto dir = scratch("empty_run");
  try {
    report(dir);
    FAIL() << "report accepted an empty directory";
  } catch (const ConfigError& e) {
    for (const auto& f : report_artifacts()) EXPECT_NE(std::string(e.what()).find(f), std::string::npos) << f;
  }
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("tiny_run"));
    cfg_ = new ExperimentConfig(parse_experiment(tiny_experiment(*dir_ / "a")));
    result_ = new ExperimentResult(run_experiment(*cfg_));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete cfg_;
    delete dir_;
  }
  static fs::path* dir_;
  static ExperimentConfig* cfg_;
  static ExperimentResult* result_;
};
fs::path* TinyRun::dir_ = nullptr;
ExperimentConfig* TinyRun::cfg_ = nullptr;
ExperimentResult* TinyRun::result_ = nullptr;

TEST_F(TinyRun, WritesEveryArtifact) {
  for (const auto& f : report_artifacts()) EXPECT_TRUE(fs::exists(*dir_ / "a" / f)) << f;
  EXPECT_TRUE(fs::exists(*dir_ / "a" / "recon" / "test_001_R2_1d_LC-MuSE.lcmt"));
  EXPECT_FALSE(fs::exists(*dir_ / "a" / "failure.txt"));
}

TEST_F(TinyRun, ReportRowsAndIntegrity) {
  const auto r = report(*dir_ / "a");
  EXPECT_EQ(r.metric_rows, cfg_->data.test * 2);  // images x methods, one acceleration
  EXPECT_EQ(r.passed, result_->report.passed());
  EXPECT_TRUE(fs::exists(*dir_ / "a" / "checks.csv"));
  // 2 methods x 2 metrics x 1 acceleration
  const auto csv = slurp(*dir_ / "a" / "summary.csv");
  EXPECT_EQ(count_lines(csv), 1u + 2u * 2u);
}

TEST_F(TinyRun, TamperedPassFlagFailsIntegrity) {
  const auto copy = *dir_ / "tampered";
  fs::copy(*dir_ / "a", copy, fs::copy_options::recursive);
  auto j = nlohmann::json::parse(slurp(copy / "verification.json"));
  j["records"][0]["pass"] = !j["records"][0]["pass"].get<bool>();
  std::ofstream(copy / "verification.json") << j.dump(2);
  EXPECT_THROW(report(copy), VerificationError);
}

TEST_F(TinyRun, RepeatedRunIsByteIdentical) {
  auto again = *cfg_;
  again.output = *dir_ / "b";
  run_experiment(again);
  EXPECT_EQ(slurp(*dir_ / "a" / "summary.txt"), slurp(*dir_ / "b" / "summary.txt"));
  EXPECT_EQ(slurp(*dir_ / "a" / "summary.csv"), slurp(*dir_ / "b" / "summary.csv"));
  EXPECT_EQ(slurp(*dir_ / "a" / "metrics.csv"), slurp(*dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(*dir_ / "a" / "model.ckpt"), slurp(*dir_ / "b" / "model.ckpt"));
}

TEST_F(TinyRun, ReusesAStoredDataset) {
  auto reuse = *cfg_;
  reuse.output = *dir_ / "c";
  reuse.data_dir = *dir_ / "a" / "data";
  const auto r = run_experiment(reuse);
  EXPECT_EQ(r.summary_text, result_->summary_text);
  EXPECT_FALSE(fs::exists(*dir_ / "c" / "data"));
}

TEST_F(TinyRun, StageFailureNamesTheStage) {
  const auto data = *dir_ / "broken_data";
  fs::copy(*dir_ / "a" / "data", data, fs::copy_options::recursive);
  fs::remove(data / "images" / "train_001.lcmt");
  auto broken = *cfg_;
  broken.output = *dir_ / "d";
  broken.data_dir = data;
  try {
    run_experiment(broken);
    FAIL() << "missing image not detected";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 'data'"), std::string::npos) << e.what();
  }
  EXPECT_NE(slurp(*dir_ / "d" / "failure.txt").find("stage: data"), std::string::npos);
}
