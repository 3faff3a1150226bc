// lcmuse: data generation, training, reconstruction, verification and reports.
//
// Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
// 4 verification failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI/CLI.hpp>

#include "lcmuse.hpp"

namespace {

namespace fs = std::filesystem;
using namespace lcmuse;

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kVerification = 4 };

ExperimentConfig load_or_default(const std::string& path) {
  return path.empty() ? parse_experiment(nlohmann::json::object()) : load_experiment(path);
}

void print_report(const VerificationReport& rep) {
  for (const auto& r : rep.records) {
    std::cout << (r.pass() ? "PASS " : "FAIL ") << r.id << ": " << r.measured << ' ' << to_string(r.comparison) << ' '
              << r.threshold << (r.gating ? "" : " (informational)") << '\n';
  }
  std::cout << "overall: " << (rep.passed() ? "PASS" : "FAIL") << '\n';
}

struct GenData {
  std::string config, out;
  std::optional<std::size_t> n, val, test, size, coils;
  std::optional<double> eta;
  std::optional<std::uint64_t> seed;
  std::vector<double> accel;
  std::vector<std::string> mask;

  int run() const {
    auto cfg = load_or_default(config);
    if (n) cfg.data.train = *n;
    if (val) cfg.data.val = *val;
    if (test) cfg.data.test = *test;
    if (size) cfg.data.size = *size;
    if (coils) cfg.data.coils = *coils;
    if (eta) cfg.data.eta = *eta;
    if (seed) cfg.seed = *seed;
    if (!accel.empty()) {
      if (mask.size() != accel.size() && mask.size() != 1) {
        throw ConfigError("gen-data: give one --mask per --accel, or a single --mask for all");
      }
      cfg.data.accelerations.clear();
      for (std::size_t i = 0; i < accel.size(); ++i)
        cfg.data.accelerations.push_back({accel[i], parse_mask_kind(mask.size() == 1 ? mask[0] : mask[i])});
    } else if (!mask.empty()) {
      throw ConfigError("gen-data: --mask needs --accel");
    }
    const auto d = generate_dataset(cfg.data, cfg.seed);
    save_dataset(d, out);
    std::cout << "wrote " << d.train.size() << '/' << d.val.size() << '/' << d.test.size()
              << " train/val/test images to " << out << '\n';
    return kOk;
  }
};

struct Train {
  std::string config, data, out = "model.ckpt";
  std::optional<double> delta;

  int run() const {
    auto cfg = load_or_default(config);
    const auto d = data.empty() ? generate_dataset(cfg.data, cfg.seed) : load_dataset(data);
    const double dl = delta ? *delta : cfg.train.delta ? *cfg.train.delta : dataset_delta(d);
    std::cout << "delta " << dl << '\n';
    EnergyModel<double> model;
    const auto r = train_model(cfg, d, dl, out, model, &std::cout);
    const fs::path history = fs::path(out).replace_extension(".history.csv");
    std::ofstream os(history);
    if (!os) throw ConfigError("train: cannot write " + history.string());
    write_history_csv(os, r.history);
    std::cout << "wrote " << out << " and " << history.string() << '\n';
    return kOk;
  }
};

struct Reconstruct {
  std::string config, ckpt, data, out = "recon_out";
  std::optional<double> eta;

  int run() const {
    auto cfg = load_or_default(config);
    const auto ck = load_checkpoint(ckpt);
    const auto d = load_dataset(data);
    auto solver = solver_for(cfg, d);
    solver.m = ck.info.m;
    if (eta) solver.eta = *eta;
    const auto r = reconstruct_test(ck.model, d, solver, &std::cout);
    fs::create_directories(out);
    save_reconstructions(r, out);
    const auto rows = summarize(r);
    std::ofstream(fs::path(out) / "summary.txt") << render_summary(rows, d.config);
    std::ofstream(fs::path(out) / "summary.csv") << render_summary_csv(rows);
    std::cout << render_summary(rows, d.config);
    return kOk;
  }
};

struct Verify {
  std::string config, ckpt, data, report = "verification.json";
  std::optional<double> delta;

  int run() const {
    auto cfg = load_or_default(config);
    const auto ck = load_checkpoint(ckpt);
    const auto d = load_dataset(data);
    auto solver = solver_for(cfg, d);
    solver.m = ck.info.m;
    const double dl = delta ? *delta : ck.info.delta > 0 ? ck.info.delta : dataset_delta(d);
    const auto r = reconstruct_test(ck.model, d, solver, &std::cout);
    const auto rep = verify_model(ck.model, d, dl, solver, cfg.verify, cfg.seed, r, &std::cout);
    save_report(rep, report);
    print_report(rep);
    return rep.passed() ? kOk : kVerification;
  }
};

struct Report {
  std::string dir;

  int run() const {
    const auto r = lcmuse::report(dir);
    std::cout << r.text;
    return r.passed ? kOk : kVerification;
  }
};

struct Run {
  std::string config, out;

  int run() const {
    auto cfg = load_experiment(config);
    if (!out.empty()) cfg.output = out;
    const auto r = run_experiment(cfg, &std::cout);
    print_report(r.report);
    return r.report.passed() ? kOk : kVerification;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locally convex multi-scale energy prior for MRI reconstruction"};
  app.require_subcommand(1);

  GenData gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
  g->add_option("--config", gen.config, "Experiment config (its data section)")->check(CLI::ExistingFile);
  g->add_option("--n", gen.n, "Training images");
  g->add_option("--val", gen.val, "Validation images");
  g->add_option("--test", gen.test, "Test images");
  g->add_option("--size", gen.size, "Image side length");
  g->add_option("--coils", gen.coils, "Receive coils");
  g->add_option("--accel", gen.accel, "Acceleration factors");
  g->add_option("--mask", gen.mask, "Mask kind per acceleration (1d|2d)");
  g->add_option("--eta", gen.eta, "Measurement noise std");
  g->add_option("--seed", gen.seed, "Seed");
  g->add_option("--out", gen.out, "Output directory")->required();

  Train tr;
  auto* t = app.add_subcommand("train", "Train an energy model");
  t->add_option("--config", tr.config, "Experiment config")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset directory (generated from the config if omitted)");
  t->add_option("--delta", tr.delta, "Ball radius (from SENSE on the training split if omitted)");
  t->add_option("--out", tr.out, "Checkpoint path");

  Reconstruct rc;
  auto* r = app.add_subcommand("reconstruct", "Reconstruct the test split with SENSE and the learned prior");
  r->add_option("--config", rc.config, "Experiment config (its solver section)")->check(CLI::ExistingFile);
  r->add_option("--ckpt", rc.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  r->add_option("--data", rc.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  r->add_option("--eta", rc.eta, "Noise std in the data term (dataset value if omitted)");
  r->add_option("--out", rc.out, "Output directory");

  Verify vf;
  auto* v = app.add_subcommand("verify", "Check the local convexity, descent, uniqueness and robustness properties");
  v->add_option("--config", vf.config, "Experiment config (solver and verify sections)")->check(CLI::ExistingFile);
  v->add_option("--ckpt", vf.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  v->add_option("--data", vf.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  v->add_option("--delta", vf.delta, "Ball radius (checkpoint value if omitted)");
  v->add_option("--report", vf.report, "Report JSON path");

  Report rp;
  auto* p = app.add_subcommand("report", "Summarize a finished experiment directory");
  p->add_option("dir", rp.dir, "Experiment directory")->required();

  Run rn;
  auto* x = app.add_subcommand("run", "Run the whole experiment from a config");
  x->add_option("--config", rn.config, "Experiment config")->required()->check(CLI::ExistingFile);
  x->add_option("--out", rn.out, "Output directory (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*g) return gen.run();
    if (*t) return tr.run();
    if (*r) return rc.run();
    if (*v) return vf.run();
    if (*p) return rp.run();
    if (*x) return rn.run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const VerificationError& e) {
    std::cerr << "verification failure: " << e.what() << '\n';
    return kVerification;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}
