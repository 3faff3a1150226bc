#pragma once

// Experiment configuration as JSON. Every section is optional; keys not listed
// here are rejected so that typos fail before any compute starts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "lcmuse/dataset.hpp"
#include "lcmuse/errors.hpp"
#include "lcmuse/solver.hpp"
#include "lcmuse/training.hpp"

namespace lcmuse {

struct VerifyConfig {
  std::size_t balls = 20;            // held-out centers for the Lipschitz and monotonicity probes
  int ascent_steps = 30;             // per ball
  std::size_t pairs = 1000;          // monotonicity/convexity pairs per ball
  double ratio_slack = 0.05;         // accepted max ratio is l + slack
  double min_modulus = 0.05;         // required measured m'
  double convexity_tolerance = 1e-6;
  double descent_slack = 1e-8;
  double stationarity = 1e-3;
  int uniqueness_starts = 5;
  double uniqueness_tolerance = 1e-3;
  double uniqueness_fraction = 0.95;
  std::size_t robustness_cases = 4;  // test images at the first acceleration
  std::size_t robustness_trials = 5;
  double robustness_tolerance = 1.05;
  double psnr_margin = 1.0;          // dB over SENSE at the first acceleration

  void validate() const {
    if (balls < 1) throw ConfigError("verify.balls must be >= 1");
    if (ascent_steps < 0) throw ConfigError("verify.ascent_steps must be >= 0");
    if (pairs < 1) throw ConfigError("verify.pairs must be >= 1");
    if (uniqueness_starts < 1) throw ConfigError("verify.uniqueness_starts must be >= 1");
    if (!(uniqueness_fraction >= 0 && uniqueness_fraction <= 1)) throw ConfigError("verify.uniqueness_fraction must lie in [0, 1]");
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output = "run";
  std::filesystem::path data_dir;  // empty: generate
  DataConfig data;
  TrainConfig train;
  SolverConfig solver;
  bool solver_eta_set = false;  // solver.eta given explicitly; otherwise it follows the data
  VerifyConfig verify;

  void validate() const {
    data.validate();
    train.validate();
    solver.validate();
    verify.validate();
    if (output.empty()) throw ConfigError("output must not be empty");
    if (!data_dir.empty() && !std::filesystem::exists(data_dir / "meta.json")) {
      throw ConfigError("data.dir " + data_dir.string() + " has no meta.json");
    }
    if (data.accelerations.empty()) throw ConfigError("data.accelerations must not be empty");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + (section.empty() ? k : section + "." + k) + "'");
  }
}

template <class V>
void read(const nlohmann::json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for '" + section + "." + key + "'");
  }
}

}  // namespace detail

inline NetworkSpec parse_network(const nlohmann::json& j, NetworkSpec s = {}) {
  detail::check_keys(j, "train.network", {"layers", "channels", "kernel_size", "io_channels", "bias", "activation"});
  detail::read(j, "layers", s.layers, "train.network");
  detail::read(j, "channels", s.channels, "train.network");
  detail::read(j, "kernel_size", s.kernel_size, "train.network");
  detail::read(j, "io_channels", s.io_channels, "train.network");
  detail::read(j, "bias", s.bias, "train.network");
  if (j.contains("activation")) s.activation = parse_activation(j.at("activation").get<std::string>());
  s.validate();
  return s;
}

inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  using detail::read;
  ExperimentConfig c;
  detail::check_keys(j, "", {"seed", "output", "data", "train", "solver", "verify"});
  read(j, "seed", c.seed, "");
  if (j.contains("output")) c.output = j.at("output").get<std::string>();

  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_keys(d, "data", {"dir", "size", "coils", "train", "val", "test", "eta", "center_fraction",
                                   "sense_lambda", "accelerations"});
    if (d.contains("dir")) c.data_dir = d.at("dir").get<std::string>();
    read(d, "size", c.data.size, "data");
    read(d, "coils", c.data.coils, "data");
    read(d, "train", c.data.train, "data");
    read(d, "val", c.data.val, "data");
    read(d, "test", c.data.test, "data");
    read(d, "eta", c.data.eta, "data");
    read(d, "center_fraction", c.data.center_fraction, "data");
    read(d, "sense_lambda", c.data.sense_lambda, "data");
    if (d.contains("accelerations")) {
      c.data.accelerations.clear();
      for (const auto& a : d.at("accelerations")) {
        detail::check_keys(a, "data.accelerations[]", {"factor", "mask"});
        c.data.accelerations.push_back({a.at("factor").get<double>(), parse_mask_kind(a.at("mask").get<std::string>())});
      }
    }
  }
  c.solver.eta = c.data.eta > 0 ? c.data.eta : c.solver.eta;

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(t, "train", {"sigma_max", "m", "delta", "lambda", "lambda_growth", "lambda_ramp_epochs",
                                    "violation_threshold", "ascent_steps", "ascent_step_size", "restarts_per_epoch",
                                    "batch_size", "epochs", "lr", "lr_final", "beta1", "beta2", "adam_eps", "network", "sigma_f",
                                    "init", "precision", "monitor_centers", "monitor_pairs"});
    auto& c2 = c.train;
    read(t, "sigma_max", c2.sigma_max, "train");
    read(t, "m", c2.m, "train");
    if (t.contains("delta")) c2.delta = t.at("delta").get<double>();
    read(t, "lambda", c2.lambda, "train");
    read(t, "lambda_growth", c2.lambda_growth, "train");
    read(t, "lambda_ramp_epochs", c2.lambda_ramp_epochs, "train");
    read(t, "violation_threshold", c2.violation_threshold, "train");
    read(t, "ascent_steps", c2.ascent_steps, "train");
    if (t.contains("ascent_step_size")) c2.ascent_step_size = t.at("ascent_step_size").get<double>();
    read(t, "restarts_per_epoch", c2.restarts_per_epoch, "train");
    read(t, "batch_size", c2.batch_size, "train");
    read(t, "epochs", c2.epochs, "train");
    read(t, "lr", c2.lr, "train");
    if (t.contains("lr_final")) c2.lr_final = t.at("lr_final").get<double>();
    read(t, "beta1", c2.beta1, "train");
    read(t, "beta2", c2.beta2, "train");
    read(t, "adam_eps", c2.adam_eps, "train");
    if (t.contains("network")) c2.network = parse_network(t.at("network"), c2.network);
    read(t, "sigma_f", c2.sigma_f, "train");
    if (t.contains("init")) c2.init = parse_init_kind(t.at("init").get<std::string>());
    if (t.contains("precision")) c2.precision = parse_precision(t.at("precision").get<std::string>());
    read(t, "monitor_centers", c2.monitor_centers, "train");
    read(t, "monitor_pairs", c2.monitor_pairs, "train");
  }
  c.train.seed = c.seed;
  c.solver.m = c.train.m;

  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    detail::check_keys(s, "solver", {"eta", "safety", "lipschitz", "max_iterations", "tolerance", "cg_tolerance",
                                     "cg_max_iterations"});
    read(s, "eta", c.solver.eta, "solver");
    c.solver_eta_set = s.contains("eta");
    read(s, "safety", c.solver.safety, "solver");
    if (s.contains("lipschitz")) c.solver.lipschitz = s.at("lipschitz").get<double>();
    read(s, "max_iterations", c.solver.max_iterations, "solver");
    read(s, "tolerance", c.solver.tolerance, "solver");
    read(s, "cg_tolerance", c.solver.cg_tolerance, "solver");
    read(s, "cg_max_iterations", c.solver.cg_max_iterations, "solver");
  }

  if (j.contains("verify")) {
    const auto& v = j.at("verify");
    detail::check_keys(v, "verify", {"balls", "ascent_steps", "pairs", "ratio_slack", "min_modulus",
                                     "convexity_tolerance", "descent_slack", "stationarity", "uniqueness_starts",
                                     "uniqueness_tolerance", "uniqueness_fraction", "robustness_cases",
                                     "robustness_trials", "robustness_tolerance", "psnr_margin"});
    auto& c3 = c.verify;
    read(v, "balls", c3.balls, "verify");
    read(v, "ascent_steps", c3.ascent_steps, "verify");
    read(v, "pairs", c3.pairs, "verify");
    read(v, "ratio_slack", c3.ratio_slack, "verify");
    read(v, "min_modulus", c3.min_modulus, "verify");
    read(v, "convexity_tolerance", c3.convexity_tolerance, "verify");
    read(v, "descent_slack", c3.descent_slack, "verify");
    read(v, "stationarity", c3.stationarity, "verify");
    read(v, "uniqueness_starts", c3.uniqueness_starts, "verify");
    read(v, "uniqueness_tolerance", c3.uniqueness_tolerance, "verify");
    read(v, "uniqueness_fraction", c3.uniqueness_fraction, "verify");
    read(v, "robustness_cases", c3.robustness_cases, "verify");
    read(v, "robustness_trials", c3.robustness_trials, "verify");
    read(v, "robustness_tolerance", c3.robustness_tolerance, "verify");
    read(v, "psnr_margin", c3.psnr_margin, "verify");
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_experiment(j);
}

}  // namespace lcmuse
