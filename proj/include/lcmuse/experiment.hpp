#pragma once

// End-to-end experiment: data, delta, training, reconstruction of the test
// split with SENSE and the learned prior, verification, and the summary table.
//
// Output directory:
//   data/                   generated dataset (absent when data.dir is given)
//   model.ckpt(.json)       trained model
//   model.partial.ckpt      last parameters when training fails
//   history.csv             per-step training history
//   metrics.csv             per image, acceleration and method
//   convergence.csv         objective and iterate change per MM iteration
//   recon/*.lcmt            reconstructions
//   verification.json       VerificationReport
//   summary.txt/.csv        mean and std per method per acceleration
//   failure.txt             stage and message, only when a stage failed

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcmuse/checkpoint.hpp"
#include "lcmuse/config.hpp"
#include "lcmuse/dataset.hpp"
#include "lcmuse/errors.hpp"
#include "lcmuse/mri.hpp"
#include "lcmuse/network.hpp"
#include "lcmuse/probes.hpp"
#include "lcmuse/solver.hpp"
#include "lcmuse/training.hpp"
#include "lcmuse/verify.hpp"

namespace lcmuse {

namespace fs = std::filesystem;

inline constexpr const char* kSenseMethod = "SENSE";
inline constexpr const char* kLearnedMethod = "LC-MuSE";

// ---------------------------------------------------------------------------
// Reconstruction of the test split
// ---------------------------------------------------------------------------

struct ReconRecord {
  std::string image;  // test_000
  std::size_t acceleration = 0;
  std::string method;
  double psnr = 0;
  double ssim = 0;
  int iterations = 0;
  double stationarity = std::numeric_limits<double>::quiet_NaN();  // MM only
  double max_increase = std::numeric_limits<double>::quiet_NaN();  // MM only
  bool converged = false;
  std::vector<double> objective, change;  // MM only
  Tensor<double> x;
};

struct Reconstructions {
  std::vector<Acceleration> accelerations;
  std::vector<ReconRecord> records;

  std::vector<const ReconRecord*> select(std::size_t accel, const std::string& method) const {
    std::vector<const ReconRecord*> out;
    for (const auto& r : records)
      if (r.acceleration == accel && r.method == method) out.push_back(&r);
    return out;
  }
};

/// SENSE and MM reconstructions of every test image at every acceleration.
/// The MM solver starts at the SENSE image.
inline Reconstructions reconstruct_test(const EnergyModel<double>& model, const Dataset& d, const SolverConfig& cfg,
                                        std::ostream* log = nullptr) {
  Reconstructions out;
  out.accelerations = d.config.accelerations;
  for (std::size_t a = 0; a < d.config.accelerations.size(); ++a) {
    for (std::size_t i = 0; i < d.test.size(); ++i) {
      const auto op = d.op(Split::test, a, i);
      const auto& b = d.acquisition(Split::test, a, i).kspace;
      const auto& ref = d.test[i];
      const auto name = detail::index_name(Split::test, i);

      auto sense = sense_init(op, b, d.config.sense_lambda);
      ReconRecord s;
      s.image = name;
      s.acceleration = a;
      s.method = kSenseMethod;
      s.psnr = psnr(ref, sense.x);
      s.ssim = ssim(ref, sense.x);
      s.iterations = sense.iterations;
      s.converged = sense.converged;
      s.x = sense.x;

      auto st = solve(model, op, b, sense.x, cfg);
      ReconRecord l;
      l.image = name;
      l.acceleration = a;
      l.method = kLearnedMethod;
      l.psnr = psnr(ref, st.x);
      l.ssim = ssim(ref, st.x);
      l.iterations = st.iterations;
      l.stationarity = st.stationarity();
      l.max_increase = st.max_increase();
      l.converged = st.converged;
      l.objective = std::move(st.objective);
      l.change = std::move(st.change);
      l.x = std::move(st.x);
      if (log) {
        std::ostringstream line;
        line << "  " << name << ' ' << d.config.accelerations[a].tag() << std::fixed << std::setprecision(2)
             << "  SENSE " << s.psnr << " dB  LC-MuSE " << l.psnr << " dB  (" << l.iterations << " it)\n";
        *log << line.str() << std::flush;
      }
      out.records.push_back(std::move(s));
      out.records.push_back(std::move(l));
    }
  }
  return out;
}

namespace detail {

inline std::string number(double v, int precision = 9) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const Reconstructions& r) {
  os << "image,acceleration,method,psnr,ssim,iterations,stationarity,max_increase,converged\n";
  for (const auto& x : r.records) {
    os << x.image << ',' << r.accelerations[x.acceleration].tag() << ',' << x.method << ',' << detail::number(x.psnr)
       << ',' << detail::number(x.ssim) << ',' << x.iterations << ',' << detail::number(x.stationarity) << ','
       << detail::number(x.max_increase) << ',' << (x.converged ? 1 : 0) << '\n';
  }
}

inline void write_convergence_csv(std::ostream& os, const Reconstructions& r) {
  os << "image,acceleration,iteration,objective,change\n";
  for (const auto& x : r.records) {
    if (x.method != kLearnedMethod) continue;
    for (std::size_t k = 0; k < x.objective.size(); ++k) {
      os << x.image << ',' << r.accelerations[x.acceleration].tag() << ',' << k << ','
         << detail::number(x.objective[k], 17) << ',' << (k == 0 ? "" : detail::number(x.change[k - 1])) << '\n';
    }
  }
}

/// metrics.csv, convergence.csv and recon/<image>_<tag>_<method>.lcmt.
inline void save_reconstructions(const Reconstructions& r, const fs::path& dir) {
  fs::create_directories(dir / "recon");
  {
    auto os = detail::open_output(dir / "metrics.csv");
    write_metrics_csv(os, r);
  }
  {
    auto os = detail::open_output(dir / "convergence.csv");
    write_convergence_csv(os, r);
  }
  for (const auto& x : r.records) {
    lcmt::save(dir / "recon" / (x.image + "_" + r.accelerations[x.acceleration].tag() + "_" + x.method + ".lcmt"), x.x);
  }
}

// ---------------------------------------------------------------------------
// Summary table
// ---------------------------------------------------------------------------

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  out.n = v.size();
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return out;
}

struct SummaryRow {
  std::string acceleration;  // tag
  std::string method;
  MeanStd psnr, ssim;
};

inline std::vector<SummaryRow> summarize(const Reconstructions& r) {
  std::vector<SummaryRow> rows;
  for (std::size_t a = 0; a < r.accelerations.size(); ++a) {
    for (const char* method : {kSenseMethod, kLearnedMethod}) {
      std::vector<double> p, s;
      for (const auto* x : r.select(a, method)) {
        p.push_back(x->psnr);
        s.push_back(x->ssim);
      }
      rows.push_back({r.accelerations[a].tag(), method, mean_std(p), mean_std(s)});
    }
  }
  return rows;
}

/// Plain-text table. Fixed formatting only, so equal inputs give equal bytes.
inline std::string render_summary(const std::vector<SummaryRow>& rows, const DataConfig& data) {
  std::ostringstream s;
  s << "# Test-split reconstruction quality, mean +- std over " << data.test << " images\n"
    << "# " << data.size << "x" << data.size << " phantoms, " << data.coils << " coils, eta " << data.eta << "\n";
  const bool has_2d = std::any_of(data.accelerations.begin(), data.accelerations.end(),
                                  [](const Acceleration& a) { return a.kind == MaskKind::two_d; });
  if (has_2d) s << "# 2D masks use 4x in place of 6x, which leaves too few samples in 32x32 k-space\n";
  s << std::left << std::setw(14) << "acceleration" << std::setw(10) << "method" << std::setw(18) << "PSNR (dB)"
    << "SSIM\n";
  for (const auto& r : rows) {
    std::ostringstream p, q;
    p << std::fixed << std::setprecision(2) << r.psnr.mean << " +- " << r.psnr.std;
    q << std::fixed << std::setprecision(4) << r.ssim.mean << " +- " << r.ssim.std;
    s << std::left << std::setw(14) << r.acceleration << std::setw(10) << r.method << std::setw(18) << p.str()
      << q.str() << '\n';
  }
  return s.str();
}

inline std::string render_summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream s;
  s << "acceleration,method,metric,mean,std,n\n";
  for (const auto& r : rows) {
    for (int k = 0; k < 2; ++k) {
      const auto& m = k == 0 ? r.psnr : r.ssim;
      s << r.acceleration << ',' << r.method << ',' << (k == 0 ? "psnr" : "ssim") << ',' << std::fixed
        << std::setprecision(6) << m.mean << ',' << m.std << ',' << m.n << '\n';
    }
  }
  return s.str();
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// Held-out probe centers: validation images first, then test images.
inline std::vector<Tensor<double>> held_out_centers(const Dataset& d, std::size_t n) {
  std::vector<Tensor<double>> c;
  for (const auto* split : {&d.val, &d.test})
    for (const auto& x : *split)
      if (c.size() < n) c.push_back(x);
  return c;
}

/// Runs every verification probe against a trained model. `recon` must come
/// from reconstruct_test on the same model, data and solver settings.
inline VerificationReport verify_model(const EnergyModel<double>& model, const Dataset& d, double delta,
                                       const SolverConfig& solver, const VerifyConfig& v, std::uint64_t seed,
                                       const Reconstructions& recon, std::ostream* log = nullptr) {
  v.validate();
  if (!(delta > 0)) throw ConfigError("verify: delta must be positive");
  VerificationReport rep;
  rep.seed = seed;
  rep.delta = delta;
  rep.m = solver.m;
  rep.model_hash = model_hash(model);
  auto say = [&](const std::string& s) {
    if (log) *log << "  " << s << '\n' << std::flush;
  };

  // Local Lipschitz constant of T = I - H over held-out balls.
  const auto centers = held_out_centers(d, v.balls);
  AscentOptions<double> ascent;
  ascent.steps = v.ascent_steps;
  double max_ratio = 0;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const auto p = local_lipschitz(model, centers[c], delta, ascent, derive_seed(seed, 500 + c));
    max_ratio = std::max(max_ratio, p.ratio);
  }
  rep.add("lipschitz.max_ratio", centers.size(), max_ratio, Comparison::at_most, (1.0 - solver.m) + v.ratio_slack);
  say("max probe ratio " + detail::number(max_ratio, 6));

  // Monotonicity modulus m' and convexity at m' on the same pairs.
  const auto mono = probe_monotonicity(model, centers, delta, v.pairs, derive_seed(seed, 600));
  const double m_measured = mono.modulus;
  rep.add("monotonicity.modulus", mono.pairs, m_measured, Comparison::at_least, v.min_modulus);
  rep.add("monotonicity.positive_fraction", mono.pairs, mono.positive_fraction, Comparison::at_least, 1.0, false);
  say("m' " + detail::number(m_measured, 6) + ", positive fraction " + detail::number(mono.positive_fraction, 6));
  if (m_measured > 0) {
    const double slack = probe_convexity(model, centers, delta, v.pairs, derive_seed(seed, 600), m_measured);
    rep.add("convexity.slack_at_measured_modulus", mono.pairs, slack, Comparison::at_least, -v.convexity_tolerance);
    say("convexity slack at m' " + detail::number(slack, 6));
  }

  // Descent and stationarity over every MM reconstruction.
  double worst_increase = -std::numeric_limits<double>::infinity(), worst_stationarity = 0;
  int most_iterations = 0;
  std::size_t runs = 0;
  for (const auto& r : recon.records) {
    if (r.method != kLearnedMethod) continue;
    ++runs;
    worst_increase = std::max(worst_increase, r.max_increase);
    worst_stationarity = std::max(worst_stationarity, r.stationarity);
    most_iterations = std::max(most_iterations, r.iterations);
  }
  if (runs == 0) throw ConfigError("verify: no reconstructions to check");
  rep.add("descent.max_objective_increase", runs, worst_increase, Comparison::at_most, v.descent_slack);
  rep.add("convergence.max_stationarity", runs, worst_stationarity, Comparison::at_most, v.stationarity);
  rep.add("convergence.max_iterations", runs, most_iterations, Comparison::at_most, solver.max_iterations, false);
  say("max objective increase " + detail::number(worst_increase, 6) + ", worst stationarity " +
      detail::number(worst_stationarity, 6));

  // Uniqueness and robustness at the first acceleration; x* is the MM result.
  const auto learned = recon.select(0, kLearnedMethod);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < learned.size(); ++i) {
    const auto op = d.op(Split::test, 0, i);
    const auto& b = d.acquisition(Split::test, 0, i).kspace;
    const auto u = probe_uniqueness(model, op, b, learned[i]->x, delta, v.uniqueness_starts,
                                    derive_seed(seed, 700 + i), solver);
    agree += u.max_relative_distance <= v.uniqueness_tolerance;
  }
  const double agree_fraction = static_cast<double>(agree) / static_cast<double>(learned.size());
  rep.add("uniqueness.agreement_fraction", learned.size(), agree_fraction, Comparison::at_least,
          v.uniqueness_fraction);
  say("uniqueness agreement " + std::to_string(agree) + "/" + std::to_string(learned.size()));

  SolverConfig tight = solver;
  tight.tolerance = std::min(solver.tolerance, 1e-10);
  tight.max_iterations = std::max(solver.max_iterations, 1000);
  RobustnessResult worst;
  std::size_t trials = 0;
  if (m_measured > 0) {
    const std::size_t cases = std::min(v.robustness_cases, learned.size());
    for (std::size_t i = 0; i < cases; ++i) {
      const auto op = d.op(Split::test, 0, i);
      const auto& b = d.acquisition(Split::test, 0, i).kspace;
      const auto r = probe_robustness(model, op, b, learned[i]->x, m_measured, delta, v.robustness_trials,
                                      derive_seed(seed, 800 + i), tight);
      trials += r.trials;
      worst.amplification = std::max(worst.amplification, r.amplification);
      worst.amplification_half = std::max(worst.amplification_half, r.amplification_half);
      worst.failures += r.failures;
    }
  } else {
    // the perturbation bound needs a positive modulus
    worst.amplification = worst.amplification_half = std::numeric_limits<double>::quiet_NaN();
  }
  rep.add("robustness.amplification", trials, worst.amplification, Comparison::at_most, v.robustness_tolerance);
  rep.add("robustness.amplification_half_bound", trials, worst.amplification_half, Comparison::at_most,
          v.robustness_tolerance, false);
  rep.add("robustness.unconverged_trials", trials, static_cast<double>(worst.failures), Comparison::at_most, 0, false);
  say("robustness amplification " + detail::number(worst.amplification, 6) + " (half bound " +
      detail::number(worst.amplification_half, 6) + ")");

  // Image quality at the first acceleration.
  const auto sense = recon.select(0, kSenseMethod);
  std::vector<double> ps, pl, ss, sl;
  for (const auto* r : sense) {
    ps.push_back(r->psnr);
    ss.push_back(r->ssim);
  }
  for (const auto* r : learned) {
    pl.push_back(r->psnr);
    sl.push_back(r->ssim);
  }
  const double psnr_gain = mean_std(pl).mean - mean_std(ps).mean;
  const double ssim_gain = mean_std(sl).mean - mean_std(ss).mean;
  rep.add("quality.psnr_gain_db", learned.size(), psnr_gain, Comparison::at_least, v.psnr_margin);
  rep.add("quality.ssim_gain", learned.size(), ssim_gain, Comparison::above, 0.0);
  say("PSNR gain " + detail::number(psnr_gain, 6) + " dB, SSIM gain " + detail::number(ssim_gain, 6));
  return rep;
}

inline void save_report(const VerificationReport& rep, const fs::path& path) {
  auto os = detail::open_output(path);
  os << rep.to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct ExperimentResult {
  fs::path dir;
  double delta = 0;
  TrainResult training;
  double train_seconds = 0;  // wall time of the train stage
  std::vector<SummaryRow> summary;
  std::string summary_text;
  VerificationReport report;
};

namespace detail {

// Runs one stage; failures keep their type, gain the stage name, and are
// recorded in failure.txt.
template <class F>
auto stage(const char* name, const fs::path& dir, std::ostream* log, F&& f) -> decltype(f()) {
  if (log) *log << "[" << name << "]\n" << std::flush;
  auto record = [&](const std::string& what) {
    std::ofstream os(dir / "failure.txt");
    os << "stage: " << name << "\n" << what << '\n';
    return "stage '" + std::string(name) + "': " + what;
  };
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(record(e.what()));
  } catch (const VerificationError& e) {
    throw VerificationError(record(e.what()));
  } catch (const ShapeError& e) {
    throw ShapeError(record(e.what()));
  } catch (const ConfigError& e) {
    throw ConfigError(record(e.what()));
  } catch (const std::exception& e) {
    throw NumericalError(record(e.what()));
  }
}

template <class T>
TrainResult train_in(const ExperimentConfig& cfg, const Dataset& d, double delta, const fs::path& ckpt,
                     EnergyModel<double>& out, std::ostream* log) {
  TrainConfig tc = cfg.train;
  tc.delta = delta;
  auto model = make_model<T>(tc.network, static_cast<T>(tc.sigma_f), tc.init, derive_seed(cfg.seed, 11));
  std::vector<Tensor<T>> images, held_out;
  for (const auto& x : d.train) images.push_back(x.template cast<T>());
  for (const auto& x : d.val) held_out.push_back(x.template cast<T>());
  const CheckpointInfo info{tc.m, delta, ""};
  TrainHooks<T> hooks;
  hooks.on_epoch = [&](const EnergyModel<T>&, const EpochSummary& e) {
    if (!log) return;
    *log << "  epoch " << e.epoch << "  dsm " << detail::number(e.dsm, 5) << "  penalty " << detail::number(e.penalty, 4)
         << "  max ratio " << detail::number(e.max_ratio, 4) << "  m' " << detail::number(e.m_estimate, 4)
         << "  lambda " << e.lambda << '\n'
         << std::flush;
  };
  hooks.on_failure = [&](const EnergyModel<T>& m, const std::string&) {
    save_checkpoint(fs::path(ckpt).replace_extension(".partial.ckpt"), m, info);
  };
  auto result = train(model, images, held_out, tc, hooks);
  save_checkpoint(ckpt, model, info);
  out = model.template cast<double>();
  return result;
}

}  // namespace detail

/// Trains a model on the training split and writes `ckpt` (plus its sidecar).
inline TrainResult train_model(const ExperimentConfig& cfg, const Dataset& d, double delta, const fs::path& ckpt,
                               EnergyModel<double>& out, std::ostream* log = nullptr) {
  return cfg.train.precision == Precision::f32 ? detail::train_in<float>(cfg, d, delta, ckpt, out, log)
                                               : detail::train_in<double>(cfg, d, delta, ckpt, out, log);
}

/// Solver settings for a dataset: an explicit solver.eta wins, otherwise the data noise level.
inline SolverConfig solver_for(const ExperimentConfig& cfg, const Dataset& d) {
  auto s = cfg.solver;
  if (!cfg.solver_eta_set && d.config.eta > 0) s.eta = d.config.eta;
  return s;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  ExperimentResult res;
  res.dir = cfg.output;
  fs::create_directories(res.dir);
  fs::remove(res.dir / "failure.txt");
  const auto& dir = res.dir;

  const Dataset data = detail::stage("data", dir, log, [&] {
    if (!cfg.data_dir.empty()) return load_dataset(cfg.data_dir);
    auto d = generate_dataset(cfg.data, cfg.seed);
    save_dataset(d, dir / "data");
    return d;
  });

  res.delta = detail::stage("delta", dir, log, [&] {
    const double delta = cfg.train.delta.value_or(0) > 0 ? *cfg.train.delta : dataset_delta(data);
    if (log) *log << "  delta " << detail::number(delta, 6) << '\n';
    return delta;
  });

  EnergyModel<double> model;
  const auto solver = solver_for(cfg, data);
  const auto t0 = std::chrono::steady_clock::now();
  res.training = detail::stage("train", dir, log, [&] {
    auto r = train_model(cfg, data, res.delta, dir / "model.ckpt", model, log);
    auto os = detail::open_output(dir / "history.csv");
    write_history_csv(os, r.history);
    return r;
  });
  res.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto recon = detail::stage("reconstruct", dir, log, [&] {
    auto r = reconstruct_test(model, data, solver, log);
    save_reconstructions(r, dir);
    return r;
  });

  res.report = detail::stage("verify", dir, log, [&] {
    auto rep = verify_model(model, data, res.delta, solver, cfg.verify, cfg.seed, recon, log);
    save_report(rep, dir / "verification.json");
    return rep;
  });

  detail::stage("summary", dir, log, [&] {
    res.summary = summarize(recon);
    res.summary_text = render_summary(res.summary, data.config);
    auto txt = detail::open_output(dir / "summary.txt");
    txt << res.summary_text;
    auto csv = detail::open_output(dir / "summary.csv");
    csv << render_summary_csv(res.summary);
  });
  if (log) *log << res.summary_text << std::flush;
  return res;
}

// ---------------------------------------------------------------------------
// Report over a finished experiment directory
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& report_artifacts() {
  static const std::vector<std::string> files{"model.ckpt",      "model.ckpt.json",   "history.csv", "metrics.csv",
                                              "convergence.csv", "verification.json", "summary.txt", "summary.csv"};
  return files;
}

struct ReportResult {
  std::string text;       // summary table and check matrix
  std::size_t metric_rows = 0;
  bool passed = false;  // overall verification verdict
};

/// Renders the summary and the check matrix of a finished run and writes
/// checks.csv. Throws ConfigError naming every missing artifact and
/// VerificationError when a stored pass flag disagrees with its measurement.
inline ReportResult report(const fs::path& dir) {
  std::vector<std::string> missing;
  for (const auto& f : report_artifacts())
    if (!fs::exists(dir / f)) missing.push_back(f);
  if (!missing.empty()) {
    std::string msg = "report: missing artifacts in " + dir.string() + ":";
    for (const auto& f : missing) msg += " " + f;
    throw ConfigError(msg);
  }
  nlohmann::json j;
  {
    std::ifstream is(dir / "verification.json");
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("report: malformed verification.json: " + std::string(e.what()));
    }
  }
  std::vector<std::string> bad;
  try {
    bad = integrity_errors(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("report: malformed verification.json: " + std::string(e.what()));
  }
  if (!bad.empty()) {
    std::string msg = "report: pass flags disagree with measurements for:";
    for (const auto& id : bad) msg += " " + id;
    throw VerificationError(msg);
  }

  ReportResult out;
  std::ostringstream text, csv;
  {
    std::ifstream is(dir / "summary.txt");
    text << is.rdbuf();
  }
  {
    std::ifstream is(dir / "metrics.csv");
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line))
      if (!line.empty()) ++out.metric_rows;
  }
  text << "\n" << std::left << std::setw(40) << "check" << std::setw(14) << "measured" << std::setw(4) << ""
       << std::setw(12) << "threshold" << "result\n";
  csv << "id,samples,measured,comparison,threshold,pass,gating\n";
  for (const auto& r : j.at("records")) {
    const auto& mv = r.at("measured");
    const double measured = mv.is_null() ? std::numeric_limits<double>::quiet_NaN() : mv.get<double>();
    const bool pass = r.at("pass").get<bool>(), gating = r.at("gating").get<bool>();
    text << std::left << std::setw(40) << r.at("id").get<std::string>() << std::setw(14)
         << (std::isnan(measured) ? "n/a" : detail::number(measured, 6)) << std::setw(4)
         << r.at("comparison").get<std::string>() << std::setw(12) << detail::number(r.at("threshold").get<double>(), 6)
         << (pass ? "PASS" : "FAIL") << (gating ? "" : " (informational)") << '\n';
    csv << r.at("id").get<std::string>() << ',' << r.at("samples").get<std::size_t>() << ','
        << detail::number(measured, 17) << ',' << r.at("comparison").get<std::string>() << ','
        << detail::number(r.at("threshold").get<double>(), 17) << ',' << (pass ? 1 : 0) << ',' << (gating ? 1 : 0)
        << '\n';
  }
  out.passed = j.at("passed").get<bool>();
  text << "overall: " << (out.passed ? "PASS" : "FAIL") << '\n';
  out.text = text.str();
  auto os = detail::open_output(dir / "checks.csv");
  os << csv.str();
  return out;
}

}  // namespace lcmuse
