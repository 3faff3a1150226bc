#pragma once

// Synthetic dataset: phantoms split into train/val/test, shared coil maps, and
// per acceleration a mask and a noisy measurement for every image.
//
// On disk:
//   meta.json                               sizes, seeds, eta, accelerations
//   csm.lcmt                                [K, 2, H, W]
//   images/<split>_<i>.lcmt                 [2, H, W]
//   masks/<split>_<i>_<tag>.lcmt            [H, W]
//   kspace/<split>_<i>_<tag>.lcmt           [K, 2, H, W]
// with <tag> = R<acceleration>_<1d|2d> and <i> zero-padded to 3 digits.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcmuse/errors.hpp"
#include "lcmuse/lcmt.hpp"
#include "lcmuse/mri.hpp"
#include "lcmuse/rng.hpp"

namespace lcmuse {

struct Acceleration {
  double factor = 2.0;
  MaskKind kind = MaskKind::one_d;

  std::string tag() const {
    std::ostringstream s;
    s << 'R' << factor << '_' << to_string(kind);
    return s.str();
  }
  bool operator==(const Acceleration&) const = default;
};

struct DataConfig {
  std::size_t size = 32;
  std::size_t coils = 4;
  std::size_t train = 64;
  std::size_t val = 8;
  std::size_t test = 16;
  double eta = 0.01;
  double center_fraction = 0.08;
  double sense_lambda = 1e-2;
  std::vector<Acceleration> accelerations{{2.0, MaskKind::one_d}, {4.0, MaskKind::two_d}};

  void validate() const {
    if (size < 16) throw ConfigError("data.size must be >= 16");
    if (coils < 1) throw ConfigError("data.coils must be >= 1");
    if (train < 1) throw ConfigError("data.train must be >= 1");
    if (!(eta >= 0)) throw ConfigError("data.eta must be >= 0");
    if (!(sense_lambda >= 0)) throw ConfigError("data.sense_lambda must be >= 0");
    if (accelerations.empty()) throw ConfigError("data.accelerations must not be empty");
    for (const auto& a : accelerations)
      if (!(a.factor >= 1)) throw ConfigError("data.accelerations: factor must be >= 1");
  }
};

enum class Split { train, val, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : s == Split::val ? "val" : "test"; }

/// One acquisition of one image.
struct Acquisition {
  Tensor<double> mask;
  Tensor<double> kspace;
};

struct Dataset {
  DataConfig config;
  std::uint64_t seed = 0;
  Tensor<double> coil_maps;
  std::vector<Tensor<double>> train, val, test;
  // acquisitions[split][acceleration][image]
  std::vector<std::vector<std::vector<Acquisition>>> acquisitions;

  const std::vector<Tensor<double>>& images(Split s) const {
    return s == Split::train ? train : s == Split::val ? val : test;
  }
  const Acquisition& acquisition(Split s, std::size_t accel, std::size_t i) const {
    return acquisitions[static_cast<std::size_t>(s)][accel][i];
  }
  ForwardOperator<double> op(Split s, std::size_t accel, std::size_t i) const {
    return ForwardOperator<double>(acquisition(s, accel, i).mask, coil_maps);
  }
};

namespace detail {

// Seed streams; phantom seeds are disjoint across splits.
inline std::uint64_t phantom_seed(std::uint64_t seed, Split s, std::size_t i) {
  return derive_seed(seed, 1000000ull * (1 + static_cast<std::uint64_t>(s)) + i);
}
inline std::uint64_t mask_seed(std::uint64_t seed, Split s, std::size_t a, std::size_t i) {
  return derive_seed(seed, 10000000ull * (1 + static_cast<std::uint64_t>(s)) + 100000ull * (a + 1) + i);
}
inline std::uint64_t noise_seed(std::uint64_t seed, Split s, std::size_t a, std::size_t i) {
  return derive_seed(seed, 100000000ull * (1 + static_cast<std::uint64_t>(s)) + 100000ull * (a + 1) + i);
}

inline std::string index_name(Split s, std::size_t i) {
  std::ostringstream n;
  n << to_string(s) << '_' << std::setw(3) << std::setfill('0') << i;
  return n.str();
}

}  // namespace detail

inline Dataset generate_dataset(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset d;
  d.config = cfg;
  d.seed = seed;
  d.coil_maps = make_coil_maps<double>(cfg.coils, cfg.size, cfg.size);
  const std::size_t counts[3] = {cfg.train, cfg.val, cfg.test};
  d.acquisitions.resize(3);
  for (int si = 0; si < 3; ++si) {
    const auto s = static_cast<Split>(si);
    auto& imgs = si == 0 ? d.train : si == 1 ? d.val : d.test;
    for (std::size_t i = 0; i < counts[si]; ++i) imgs.push_back(make_phantom<double>(detail::phantom_seed(seed, s, i), cfg.size, cfg.size));
    d.acquisitions[si].resize(cfg.accelerations.size());
    for (std::size_t a = 0; a < cfg.accelerations.size(); ++a) {
      const auto& acc = cfg.accelerations[a];
      for (std::size_t i = 0; i < counts[si]; ++i) {
        auto mask = make_mask(acc.kind, acc.factor, cfg.center_fraction, detail::mask_seed(seed, s, a, i), cfg.size, cfg.size);
        ForwardOperator<double> op(mask, d.coil_maps);
        Rng rng(detail::noise_seed(seed, s, a, i));
        auto k = simulate_measurement(op, imgs[i], cfg.eta, rng);
        d.acquisitions[si][a].push_back({std::move(mask), std::move(k)});
      }
    }
  }
  return d;
}

inline nlohmann::json to_json(const DataConfig& c) {
  nlohmann::json acc = nlohmann::json::array();
  for (const auto& a : c.accelerations) acc.push_back({{"factor", a.factor}, {"mask", to_string(a.kind)}});
  return {{"size", c.size},   {"coils", c.coils}, {"train", c.train},
          {"val", c.val},     {"test", c.test},   {"eta", c.eta},
          {"center_fraction", c.center_fraction}, {"sense_lambda", c.sense_lambda},
          {"accelerations", acc}};
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "kspace");
  lcmt::save(dir / "csm.lcmt", d.coil_maps);
  for (int si = 0; si < 3; ++si) {
    const auto s = static_cast<Split>(si);
    const auto& imgs = d.images(s);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      const auto name = detail::index_name(s, i);
      lcmt::save(dir / "images" / (name + ".lcmt"), imgs[i]);
      for (std::size_t a = 0; a < d.config.accelerations.size(); ++a) {
        const auto tag = d.config.accelerations[a].tag();
        lcmt::save(dir / "masks" / (name + "_" + tag + ".lcmt"), d.acquisition(s, a, i).mask);
        lcmt::save(dir / "kspace" / (name + "_" + tag + ".lcmt"), d.acquisition(s, a, i).kspace);
      }
    }
  }
  nlohmann::json meta = to_json(d.config);
  meta["seed"] = d.seed;
  meta["format"] = "lcmuse-dataset";
  std::ofstream os(dir / "meta.json");
  if (!os) throw ConfigError("dataset: cannot write " + (dir / "meta.json").string());
  os << meta.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw ConfigError("dataset: missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  Dataset d;
  try {
    is >> meta;
    auto& c = d.config;
    c.size = meta.at("size").get<std::size_t>();
    c.coils = meta.at("coils").get<std::size_t>();
    c.train = meta.at("train").get<std::size_t>();
    c.val = meta.at("val").get<std::size_t>();
    c.test = meta.at("test").get<std::size_t>();
    c.eta = meta.at("eta").get<double>();
    c.center_fraction = meta.at("center_fraction").get<double>();
    c.sense_lambda = meta.at("sense_lambda").get<double>();
    c.accelerations.clear();
    for (const auto& a : meta.at("accelerations"))
      c.accelerations.push_back({a.at("factor").get<double>(), parse_mask_kind(a.at("mask").get<std::string>())});
    d.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset: bad meta.json: " + std::string(e.what()));
  }
  d.config.validate();
  d.coil_maps = lcmt::load<double>(dir / "csm.lcmt");
  const std::size_t counts[3] = {d.config.train, d.config.val, d.config.test};
  d.acquisitions.resize(3);
  for (int si = 0; si < 3; ++si) {
    const auto s = static_cast<Split>(si);
    auto& imgs = si == 0 ? d.train : si == 1 ? d.val : d.test;
    d.acquisitions[si].resize(d.config.accelerations.size());
    for (std::size_t i = 0; i < counts[si]; ++i) {
      const auto name = detail::index_name(s, i);
      imgs.push_back(lcmt::load<double>(dir / "images" / (name + ".lcmt")));
      for (std::size_t a = 0; a < d.config.accelerations.size(); ++a) {
        const auto tag = d.config.accelerations[a].tag();
        d.acquisitions[si][a].push_back({lcmt::load<double>(dir / "masks" / (name + "_" + tag + ".lcmt")),
                                         lcmt::load<double>(dir / "kspace" / (name + "_" + tag + ".lcmt"))});
      }
    }
  }
  return d;
}

/// Worst SENSE deviation over the training images, across every acceleration.
inline double dataset_delta(const Dataset& d) {
  double worst = 0;
  for (std::size_t a = 0; a < d.config.accelerations.size(); ++a) {
    std::vector<ForwardOperator<double>> ops;
    std::vector<Tensor<double>> meas;
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      ops.push_back(d.op(Split::train, a, i));
      meas.push_back(d.acquisition(Split::train, a, i).kspace);
    }
    worst = std::max(worst, delta_from_sense(d.train, ops, meas, d.config.sense_lambda));
  }
  return worst;
}

}  // namespace lcmuse
