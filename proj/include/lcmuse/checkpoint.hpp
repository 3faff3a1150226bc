#pragma once

// Model checkpoints: the parameters as concatenated LCMT records (kernel, then
// bias, per layer) in <path>, and a JSON sidecar <path>.json describing the
// network and the constants it was trained for.

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "lcmuse/errors.hpp"
#include "lcmuse/lcmt.hpp"
#include "lcmuse/network.hpp"

namespace lcmuse {

inline constexpr const char* kCheckpointFormat = "lcmuse-checkpoint";

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"layers", s.layers},           {"channels", s.channels}, {"kernel_size", s.kernel_size},
          {"io_channels", s.io_channels}, {"bias", s.bias},         {"activation", to_string(s.activation)}};
}

struct CheckpointInfo {
  double m = 0.1;
  double delta = 0;
  std::string precision = "f64";  // payload dtype
};

struct Checkpoint {
  EnergyModel<double> model;
  CheckpointInfo info;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& ckpt) {
  return std::filesystem::path(ckpt.string() + ".json");
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const EnergyModel<T>& model, CheckpointInfo info) {
  info.precision = sizeof(T) == 4 ? "f32" : "f64";
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("checkpoint: cannot open " + path.string() + " for writing");
    for (const auto& p : model.parameters()) lcmt::write(os, p);
  }
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = 1;
  j["network"] = to_json(model.spec());
  j["sigma_f"] = static_cast<double>(model.sigma_f());
  j["m"] = info.m;
  j["l"] = 1.0 - info.m;
  j["delta"] = info.delta;
  j["precision"] = info.precision;
  j["parameters"] = nlohmann::json::array();
  for (const auto& p : model.parameters()) j["parameters"].push_back(p.shape());
  std::ofstream os(sidecar_path(path));
  if (!os) throw ConfigError("checkpoint: cannot write " + sidecar_path(path).string());
  os << j.dump(2) << '\n';
}

/// Loads a checkpoint as a double-precision model, validating the sidecar
/// against the stored tensors.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto side = sidecar_path(path);
  std::ifstream js(side);
  if (!js) throw ConfigError("checkpoint: missing sidecar " + side.string());
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint: malformed sidecar " + side.string() + ": " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) throw ConfigError("checkpoint: " + side.string() + " is not a checkpoint");
  try {
    const auto& n = j.at("network");
    NetworkSpec spec;
    spec.layers = n.at("layers").get<int>();
    spec.channels = n.at("channels").get<int>();
    spec.kernel_size = n.at("kernel_size").get<int>();
    spec.io_channels = n.at("io_channels").get<int>();
    spec.bias = n.at("bias").get<bool>();
    spec.activation = parse_activation(n.at("activation").get<std::string>());
    Checkpoint ck{EnergyModel<double>(spec, j.at("sigma_f").get<double>()), {}};
    ck.info.m = j.at("m").get<double>();
    ck.info.delta = j.at("delta").get<double>();
    ck.info.precision = j.at("precision").get<std::string>();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("checkpoint: cannot open " + path.string());
    for (auto& p : ck.model.parameters()) {
      auto t = lcmt::read<double>(is);
      if (t.shape() != p.shape()) {
        throw ConfigError("checkpoint: tensor shape " + shape_string(t.shape()) + " does not match network shape " +
                          shape_string(p.shape()));
      }
      p = std::move(t);
    }
    if (is.peek() != std::ifstream::traits_type::eof()) throw ConfigError("checkpoint: trailing data in " + path.string());
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint: bad sidecar field: " + std::string(e.what()));
  }
}

}  // namespace lcmuse
