#pragma once

// Run configuration: one JSON document holding the architecture, training,
// solver, field-toggle, mixture and data sections. Every section and key is
// optional; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "uniflow/data.hpp"
#include "uniflow/degrade.hpp"
#include "uniflow/flow.hpp"
#include "uniflow/nn.hpp"

namespace uniflow {

struct TrainConfig {
  double lr = 1e-4;
  int batch = 4;
  int iterations = 300;
  int crop = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  int val_every = 50;  // iterations between validation passes and curve rows
  int val_frames = 0;  // frames used per validation pass; 0 = all

  void validate() const {
    if (!(lr >= 0)) throw ConfigError("train.lr must be >= 0");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
    if (crop < 1) throw ConfigError("train.crop must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("train.eps must be > 0");
    if (val_every < 1) throw ConfigError("train.val_every must be >= 1");
    if (val_frames < 0) throw ConfigError("train.val_frames must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunConfig {
  ArchConfig arch;
  TrainConfig train;
  SolverSettings solver;
  FieldToggles toggles;
  MixtureConfig mix;
  DataConfig data;

  void validate() const {
    arch.validate();
    train.validate();
    solver.validate();
    mix.validate();
    data.validate();
    if (train.crop % arch.divisor() != 0) {
      throw ConfigError("train.crop must be divisible by " + std::to_string(arch.divisor()));
    }
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail_config {

// Reads the keys of `j` through `on_key`, rejecting any it does not consume.
template <class F>
void read_object(const nlohmann::json& j, const std::string& section, F&& on_key) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!on_key(key, value)) throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
  }
}

template <class T>
bool take(const std::string& key, const nlohmann::json& value, const char* name, T& out) {
  if (key != name) return false;
  try {
    out = value.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + name + "' has the wrong type");
  }
  return true;
}

}  // namespace detail_config

inline nlohmann::json to_json(const ArchConfig& a) {
  return {{"levels", a.levels},
          {"base_channels", a.base_channels},
          {"prompt_dim", a.prompt_dim},
          {"prompt_mode", to_string(a.prompt_mode)},
          {"in_channels", a.in_channels},
          {"input_skip", a.input_skip}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  using detail_config::take;
  ArchConfig a;
  detail_config::read_object(j, "arch", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "prompt_mode") {
      std::string mode;
      take(k, v, "prompt_mode", mode);
      a.prompt_mode = prompt_mode_from_string(mode);
      return true;
    }
    return take(k, v, "levels", a.levels) || take(k, v, "base_channels", a.base_channels) ||
           take(k, v, "prompt_dim", a.prompt_dim) || take(k, v, "in_channels", a.in_channels) ||
           take(k, v, "input_skip", a.input_skip);
  });
  return a;
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"lr", t.lr},       {"batch", t.batch}, {"iterations", t.iterations}, {"crop", t.crop},
          {"beta1", t.beta1}, {"beta2", t.beta2}, {"eps", t.eps},               {"seed", t.seed},
          {"val_every", t.val_every}, {"val_frames", t.val_frames}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
  using detail_config::take;
  TrainConfig t;
  detail_config::read_object(j, "train", [&](const std::string& k, const nlohmann::json& v) {
    return take(k, v, "lr", t.lr) || take(k, v, "batch", t.batch) || take(k, v, "iterations", t.iterations) ||
           take(k, v, "crop", t.crop) || take(k, v, "beta1", t.beta1) || take(k, v, "beta2", t.beta2) ||
           take(k, v, "eps", t.eps) || take(k, v, "seed", t.seed) || take(k, v, "val_every", t.val_every) ||
           take(k, v, "val_frames", t.val_frames);
  });
  return t;
}

inline nlohmann::json to_json(const SolverSettings& s) {
  return {{"steps", s.steps}, {"dt", s.dt}, {"lambda", s.lambda}};
}

inline SolverSettings solver_from_json(const nlohmann::json& j) {
  using detail_config::take;
  SolverSettings s;
  detail_config::read_object(j, "solver", [&](const std::string& k, const nlohmann::json& v) {
    return take(k, v, "steps", s.steps) || take(k, v, "dt", s.dt) || take(k, v, "lambda", s.lambda);
  });
  return s;
}

inline nlohmann::json to_json(const FieldToggles& t) {
  return {{"momentum", t.momentum}, {"potential", t.potential}, {"decay", t.decay}, {"prompt", t.prompt}};
}

/// Accepts an object of booleans or a preset/list string ("simplified", "momentum,prompt").
inline FieldToggles toggles_from_json(const nlohmann::json& j) {
  using detail_config::take;
  if (j.is_string()) return FieldToggles::parse(j.get<std::string>());
  FieldToggles t;
  detail_config::read_object(j, "toggles", [&](const std::string& k, const nlohmann::json& v) {
    return take(k, v, "momentum", t.momentum) || take(k, v, "potential", t.potential) ||
           take(k, v, "decay", t.decay) || take(k, v, "prompt", t.prompt);
  });
  return t;
}

inline nlohmann::json to_json(const DataConfig& d) {
  return {{"frame_rate", d.frame_rate}, {"fps", d.fps}, {"val_fraction", d.val_fraction}, {"test_fraction", d.test_fraction}};
}

inline DataConfig data_from_json(const nlohmann::json& j) {
  using detail_config::take;
  DataConfig d;
  detail_config::read_object(j, "data", [&](const std::string& k, const nlohmann::json& v) {
    return take(k, v, "frame_rate", d.frame_rate) || take(k, v, "fps", d.fps) ||
           take(k, v, "val_fraction", d.val_fraction) || take(k, v, "test_fraction", d.test_fraction);
  });
  return d;
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"arch", to_json(c.arch)},       {"train", to_json(c.train)}, {"solver", to_json(c.solver)},
          {"toggles", to_json(c.toggles)}, {"mix", to_json(c.mix)},     {"data", to_json(c.data)}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail_config::read_object(j, "<root>", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "arch") c.arch = arch_from_json(v);
    else if (k == "train") c.train = train_from_json(v);
    else if (k == "solver") c.solver = solver_from_json(v);
    else if (k == "toggles") c.toggles = toggles_from_json(v);
    else if (k == "mix") c.mix = mixture_from_json(v);
    else if (k == "data") c.data = data_from_json(v);
    else return false;
    return true;
  });
  c.validate();
  return c;
}

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(parse_json_file(path)); }

}  // namespace uniflow
