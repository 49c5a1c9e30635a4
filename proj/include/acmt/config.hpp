#pragma once

// JSON run configuration (comments allowed). Every section is optional; unknown keys are
// rejected so a typo never silently falls back to a default.

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "acmt/error.hpp"
#include "acmt/mesh_io.hpp"
#include "acmt/network.hpp"
#include "acmt/synthdata.hpp"
#include "acmt/trainer.hpp"

namespace acmt::config {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunConfig {
  fs::path data_dir = "data";
  std::size_t cases = 40;
  std::size_t folds = 5;
  synth::GenParams gen;

  train::TrainConfig train = desk_train();
  fs::path run_dir = "runs/train";

  std::vector<std::uint64_t> ablation_seeds{1, 2, 3};
  fs::path ablation_dir = "runs/ablation";

  std::size_t jobs = 1;

  // Desk-scale experiment: toy preset, 512 points, 100 epochs.
  static train::TrainConfig desk_train() {
    train::TrainConfig t;
    t.epochs = 100;
    return t;
  }
};

namespace detail {

inline void check_keys(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw Error(ErrorCategory::config, "'" + section + "' must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw Error(ErrorCategory::config, "unknown key '" + key + "' in " + (section.empty() ? "top level" : "'" + section + "'"));
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCategory::config, "'" + section + "." + key + "' has the wrong type");
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "config") {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCategory::config, origin + ": " + e.what());
  }
  RunConfig c;
  detail::check_keys(j, "", {"data", "train", "ablation", "jobs"});
  detail::read(j, "jobs", c.jobs, "");

  if (j.contains("data")) {
    const auto& d = j["data"];
    detail::check_keys(d, "data", {"dir", "cases", "folds", "seed", "radii", "thickness_min", "thickness_max",
                                   "bump_amplitude", "bump_count", "segments", "kernel_h", "max_rotation_deg",
                                   "max_translation", "subdivisions", "samples"});
    std::string dir = c.data_dir.string();
    detail::read(d, "dir", dir, "data");
    c.data_dir = dir;
    detail::read(d, "cases", c.cases, "data");
    detail::read(d, "folds", c.folds, "data");
    detail::read(d, "seed", c.gen.seed, "data");
    detail::read(d, "radii", c.gen.radii, "data");
    detail::read(d, "thickness_min", c.gen.thickness_min, "data");
    detail::read(d, "thickness_max", c.gen.thickness_max, "data");
    detail::read(d, "bump_amplitude", c.gen.bump_amplitude, "data");
    detail::read(d, "bump_count", c.gen.bump_count, "data");
    detail::read(d, "segments", c.gen.segments, "data");
    detail::read(d, "kernel_h", c.gen.kernel_h, "data");
    detail::read(d, "max_rotation_deg", c.gen.max_rotation_deg, "data");
    detail::read(d, "max_translation", c.gen.max_translation, "data");
    detail::read(d, "subdivisions", c.gen.subdivisions, "data");
    detail::read(d, "samples", c.gen.samples, "data");
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_keys(t, "train", {"out", "epochs", "batch", "lr", "lr_decay", "decay_fraction", "alpha", "beta",
                                    "preset", "points", "variant", "seed", "fold"});
    std::string out = c.run_dir.string(), variant = net::variant_name(c.train.variant);
    detail::read(t, "out", out, "train");
    c.run_dir = out;
    detail::read(t, "epochs", c.train.epochs, "train");
    detail::read(t, "batch", c.train.batch, "train");
    detail::read(t, "lr", c.train.lr, "train");
    detail::read(t, "lr_decay", c.train.lr_decay, "train");
    detail::read(t, "decay_fraction", c.train.decay_fraction, "train");
    detail::read(t, "alpha", c.train.weights.alpha, "train");
    detail::read(t, "beta", c.train.weights.beta, "train");
    detail::read(t, "preset", c.train.preset, "train");
    detail::read(t, "points", c.train.n_points, "train");
    detail::read(t, "variant", variant, "train");
    detail::read(t, "seed", c.train.seed, "train");
    detail::read(t, "fold", c.train.fold, "train");
    try {
      c.train.variant = net::parse_variant(variant);
    } catch (const Error& e) {
      throw Error(ErrorCategory::config, e.what());
    }
  }

  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    detail::check_keys(a, "ablation", {"out", "seeds"});
    std::string out = c.ablation_dir.string();
    detail::read(a, "out", out, "ablation");
    c.ablation_dir = out;
    detail::read(a, "seeds", c.ablation_seeds, "ablation");
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCategory::config, e.what());
  }
  return parse_run_config(text, path.string());
}

}  // namespace acmt::config
