#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "scn/dataset.hpp"
#include "scn/networks.hpp"
#include "scn/synth.hpp"
#include "scn/training.hpp"

namespace scn {

struct SynthSection {
  SynthConfig generator;
  int count = 200;
};

struct SplitSection {
  SplitRatios ratios{8.0, 1.0, 1.0};
};

struct ModelSection {
  SegNetConfig segnet;
  VaeGanConfig vaegan;
};

struct EvalSection {
  std::string split = "test";
  int bench_warmup = 5;
  int bench_reps = 100;
};

/// Every command reads one document of this shape. All fields have
/// defaults; unknown keys are rejected. `seed`, when set, is the single
/// source of randomness: it overrides the seeds of every section.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::string manifest;  // external dataset; empty means synthesise one
  SynthSection synth;
  SplitSection split;
  ModelSection model;
  TrainConfig train;
  EvalSection eval;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

/// Applies "section.key=value" (value parsed as JSON, falling back to a
/// string) to a config document. Throws ConfigurationError on a bad path.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Fixes the seed: the given one, else the config's, else a fresh random
/// seed. Returns the seed in use.
std::uint64_t resolve_seed(RunConfig& config, std::optional<std::uint64_t> flag_seed);

/// Hex FNV-1a of the canonical JSON dump.
std::string config_fingerprint(const RunConfig& config);

}  // namespace scn
