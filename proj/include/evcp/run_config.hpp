#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evcp/model.hpp"
#include "evcp/synthetic.hpp"
#include "evcp/training.hpp"

namespace evcp {

/// Inclusive cluster-count range, written "lo..hi".
struct SweepRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
  bool operator==(const SweepRange&) const = default;
};

SweepRange parse_sweep(const std::string& text);
std::string format_sweep(const SweepRange& range);

/// Declarative description of one CLI invocation. The effective value (defaults
/// plus file plus flags) is written to <out>/<command>/run.json, and feeding
/// that file back through --config repeats the run.
struct RunConfig {
  std::string command;
  /// Dataset descriptor read by `prepare`.
  std::filesystem::path dataset;
  std::filesystem::path out = "runs";
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  std::optional<SweepRange> sweep;
  std::vector<std::string> variants;
  bool resume = false;

  /// The training config with the run seed applied.
  TrainConfig effective_train() const;
  std::filesystem::path stage_dir(const std::string& stage) const { return out / stage; }
};

nlohmann::json to_json(const RunConfig& config);
/// Unknown keys anywhere raise ErrorKind::config.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

}  // namespace evcp
