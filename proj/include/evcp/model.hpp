#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evcp/autodiff.hpp"
#include "evcp/dataset.hpp"
#include "evcp/layers.hpp"
#include "evcp/parameters.hpp"
#include "evcp/region_features.hpp"

namespace evcp {

struct ModelConfig {
  std::size_t lookback = 12;
  std::size_t clusters = 10;
  std::size_t encoder_blocks = 2;
  double temperature = 1.5;
  std::size_t d_model = 64;
  std::vector<int> horizons{3, 6, 9, 12};
  double dropout = 0.1;

  // Architecture toggles used by the ablation matrix.
  bool use_hypergraph = true;
  bool use_graph = true;
  bool use_encoder = true;
  bool use_price = true;
  bool use_temperature = true;
  bool use_variable_selection = true;
  bool gumbel = true;
  /// Feeds the raw demand window to the decoder next to the encoder output.
  bool demand_skip = true;

  /// Throws ErrorKind::config on an invalid combination.
  void validate() const;
  std::size_t feature_count() const { return 1 + (use_price ? 1 : 0) + (use_temperature ? 1 : 0); }
  /// Names of the selected features in the order they are stacked.
  std::vector<std::string> feature_order() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys raise ErrorKind::config.
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ModelState {
  ModelConfig config;
  ParameterSet parameters;
  /// Seed the parameters were initialized from.
  std::uint64_t init_seed = 0;
};

std::vector<ParameterSpec> parameter_specs(const ModelConfig& config);
ModelState init_model(const ModelConfig& config, std::uint64_t seed);
/// Shape audit of a state's parameters against its config.
void audit(const ModelState& state);

/// Samples [begin, end) of a batch as a constant [B, N, lookback, 3] tensor.
ad::Var batch_inputs(const WindowBatch& batch, std::size_t begin, std::size_t end);
std::vector<double> batch_targets(const WindowBatch& batch, std::size_t begin, std::size_t end);

/// Differentiable forward pass. inputs is [B, N, lookback, 3] with features
/// (demand, price, temperature); the result is [B, N, H].
ad::Var forward_graph(const ModelConfig& config, const ParamBinder& params, const ad::Var& inputs,
                      const layers::AttentionTopology& topology, layers::ForwardContext& ctx);

/// Evaluation-mode predictions for every sample, [S, N, H] flattened. Noise is
/// zero and dropout off, so the result is a pure function of its arguments.
std::vector<double> predict(const ModelState& state, const WindowBatch& batch, const RegionStructure& structure,
                            std::size_t chunk = 64);

/// Named tensors behind a JSON header. Layout: "EVCPCKPT", u32 version, u64
/// header length, header JSON, u64 tensor count, then per tensor u32 name
/// length, name, u32 rank, u64 dims, f64 little-endian values; finally the
/// 64-bit FNV-1a hash of everything before it. Writes go through a temporary
/// file and a rename.
void save_tensor_file(const std::filesystem::path& path, const nlohmann::json& header,
                      const ParameterSet& tensors);
std::pair<nlohmann::json, ParameterSet> load_tensor_file(const std::filesystem::path& path);

/// Header records the config, feature order, seed lineage and `extra`.
void save_checkpoint(const std::filesystem::path& path, const ModelState& state,
                     const nlohmann::json& extra = nlohmann::json::object());
ModelState load_checkpoint(const std::filesystem::path& path);
/// Loads and audits the tensors against `expected` instead of the stored config.
ModelState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace evcp
