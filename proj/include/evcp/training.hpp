#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evcp/dataset.hpp"
#include "evcp/model.hpp"
#include "evcp/parameters.hpp"
#include "evcp/region_features.hpp"

namespace evcp {

struct TrainConfig {
  std::size_t max_epochs = 2000;
  std::size_t patience = 50;
  std::size_t batch_size = 512;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm ceiling; 0 disables clipping.
  double clip_norm = 5.0;
  /// Samples per forward pass inside a mini-batch. Only bounds memory: the
  /// accumulated gradient equals the full-batch gradient.
  std::size_t chunk_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// SplitMix64 over the base seed and a path of integers.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

/// Mean of squared differences; sizes must match.
double mse_loss(std::span<const double> pred, std::span<const double> target);

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One bias-corrected Adam update at step t >= 1. Tensors absent from `grads`
/// see a zero gradient. A non-finite gradient raises ErrorKind::numeric naming
/// the tensor, before anything is modified.
void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, std::size_t t,
               const TrainConfig& config);

/// Rescales grads in place when their global L2 norm exceeds max_norm.
/// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
  std::size_t clipped_steps = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
};

nlohmann::json history_json(const TrainHistory& history);
TrainHistory history_from_json(const nlohmann::json& j);
/// epoch,train_loss,val_loss,clipped_steps. Wall-clock time is left out of
/// history files so reruns compare byte for byte; it goes to the timing file.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);
/// epoch,seconds
void write_timing_csv(const std::filesystem::path& path, const TrainHistory& history);

/// Everything needed to continue an interrupted run.
struct TrainState {
  ModelState model;
  ModelState best;
  AdamState adam;
  std::size_t step = 0;
  TrainHistory history;
};

TrainState initial_train_state(const ModelState& model);
void save_train_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path);

using EpochCallback = std::function<void(const TrainState&)>;

/// Mini-batch Adam on MSE with per-epoch shuffling, validation after every
/// epoch and early stopping on validation loss. Shuffles, dropout masks and
/// Gumbel draws derive from (seed, epoch, batch, chunk), so a resumed run
/// follows the same trajectory as an uninterrupted one. Returns the final
/// state; state.best holds the best-validation snapshot.
TrainState train(TrainState state, const WindowBatch& train_data, const WindowBatch& val_data,
                 const RegionStructure& structure, const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainState train(const ModelState& model, const WindowBatch& train_data, const WindowBatch& val_data,
                 const RegionStructure& structure, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Evaluation-mode MSE over a whole batch.
double evaluate_loss(const ModelState& model, const WindowBatch& data, const RegionStructure& structure,
                     std::size_t chunk = 64);

}  // namespace evcp
