#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evcp/dataset.hpp"
#include "evcp/model.hpp"
#include "evcp/region_features.hpp"
#include "evcp/training.hpp"

namespace evcp {

struct HorizonMetrics {
  int horizon = 0;
  std::size_t count = 0;
  double rmse = 0.0;
  double mae = 0.0;
  /// Undefined (nullopt) when the horizon's targets have zero variance.
  std::optional<double> rae;
  std::optional<double> r2;
};

struct MetricReport {
  std::vector<HorizonMetrics> horizons;
  double avg_rmse = 0.0;
  double avg_mae = 0.0;
  std::optional<double> avg_rae;
  std::optional<double> avg_r2;
  std::size_t samples = 0;
  std::size_t areas = 0;
};

/// Pooled over every (sample, area) pair of each horizon slice; pred and
/// target are [S, N, H] flattened.
MetricReport metrics(std::span<const double> pred, std::span<const double> target, std::size_t samples,
                     std::size_t areas, std::span<const int> horizons);
MetricReport metrics(std::span<const double> pred, const WindowBatch& batch);

/// Last observed demand of each window, repeated for every horizon.
std::vector<double> persistence_baseline(const WindowBatch& batch);

enum class Variant {
  full,
  no_module_a,
  no_module_b,
  no_module_c,
  no_price,
  no_temperature,
  no_var_sel,
  softmax_instead_of_gumbel,
};

const std::vector<Variant>& all_variants();
std::string variant_name(Variant v);
/// Throws ErrorKind::config for an unknown id.
Variant parse_variant(const std::string& id);
/// The base config with this variant's single toggle applied.
ModelConfig apply_variant(ModelConfig base, Variant v);

/// Windows and structure shared by every training run of an experiment.
struct ExperimentData {
  WindowBatch train;
  WindowBatch val;
  WindowBatch test;
  RegionStructure structure;
};

struct AblationRow {
  Variant variant = Variant::full;
  MetricReport report;
  TrainHistory history;
};

/// Trains each variant from init_model(variant config, seed) with the given
/// training config and reports test metrics.
std::vector<AblationRow> run_ablation(std::span<const Variant> variants, const ExperimentData& data,
                                      const ModelConfig& base, const TrainConfig& train_config, std::uint64_t seed);

nlohmann::json report_json(const MetricReport& report);
/// {label: {horizon: {metric: value}}, ...}; averages live under "average".
nlohmann::json metrics_table_json(const std::vector<std::pair<std::string, MetricReport>>& rows);
/// label,horizon,metric,value rows; undefined values are empty.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, MetricReport>>& rows);

/// Table-style text block with metrics scaled by 100.
std::string format_report(const std::string& label, const MetricReport& report, int step_minutes);

}  // namespace evcp
