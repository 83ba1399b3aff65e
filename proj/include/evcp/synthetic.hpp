#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "evcp/dataset.hpp"
#include "evcp/region_features.hpp"

namespace evcp {

/// Desk-scale stand-in for a city: areas on a grid, partitioned into latent
/// groups that share a daily occupancy profile and a POI mix.
struct SynthConfig {
  std::size_t areas = 20;
  std::size_t groups = 3;
  std::size_t steps = 4032;
  int step_minutes = 5;
  std::size_t lookback = 12;
  /// Standard deviation of i.i.d. Gaussian occupancy noise.
  double noise = 0.03;
  /// Fraction of each expected POI count that is drawn from a Poisson law.
  double poi_noise = 0.0;
  std::size_t categories = 14;
  double pois_per_area = 400.0;
  std::int64_t start_minute = 0;
  /// Occupancy response to the (unscaled) tariff and temperature.
  double price_effect = 0.08;
  double temperature_effect = 0.03;
};

struct SyntheticDataset {
  DemandSeries demand;
  CovariateSeries covariates;
  /// Citywide temperature at 30-minute resolution; covariates.temperature is
  /// its interpolation onto the demand grid.
  std::vector<TimedSample> temperature_samples;
  PoiCorpus poi;
  std::vector<std::pair<std::size_t, std::size_t>> adjacency;
  std::vector<std::size_t> groups;
};

void validate(const SynthConfig& config);

SyntheticDataset generate_synthetic(const SynthConfig& config, std::uint64_t seed);

/// Writes demand.csv, price.csv, temperature.csv (30-minute steps), poi.csv,
/// adjacency.txt, groups.csv and dataset.json into `dir`; returns the
/// descriptor path.
std::filesystem::path write_synthetic_bundle(const std::filesystem::path& dir, const SyntheticDataset& data);

}  // namespace evcp
