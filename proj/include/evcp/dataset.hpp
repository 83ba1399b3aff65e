#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evcp/matrix.hpp"

namespace evcp {

/// Per-area occupancy ratio on a regular grid. values is [areas x steps].
struct DemandSeries {
  std::vector<std::string> area_ids;
  Matrix values;
  int step_minutes = 5;
  /// Minutes since 1970-01-01 00:00 of the first step.
  std::int64_t start_minute = 0;

  std::size_t areas() const { return values.rows; }
  std::size_t steps() const { return values.cols; }
};

/// Dynamic covariates on the demand grid, [areas x steps] each.
struct CovariateSeries {
  Matrix price;
  Matrix temperature;
};

enum class Orientation { time_major, area_major };

/// Describes where a dataset lives. Relative paths are resolved against the
/// descriptor's directory by read_descriptor().
struct DatasetDescriptor {
  std::filesystem::path demand;
  std::filesystem::path price;
  std::filesystem::path temperature;
  std::filesystem::path poi;
  std::filesystem::path adjacency;
  std::filesystem::path groups;  // optional ground-truth labels
  int step_minutes = 5;
  Orientation orientation = Orientation::time_major;
  std::vector<int> horizons{3, 6, 9, 12};
};

DatasetDescriptor read_descriptor(const std::filesystem::path& path);
void write_descriptor(const std::filesystem::path& path, const DatasetDescriptor& descriptor);

struct LoadOptions {
  int step_minutes = 5;
  Orientation orientation = Orientation::time_major;
};

/// Reads and validates demand, price and temperature tables. Covariates with a
/// coarser grid are linearly interpolated onto the demand grid; a single
/// covariate column is broadcast to every area.
std::pair<DemandSeries, CovariateSeries> load_dataset(const std::filesystem::path& demand_path,
                                                      const std::filesystem::path& price_path,
                                                      const std::filesystem::path& temperature_path,
                                                      const LoadOptions& options = {});
std::pair<DemandSeries, CovariateSeries> load_dataset(const DatasetDescriptor& descriptor);

/// Writes a table in the layout load_dataset() reads. Values are printed with
/// round-trip precision.
void write_table(const std::filesystem::path& path, std::span<const std::string> column_ids,
                 const Matrix& values, std::int64_t start_minute, int step_minutes,
                 Orientation orientation = Orientation::time_major);

/// Timestamp helpers: "YYYY-MM-DD HH:MM[:SS]" (or with a 'T'), or a plain
/// number of minutes.
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t minute);

struct TimedSample {
  double minute;
  double value;
};

/// Piecewise-linear resampling onto `count` points starting at `origin_minute`
/// spaced `step_minutes` apart. Sample values are reproduced exactly at sample
/// times and held constant after the last sample. Throws insufficient_data for
/// fewer than two samples and alignment if the grid starts before the first
/// sample.
std::vector<double> interpolate_linear(std::span<const TimedSample> samples, double step_minutes,
                                       double origin_minute, std::size_t count);
/// Grid from the first to the last sample.
std::vector<double> interpolate_linear(std::span<const TimedSample> samples, double step_minutes);

/// Half-open index interval.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

struct SplitIndex {
  IndexRange train;
  IndexRange val;
  IndexRange test;
};

/// Chronological split; train and val lengths are floored, test takes the rest.
SplitIndex chronological_split(std::size_t steps, std::array<unsigned, 3> ratios = {6, 1, 3});

/// Sliding-window samples. inputs is [samples x areas x lookback x 3] with
/// features (demand, price, temperature); targets is [samples x areas x H].
struct WindowBatch {
  static constexpr std::size_t kFeatures = 3;

  std::size_t samples = 0;
  std::size_t areas = 0;
  std::size_t lookback = 0;
  std::vector<int> horizons;
  std::vector<double> inputs;
  std::vector<double> targets;
  /// Index of the last input step of each sample on the series grid.
  std::vector<std::size_t> anchors;

  std::size_t horizon_count() const { return horizons.size(); }
  double input(std::size_t s, std::size_t n, std::size_t t, std::size_t f) const {
    return inputs[((s * areas + n) * lookback + t) * kFeatures + f];
  }
  double target(std::size_t s, std::size_t n, std::size_t h) const {
    return targets[(s * areas + n) * horizons.size() + h];
  }
};

/// One sample per anchor t with t - lookback + 1 >= range.begin and
/// t + max(horizons) < range.end. Throws empty_batch when the range is too short.
WindowBatch make_windows(const DemandSeries& demand, const CovariateSeries& covariates,
                         IndexRange range, std::size_t lookback, std::span<const int> horizons);

/// Copies the listed samples, in order.
WindowBatch select_samples(const WindowBatch& batch, std::span<const std::size_t> indices);

struct NormStats {
  double min = 0.0;
  double max = 0.0;
  bool degenerate = false;

  double apply(double v) const { return degenerate ? 0.0 : (v - min) / (max - min); }
  double invert(double v) const { return degenerate ? min : min + v * (max - min); }
};

struct CovariateNorm {
  NormStats price;
  NormStats temperature;
};

/// Min-max scaling with statistics from the training range only. Values
/// outside that range map outside [0, 1]; no clamping.
std::pair<CovariateSeries, CovariateNorm> normalize_covariates(const CovariateSeries& covariates,
                                                               IndexRange train);

}  // namespace evcp
