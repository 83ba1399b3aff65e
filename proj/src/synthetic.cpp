#include "evcp/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "evcp/error.hpp"

namespace evcp {

namespace fs = std::filesystem;

namespace {

// Time-of-use tariff (currency per kWh) by hour of day.
double tariff(double hour) {
  if (hour < 8.0) return 0.6;
  if ((hour >= 10.0 && hour < 12.0) || (hour >= 14.0 && hour < 19.0)) return 1.4;
  return 1.0;
}

double temperature_at(double minute) {
  const double day = minute / 1440.0;
  // Daily cycle peaking mid-afternoon plus a slow multi-day drift.
  return 29.0 + 3.5 * std::sin(2.0 * std::numbers::pi * (day - 0.375)) +
         1.5 * std::sin(2.0 * std::numbers::pi * day / 7.0);
}

}  // namespace

void validate(const SynthConfig& c) {
  require(c.areas >= 4, ErrorKind::config, "synthetic: need at least 4 areas");
  require(c.groups >= 2 && c.groups <= c.areas, ErrorKind::config, "synthetic: groups must be in [2, areas]");
  require(c.lookback >= 1 && c.steps >= 10 * c.lookback, ErrorKind::config,
          "synthetic: steps must be at least 10 x lookback");
  require(c.step_minutes > 0 && 30 % c.step_minutes == 0, ErrorKind::config,
          "synthetic: step_minutes must divide 30");
  require(c.noise >= 0.0 && c.poi_noise >= 0.0 && c.poi_noise <= 1.0, ErrorKind::config,
          "synthetic: noise must be >= 0 and poi_noise in [0, 1]");
  require(c.categories >= c.groups, ErrorKind::config, "synthetic: need at least one category per group");
  require(c.pois_per_area >= 1.0, ErrorKind::config, "synthetic: pois_per_area must be >= 1");
}

SyntheticDataset generate_synthetic(const SynthConfig& c, std::uint64_t seed) {
  validate(c);
  std::mt19937_64 rng(seed);
  SyntheticDataset out;
  const std::size_t n = c.areas;
  const std::size_t g_count = c.groups;

  // Grid layout, filled row-major; groups are contiguous runs of areas.
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  out.groups.resize(n);
  for (std::size_t a = 0; a < n; ++a) out.groups[a] = a * g_count / n;
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t r = a / cols, col = a % cols;
    if (col + 1 < cols && a + 1 < n) out.adjacency.emplace_back(a, a + 1);
    if (a + cols < n) out.adjacency.emplace_back(a, a + cols);
    (void)r;
  }

  out.demand.step_minutes = c.step_minutes;
  out.demand.start_minute = c.start_minute;
  for (std::size_t a = 0; a < n; ++a) out.demand.area_ids.push_back("A" + std::to_string(a + 1));

  // Temperature sampled every 30 minutes, one sample past the end so the
  // interpolation never has to hold.
  const double last_minute = static_cast<double>((c.steps - 1) * static_cast<std::size_t>(c.step_minutes));
  for (double m = 0.0; m <= last_minute + 30.0; m += 30.0)
    out.temperature_samples.push_back({static_cast<double>(c.start_minute) + m, temperature_at(m)});
  const auto temp = interpolate_linear(out.temperature_samples, c.step_minutes,
                                       static_cast<double>(c.start_minute), c.steps);

  out.covariates.price = Matrix(n, c.steps);
  out.covariates.temperature = Matrix(n, c.steps);
  out.demand.values = Matrix(n, c.steps);

  std::vector<double> phase(g_count), base(g_count), price_sensitivity(g_count), temp_sensitivity(g_count);
  for (std::size_t g = 0; g < g_count; ++g) {
    phase[g] = 2.0 * std::numbers::pi * static_cast<double>(g) / static_cast<double>(g_count);
    base[g] = 0.35 + 0.2 * static_cast<double>(g) / static_cast<double>(g_count - 1);
    price_sensitivity[g] = c.price_effect * (1.0 + static_cast<double>(g % 2));
    temp_sensitivity[g] = c.temperature_effect * (g % 2 == 0 ? 1.0 : -1.0);
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t t = 0; t < c.steps; ++t) {
    const double minute = static_cast<double>(t * static_cast<std::size_t>(c.step_minutes));
    const double day_frac = std::fmod(minute, 1440.0) / 1440.0;
    const double price = tariff(day_frac * 24.0);
    const double temp_dev = (temp[t] - 29.0) / 3.5;
    std::vector<double> profile(g_count);
    for (std::size_t g = 0; g < g_count; ++g) {
      const double x = 2.0 * std::numbers::pi * day_frac + phase[g];
      profile[g] = base[g] + 0.22 * std::sin(x) + 0.07 * std::sin(2.0 * x + 0.5) -
                   price_sensitivity[g] * (price - 1.0) + temp_sensitivity[g] * temp_dev;
    }
    for (std::size_t a = 0; a < n; ++a) {
      double v = profile[out.groups[a]];
      if (c.noise > 0.0) v += c.noise * gauss(rng);
      out.demand.values(a, t) = std::clamp(v, 0.0, 1.0);
      out.covariates.price(a, t) = price;
      out.covariates.temperature(a, t) = temp[t];
    }
  }

  // POI mixes: each group favours its own categories five to one.
  out.poi.area_ids = out.demand.area_ids;
  for (std::size_t k = 0; k < c.categories; ++k) out.poi.categories.push_back("category_" + std::to_string(k + 1));
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t g = out.groups[a];
    double total_weight = 0.0;
    std::vector<double> w(c.categories);
    for (std::size_t k = 0; k < c.categories; ++k) {
      w[k] = (k % g_count == g) ? 5.0 : 1.0;
      total_weight += w[k];
    }
    for (std::size_t k = 0; k < c.categories; ++k) {
      const double expected = c.pois_per_area * w[k] / total_weight;
      auto count = static_cast<std::int64_t>(std::llround((1.0 - c.poi_noise) * expected));
      if (c.poi_noise > 0.0) {
        std::poisson_distribution<std::int64_t> pois(c.poi_noise * expected);
        count += pois(rng);
      }
      out.poi.counts.push_back(count);
    }
  }
  return out;
}

fs::path write_synthetic_bundle(const fs::path& dir, const SyntheticDataset& data) {
  fs::create_directories(dir);
  DatasetDescriptor d;
  d.demand = dir / "demand.csv";
  d.price = dir / "price.csv";
  d.temperature = dir / "temperature.csv";
  d.poi = dir / "poi.csv";
  d.adjacency = dir / "adjacency.txt";
  d.groups = dir / "groups.csv";
  d.step_minutes = data.demand.step_minutes;

  write_table(d.demand, data.demand.area_ids, data.demand.values, data.demand.start_minute,
              data.demand.step_minutes);
  const std::vector<std::string> city{"city"};
  Matrix price(1, data.demand.steps());
  std::copy(data.covariates.price.row(0).begin(), data.covariates.price.row(0).end(), price.row(0).begin());
  write_table(d.price, city, price, data.demand.start_minute, data.demand.step_minutes);
  Matrix temp(1, data.temperature_samples.size());
  for (std::size_t k = 0; k < data.temperature_samples.size(); ++k) temp(0, k) = data.temperature_samples[k].value;
  write_table(d.temperature, city, temp, static_cast<std::int64_t>(data.temperature_samples.front().minute), 30);
  write_poi_csv(d.poi, data.poi);
  write_adjacency(d.adjacency, data.adjacency, data.demand.area_ids);
  write_labels_csv(d.groups, data.demand.area_ids, data.groups);
  const fs::path descriptor = dir / "dataset.json";
  write_descriptor(descriptor, d);
  return descriptor;
}

}  // namespace evcp
