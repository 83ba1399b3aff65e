#include "evcp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "evcp/error.hpp"

namespace evcp {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string_view rest = line;
  while (true) {
    const auto comma = rest.find(',');
    out.push_back(trim(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* first = text.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string location(const fs::path& path, std::size_t row, std::size_t column) {
  return path.string() + ": row " + std::to_string(row) + ", column " + std::to_string(column);
}

// A numeric table with one labelled axis (series ids) and one time axis.
struct Table {
  std::vector<std::string> ids;
  std::vector<std::int64_t> minutes;
  Matrix values;  // [ids x times]
  // File coordinates (1-based row, column) of values(i, t).
  Orientation orientation = Orientation::time_major;
  std::pair<std::size_t, std::size_t> file_position(std::size_t i, std::size_t t) const {
    return orientation == Orientation::time_major ? std::pair{t + 2, i + 2} : std::pair{i + 2, t + 2};
  }
};

Table read_table(const fs::path& path, Orientation orientation) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::parse,
          path.string() + ": row 1: missing header");
  const auto header = split_csv(line);
  require(header.size() >= 2, ErrorKind::parse,
          path.string() + ": row 1: header needs a label column and at least one data column");

  std::vector<std::vector<std::string>> rows;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    require(cells.size() == header.size(), ErrorKind::parse,
            path.string() + ": row " + std::to_string(row_no) + ": expected " +
                std::to_string(header.size()) + " columns, found " + std::to_string(cells.size()));
    rows.push_back(std::move(cells));
  }
  require(!rows.empty(), ErrorKind::parse, path.string() + ": no data rows");

  Table table;
  table.orientation = orientation;
  auto number = [&](const std::string& cell, std::size_t row, std::size_t col) {
    double v = 0.0;
    require(parse_double(cell, v) && std::isfinite(v), ErrorKind::parse,
            location(path, row, col) + ": not a finite number: '" + cell + "'");
    return v;
  };
  auto timestamp = [&](const std::string& cell, std::size_t row, std::size_t col) {
    try {
      return parse_timestamp(cell);
    } catch (const Error&) {
      raise(ErrorKind::parse, location(path, row, col) + ": bad timestamp '" + cell + "'");
    }
  };

  if (orientation == Orientation::time_major) {
    table.ids.assign(header.begin() + 1, header.end());
    table.values = Matrix(table.ids.size(), rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      table.minutes.push_back(timestamp(rows[t][0], t + 2, 1));
      for (std::size_t i = 0; i < table.ids.size(); ++i)
        table.values(i, t) = number(rows[t][i + 1], t + 2, i + 2);
    }
  } else {
    for (std::size_t c = 1; c < header.size(); ++c) table.minutes.push_back(timestamp(header[c], 1, c + 1));
    table.values = Matrix(rows.size(), header.size() - 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      table.ids.push_back(rows[i][0]);
      for (std::size_t t = 0; t + 1 < header.size(); ++t)
        table.values(i, t) = number(rows[i][t + 1], i + 2, t + 2);
    }
  }
  std::set<std::string> unique(table.ids.begin(), table.ids.end());
  require(unique.size() == table.ids.size(), ErrorKind::parse, path.string() + ": duplicate series ids");
  for (std::size_t t = 1; t < table.minutes.size(); ++t)
    require(table.minutes[t] > table.minutes[t - 1], ErrorKind::alignment,
            path.string() + ": timestamps must be strictly increasing (position " + std::to_string(t + 1) + ")");
  return table;
}

// Resamples a covariate table onto the demand grid and broadcasts or reorders
// its columns to match the demand areas.
Matrix align_covariate(const Table& table, const fs::path& path, const DemandSeries& demand) {
  const std::size_t steps = demand.steps();
  std::vector<std::size_t> source(demand.areas());
  if (table.ids.size() == 1) {
    std::fill(source.begin(), source.end(), 0);
  } else {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < table.ids.size(); ++i) index[table.ids[i]] = i;
    require(table.ids.size() == demand.areas(), ErrorKind::alignment,
            path.string() + ": has " + std::to_string(table.ids.size()) + " series; expected 1 or " +
                std::to_string(demand.areas()));
    for (std::size_t n = 0; n < demand.areas(); ++n) {
      auto it = index.find(demand.area_ids[n]);
      require(it != index.end(), ErrorKind::alignment,
              path.string() + ": no column for area " + demand.area_ids[n]);
      source[n] = it->second;
    }
  }

  bool same_grid = table.minutes.size() == steps;
  for (std::size_t t = 0; same_grid && t < steps; ++t)
    same_grid = table.minutes[t] == demand.start_minute + static_cast<std::int64_t>(t) * demand.step_minutes;

  std::vector<std::vector<double>> resampled(table.ids.size());
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    if (same_grid) {
      auto r = table.values.row(i);
      resampled[i].assign(r.begin(), r.end());
      continue;
    }
    std::vector<TimedSample> samples;
    for (std::size_t t = 0; t < table.minutes.size(); ++t)
      samples.push_back({static_cast<double>(table.minutes[t]), table.values(i, t)});
    try {
      resampled[i] = interpolate_linear(samples, demand.step_minutes,
                                        static_cast<double>(demand.start_minute), steps);
    } catch (const Error& e) {
      raise(e.kind() == ErrorKind::insufficient_data ? ErrorKind::alignment : e.kind(),
            path.string() + ": cannot align with the demand grid: " + e.what());
    }
  }
  Matrix out(demand.areas(), steps);
  for (std::size_t n = 0; n < demand.areas(); ++n)
    std::copy(resampled[source[n]].begin(), resampled[source[n]].end(), out.row(n).begin());
  return out;
}

const char* orientation_name(Orientation o) {
  return o == Orientation::time_major ? "time_major" : "area_major";
}

}  // namespace

std::int64_t parse_timestamp(const std::string& text) {
  double numeric = 0.0;
  if (parse_double(text, numeric)) {
    require(std::floor(numeric) == numeric, ErrorKind::parse, "timestamp must be whole minutes: " + text);
    return static_cast<std::int64_t>(numeric);
  }
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int fields = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  require(fields >= 6 && (sep == ' ' || sep == 'T'), ErrorKind::parse, "bad timestamp: " + text);
  std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty()) {
    require(std::sscanf(rest.c_str(), ":%d", &s) == 1 && s == 0, ErrorKind::parse,
            "timestamp must be whole minutes: " + text);
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  require(ymd.ok() && h >= 0 && h < 24 && mi >= 0 && mi < 60, ErrorKind::parse, "bad timestamp: " + text);
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 1440 + h * 60 + mi;
}

std::string format_timestamp(std::int64_t minute) {
  using namespace std::chrono;
  std::int64_t days = minute >= 0 ? minute / 1440 : -((-minute + 1439) / 1440);
  const std::int64_t rem = minute - days * 1440;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 60), static_cast<int>(rem % 60));
  return buf;
}

std::vector<double> interpolate_linear(std::span<const TimedSample> samples, double step_minutes,
                                       double origin_minute, std::size_t count) {
  require(samples.size() >= 2, ErrorKind::insufficient_data,
          "linear interpolation needs at least 2 samples, got " + std::to_string(samples.size()));
  require(step_minutes > 0.0, ErrorKind::domain, "interpolation step must be positive");
  for (std::size_t i = 1; i < samples.size(); ++i)
    require(samples[i].minute > samples[i - 1].minute, ErrorKind::alignment,
            "sample times must be strictly increasing");
  require(origin_minute >= samples.front().minute, ErrorKind::alignment,
          "output grid starts before the first sample");

  std::vector<double> out(count);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = origin_minute + static_cast<double>(k) * step_minutes;
    if (t >= samples.back().minute) {
      out[k] = samples.back().value;
      continue;
    }
    while (samples[seg + 1].minute <= t) ++seg;
    const auto& a = samples[seg];
    const auto& b = samples[seg + 1];
    if (t == a.minute) {
      out[k] = a.value;
    } else {
      out[k] = a.value + (b.value - a.value) * (t - a.minute) / (b.minute - a.minute);
    }
  }
  return out;
}

std::vector<double> interpolate_linear(std::span<const TimedSample> samples, double step_minutes) {
  require(samples.size() >= 2, ErrorKind::insufficient_data,
          "linear interpolation needs at least 2 samples, got " + std::to_string(samples.size()));
  const double span_minutes = samples.back().minute - samples.front().minute;
  const auto count = static_cast<std::size_t>(std::floor(span_minutes / step_minutes)) + 1;
  return interpolate_linear(samples, step_minutes, samples.front().minute, count);
}

std::pair<DemandSeries, CovariateSeries> load_dataset(const fs::path& demand_path, const fs::path& price_path,
                                                      const fs::path& temperature_path,
                                                      const LoadOptions& options) {
  for (const auto& p : {demand_path, price_path, temperature_path})
    require(fs::exists(p), ErrorKind::io, "missing input file: " + p.string());
  require(options.step_minutes > 0, ErrorKind::config, "step_minutes must be positive");

  const Table table = read_table(demand_path, options.orientation);
  DemandSeries demand;
  demand.area_ids = table.ids;
  demand.values = table.values;
  demand.step_minutes = options.step_minutes;
  demand.start_minute = table.minutes.front();
  for (std::size_t t = 1; t < table.minutes.size(); ++t)
    require(table.minutes[t] - table.minutes[t - 1] == options.step_minutes, ErrorKind::alignment,
            demand_path.string() + ": step " + std::to_string(t + 1) + " is not on the " +
                std::to_string(options.step_minutes) + "-minute grid");

  std::vector<std::string> offenders;
  std::size_t offender_count = 0;
  for (std::size_t n = 0; n < demand.areas(); ++n)
    for (std::size_t t = 0; t < demand.steps(); ++t) {
      const double v = demand.values(n, t);
      if (v >= 0.0 && v <= 1.0) continue;
      if (++offender_count <= 20) {
        const auto [row, col] = table.file_position(n, t);
        std::ostringstream os;
        os << "row " << row << ", column " << col << " (area " << demand.area_ids[n] << "): " << v;
        offenders.push_back(os.str());
      }
    }
  if (offender_count > 0) {
    std::string msg = demand_path.string() + ": " + std::to_string(offender_count) +
                      " occupancy value(s) outside [0, 1]:";
    for (const auto& o : offenders) msg += "\n  " + o;
    if (offender_count > offenders.size()) msg += "\n  ...";
    raise(ErrorKind::validation, msg);
  }

  CovariateSeries cov;
  cov.price = align_covariate(read_table(price_path, options.orientation), price_path, demand);
  cov.temperature = align_covariate(read_table(temperature_path, options.orientation), temperature_path, demand);
  return {std::move(demand), std::move(cov)};
}

std::pair<DemandSeries, CovariateSeries> load_dataset(const DatasetDescriptor& d) {
  return load_dataset(d.demand, d.price, d.temperature, LoadOptions{d.step_minutes, d.orientation});
}

DatasetDescriptor read_descriptor(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open dataset descriptor " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, path.string() + ": " + e.what());
  }
  require(j.is_object(), ErrorKind::parse, path.string() + ": descriptor must be a JSON object");
  static const std::set<std::string> known{"demand", "price", "temperature", "poi", "adjacency",
                                           "groups", "step_minutes", "orientation", "horizons"};
  for (const auto& [key, value] : j.items())
    require(known.count(key) != 0, ErrorKind::config, path.string() + ": unknown key '" + key + "'");

  const fs::path base = path.parent_path();
  auto resolve = [&](const char* key, bool required) -> fs::path {
    if (!j.contains(key)) {
      require(!required, ErrorKind::config, path.string() + ": missing key '" + std::string(key) + "'");
      return {};
    }
    fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  DatasetDescriptor d;
  try {
    d.demand = resolve("demand", true);
    d.price = resolve("price", true);
    d.temperature = resolve("temperature", true);
    d.poi = resolve("poi", false);
    d.adjacency = resolve("adjacency", false);
    d.groups = resolve("groups", false);
    d.step_minutes = j.value("step_minutes", 5);
    const std::string orientation = j.value("orientation", std::string("time_major"));
    require(orientation == "time_major" || orientation == "area_major", ErrorKind::config,
            path.string() + ": orientation must be time_major or area_major");
    d.orientation = orientation == "time_major" ? Orientation::time_major : Orientation::area_major;
    if (j.contains("horizons")) d.horizons = j.at("horizons").get<std::vector<int>>();
  } catch (const json::exception& e) {
    raise(ErrorKind::config, path.string() + ": " + e.what());
  }
  return d;
}

void write_descriptor(const fs::path& path, const DatasetDescriptor& d) {
  auto rel = [&](const fs::path& p) { return p.lexically_relative(path.parent_path()).generic_string(); };
  json j;
  j["demand"] = rel(d.demand);
  j["price"] = rel(d.price);
  j["temperature"] = rel(d.temperature);
  if (!d.poi.empty()) j["poi"] = rel(d.poi);
  if (!d.adjacency.empty()) j["adjacency"] = rel(d.adjacency);
  if (!d.groups.empty()) j["groups"] = rel(d.groups);
  j["step_minutes"] = d.step_minutes;
  j["orientation"] = orientation_name(d.orientation);
  j["horizons"] = d.horizons;
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_table(const fs::path& path, std::span<const std::string> column_ids, const Matrix& values,
                 std::int64_t start_minute, int step_minutes, Orientation orientation) {
  require(column_ids.size() == values.rows, ErrorKind::shape, "write_table: id count does not match rows");
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  auto stamp = [&](std::size_t t) {
    return format_timestamp(start_minute + static_cast<std::int64_t>(t) * step_minutes);
  };
  if (orientation == Orientation::time_major) {
    out << "time";
    for (const auto& id : column_ids) out << ',' << id;
    out << '\n';
    for (std::size_t t = 0; t < values.cols; ++t) {
      out << stamp(t);
      for (std::size_t i = 0; i < values.rows; ++i) out << ',' << num(values(i, t));
      out << '\n';
    }
  } else {
    out << "area_id";
    for (std::size_t t = 0; t < values.cols; ++t) out << ',' << stamp(t);
    out << '\n';
    for (std::size_t i = 0; i < values.rows; ++i) {
      out << column_ids[i];
      for (std::size_t t = 0; t < values.cols; ++t) out << ',' << num(values(i, t));
      out << '\n';
    }
  }
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

SplitIndex chronological_split(std::size_t steps, std::array<unsigned, 3> ratios) {
  require(steps >= 10, ErrorKind::insufficient_data,
          "chronological split needs at least 10 steps, got " + std::to_string(steps));
  const unsigned total = ratios[0] + ratios[1] + ratios[2];
  require(total > 0 && ratios[0] > 0, ErrorKind::config, "split ratios must be positive");
  const std::size_t train = steps * ratios[0] / total;
  const std::size_t val = steps * ratios[1] / total;
  return {{0, train}, {train, train + val}, {train + val, steps}};
}

WindowBatch make_windows(const DemandSeries& demand, const CovariateSeries& cov, IndexRange range,
                         std::size_t lookback, std::span<const int> horizons) {
  require(lookback >= 1, ErrorKind::config, "lookback must be at least 1");
  require(!horizons.empty(), ErrorKind::config, "at least one horizon is required");
  for (int h : horizons) require(h >= 1, ErrorKind::config, "horizon offsets must be positive");
  require(range.end <= demand.steps() && range.begin <= range.end, ErrorKind::reference,
          "window range exceeds the series");
  require(cov.price.rows == demand.areas() && cov.price.cols == demand.steps() &&
              cov.temperature.rows == demand.areas() && cov.temperature.cols == demand.steps(),
          ErrorKind::alignment, "covariates do not match the demand grid");
  const auto max_h = static_cast<std::size_t>(*std::max_element(horizons.begin(), horizons.end()));
  require(range.size() >= lookback + max_h, ErrorKind::empty_batch,
          "range of " + std::to_string(range.size()) + " steps is too short for lookback " +
              std::to_string(lookback) + " and horizon " + std::to_string(max_h));

  WindowBatch b;
  b.samples = range.size() - lookback - max_h + 1;
  b.areas = demand.areas();
  b.lookback = lookback;
  b.horizons.assign(horizons.begin(), horizons.end());
  b.inputs.resize(b.samples * b.areas * lookback * WindowBatch::kFeatures);
  b.targets.resize(b.samples * b.areas * horizons.size());
  for (std::size_t s = 0; s < b.samples; ++s) {
    const std::size_t anchor = range.begin + lookback - 1 + s;
    b.anchors.push_back(anchor);
    for (std::size_t n = 0; n < b.areas; ++n) {
      for (std::size_t t = 0; t < lookback; ++t) {
        const std::size_t step = anchor + 1 - lookback + t;
        double* dst = &b.inputs[((s * b.areas + n) * lookback + t) * WindowBatch::kFeatures];
        dst[0] = demand.values(n, step);
        dst[1] = cov.price(n, step);
        dst[2] = cov.temperature(n, step);
      }
      for (std::size_t h = 0; h < horizons.size(); ++h)
        b.targets[(s * b.areas + n) * horizons.size() + h] =
            demand.values(n, anchor + static_cast<std::size_t>(horizons[h]));
    }
  }
  return b;
}

WindowBatch select_samples(const WindowBatch& batch, std::span<const std::size_t> indices) {
  WindowBatch out;
  out.samples = indices.size();
  out.areas = batch.areas;
  out.lookback = batch.lookback;
  out.horizons = batch.horizons;
  const std::size_t in_stride = batch.areas * batch.lookback * WindowBatch::kFeatures;
  const std::size_t out_stride = batch.areas * batch.horizons.size();
  out.inputs.resize(indices.size() * in_stride);
  out.targets.resize(indices.size() * out_stride);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t s = indices[k];
    require(s < batch.samples, ErrorKind::reference, "sample index out of range");
    std::copy_n(batch.inputs.begin() + static_cast<std::ptrdiff_t>(s * in_stride), in_stride,
                out.inputs.begin() + static_cast<std::ptrdiff_t>(k * in_stride));
    std::copy_n(batch.targets.begin() + static_cast<std::ptrdiff_t>(s * out_stride), out_stride,
                out.targets.begin() + static_cast<std::ptrdiff_t>(k * out_stride));
    if (!batch.anchors.empty()) out.anchors.push_back(batch.anchors[s]);
  }
  return out;
}

namespace {

NormStats fit_minmax(const Matrix& m, IndexRange train) {
  NormStats s;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < m.rows; ++n)
    for (std::size_t t = train.begin; t < train.end; ++t) {
      s.min = std::min(s.min, m(n, t));
      s.max = std::max(s.max, m(n, t));
    }
  s.degenerate = !(s.max > s.min);
  return s;
}

Matrix apply_minmax(const Matrix& m, const NormStats& s) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = s.apply(m.data[i]);
  return out;
}

}  // namespace

std::pair<CovariateSeries, CovariateNorm> normalize_covariates(const CovariateSeries& cov, IndexRange train) {
  require(train.size() > 0, ErrorKind::insufficient_data, "training range is empty");
  require(train.end <= cov.price.cols && train.end <= cov.temperature.cols, ErrorKind::reference,
          "training range exceeds the covariate series");
  CovariateNorm norm{fit_minmax(cov.price, train), fit_minmax(cov.temperature, train)};
  CovariateSeries out{apply_minmax(cov.price, norm.price), apply_minmax(cov.temperature, norm.temperature)};
  return {std::move(out), norm};
}

}  // namespace evcp
