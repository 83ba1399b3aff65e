#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "evcp/dataset.hpp"
#include "evcp/error.hpp"
#include "test_support.hpp"

using namespace evcp;
namespace fs = std::filesystem;

namespace {

DemandSeries small_demand(std::size_t areas, std::size_t steps) {
  DemandSeries d;
  for (std::size_t a = 0; a < areas; ++a) d.area_ids.push_back("A" + std::to_string(a));
  d.values = Matrix(areas, steps);
  for (std::size_t a = 0; a < areas; ++a)
    for (std::size_t t = 0; t < steps; ++t) d.values(a, t) = 0.01 * static_cast<double>((a * 7 + t) % 90);
  d.start_minute = parse_timestamp("2022-06-01 00:00");
  return d;
}

struct Files {
  fs::path demand, price, temperature;
};

Files write_inputs(const fs::path& dir, const DemandSeries& d) {
  Files f{dir / "demand.csv", dir / "price.csv", dir / "temperature.csv"};
  write_table(f.demand, d.area_ids, d.values, d.start_minute, 5);
  Matrix price(1, d.steps());
  for (std::size_t t = 0; t < d.steps(); ++t) price(0, t) = t % 2 ? 1.5 : 0.5;
  const std::string city[] = {"city"};
  write_table(f.price, city, price, d.start_minute, 5);
  // Temperature every 30 minutes, covering the demand grid.
  const std::size_t coarse = d.steps() / 6 + 2;
  Matrix temp(1, coarse);
  for (std::size_t t = 0; t < coarse; ++t) temp(0, t) = 20.0 + static_cast<double>(t);
  write_table(f.temperature, city, temp, d.start_minute, 30);
  return f;
}

}  // namespace

TEST(Dataset, RoundTripAndInterpolation) {
  TempDir dir;
  const auto d = small_demand(3, 24);
  const auto f = write_inputs(dir.path, d);
  const auto [demand, cov] = load_dataset(f.demand, f.price, f.temperature);
  EXPECT_EQ(demand.area_ids, d.area_ids);
  EXPECT_EQ(demand.values, d.values);
  EXPECT_EQ(demand.start_minute, d.start_minute);
  ASSERT_EQ(cov.price.rows, 3u);
  EXPECT_DOUBLE_EQ(cov.price(2, 1), 1.5);
  // 30-minute samples 20, 21, ... interpolated to 5-minute steps.
  EXPECT_DOUBLE_EQ(cov.temperature(0, 0), 20.0);
  EXPECT_DOUBLE_EQ(cov.temperature(1, 3), 20.5);
  EXPECT_DOUBLE_EQ(cov.temperature(2, 6), 21.0);
}

TEST(Dataset, AreaMajorOrientation) {
  TempDir dir;
  const auto d = small_demand(2, 12);
  const fs::path p = dir.path / "demand.csv";
  write_table(p, d.area_ids, d.values, d.start_minute, 5, Orientation::area_major);
  write_table(dir.path / "price.csv", d.area_ids, d.values, d.start_minute, 5, Orientation::area_major);
  write_table(dir.path / "temperature.csv", d.area_ids, d.values, d.start_minute, 5, Orientation::area_major);
  const auto [demand, cov] =
      load_dataset(p, dir.path / "price.csv", dir.path / "temperature.csv", {5, Orientation::area_major});
  EXPECT_EQ(demand.values, d.values);
  EXPECT_EQ(cov.temperature, d.values);
}

TEST(Dataset, OutOfRangeOccupancyCitesRow) {
  TempDir dir;
  auto d = small_demand(2, 30);
  d.values(1, 15) = 1.2;  // header is row 1, so step 15 sits on row 17
  const auto f = write_inputs(dir.path, d);
  try {
    load_dataset(f.demand, f.price, f.temperature);
    FAIL() << "expected a validation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
    EXPECT_NE(std::string(e.what()).find("row 17"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("A1"), std::string::npos) << e.what();
  }
}

TEST(Dataset, MissingFileNamesPath) {
  TempDir dir;
  const auto f = write_inputs(dir.path, small_demand(2, 12));
  fs::remove(f.temperature);
  try {
    load_dataset(f.demand, f.price, f.temperature);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
    EXPECT_NE(std::string(e.what()).find(f.temperature.string()), std::string::npos);
  }
}

TEST(Dataset, CovariateColumnMismatchIsAlignmentError) {
  TempDir dir;
  const auto d = small_demand(3, 12);
  const auto f = write_inputs(dir.path, d);
  const std::string two[] = {"A0", "A1"};
  write_table(f.price, two, Matrix(2, 12, 1.0), d.start_minute, 5);
  try {
    load_dataset(f.demand, f.price, f.temperature);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::alignment);
  }
}

TEST(Dataset, DescriptorResolvesRelativePathsAndRejectsUnknownKeys) {
  TempDir dir;
  const auto f = write_inputs(dir.path, small_demand(2, 12));
  {
    std::ofstream out(dir.path / "dataset.json");
    out << R"({"demand": "demand.csv", "price": "price.csv", "temperature": "temperature.csv", "horizons": [1, 2]})";
  }
  const auto desc = read_descriptor(dir.path / "dataset.json");
  EXPECT_EQ(desc.demand, dir.path / "demand.csv");
  EXPECT_EQ(desc.horizons, (std::vector<int>{1, 2}));
  EXPECT_NO_THROW(load_dataset(desc));
  {
    std::ofstream out(dir.path / "bad.json");
    out << R"({"demand": "demand.csv", "price": "price.csv", "temperature": "temperature.csv", "colour": 1})";
  }
  EXPECT_THROW(read_descriptor(dir.path / "bad.json"), Error);
}

TEST(Dataset, TimestampsRoundTrip) {
  EXPECT_EQ(parse_timestamp("1970-01-01 00:00"), 0);
  EXPECT_EQ(parse_timestamp("1970-01-02T01:05"), 1440 + 65);
  EXPECT_EQ(parse_timestamp("125"), 125);
  const auto m = parse_timestamp("2022-06-30 23:55");
  EXPECT_EQ(format_timestamp(m), "2022-06-30 23:55");
  EXPECT_THROW(parse_timestamp("2022-13-01 00:00"), Error);
  EXPECT_THROW(parse_timestamp("yesterday"), Error);
}

TEST(Dataset, InterpolationIsExactAtSamplesAndLinearBetween) {
  const TimedSample s[] = {{0, 1.0}, {30, 4.0}, {60, -2.0}};
  const auto v = interpolate_linear(s, 5.0);
  ASSERT_EQ(v.size(), 13u);
  EXPECT_DOUBLE_EQ(v[0], 1.0);
  EXPECT_DOUBLE_EQ(v[3], 2.5);
  EXPECT_DOUBLE_EQ(v[6], 4.0);
  EXPECT_DOUBLE_EQ(v[9], 1.0);
  EXPECT_DOUBLE_EQ(v[12], -2.0);
  const auto held = interpolate_linear(s, 20.0, 50.0, 3);
  EXPECT_DOUBLE_EQ(held[1], -2.0);
  EXPECT_DOUBLE_EQ(held[2], -2.0);
  const TimedSample one[] = {{0, 1.0}};
  EXPECT_THROW(interpolate_linear(one, 5.0), Error);
  EXPECT_THROW(interpolate_linear(s, 5.0, -5.0, 2), Error);
}

TEST(Dataset, ChronologicalSplit) {
  const auto s = chronological_split(100);
  EXPECT_EQ(s.train, (IndexRange{0, 60}));
  EXPECT_EQ(s.val, (IndexRange{60, 70}));
  EXPECT_EQ(s.test, (IndexRange{70, 100}));
  const auto odd = chronological_split(4032);
  EXPECT_EQ(odd.train.size(), 2419u);
  EXPECT_EQ(odd.val.size(), 403u);
  EXPECT_EQ(odd.test.size(), 1210u);
  EXPECT_THROW(chronological_split(9), Error);
}

TEST(Dataset, WindowsCarryHistoryAndTargets) {
  const auto d = small_demand(2, 40);
  CovariateSeries cov{Matrix(2, 40, 0.25), Matrix(2, 40, 0.75)};
  const int horizons[] = {1, 3};
  const auto w = make_windows(d, cov, {5, 25}, 4, horizons);
  // Anchors t with t - 3 >= 5 and t + 3 < 25.
  ASSERT_EQ(w.samples, 14u);
  EXPECT_EQ(w.anchors.front(), 8u);
  EXPECT_EQ(w.anchors.back(), 21u);
  for (std::size_t s = 0; s < w.samples; ++s)
    for (std::size_t n = 0; n < 2; ++n) {
      const std::size_t t = w.anchors[s];
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_DOUBLE_EQ(w.input(s, n, k, 0), d.values(n, t - 3 + k));
        EXPECT_DOUBLE_EQ(w.input(s, n, k, 1), 0.25);
        EXPECT_DOUBLE_EQ(w.input(s, n, k, 2), 0.75);
      }
      EXPECT_DOUBLE_EQ(w.target(s, n, 0), d.values(n, t + 1));
      EXPECT_DOUBLE_EQ(w.target(s, n, 1), d.values(n, t + 3));
    }
  EXPECT_THROW(make_windows(d, cov, {0, 6}, 4, horizons), Error);

  const std::size_t pick[] = {3, 0};
  const auto sel = select_samples(w, pick);
  EXPECT_EQ(sel.samples, 2u);
  EXPECT_EQ(sel.anchors[0], w.anchors[3]);
  EXPECT_DOUBLE_EQ(sel.target(1, 1, 1), w.target(0, 1, 1));
}

TEST(Dataset, CovariateScalingUsesTrainingRangeOnly) {
  CovariateSeries cov{Matrix(1, 10), Matrix(1, 10, 3.0)};
  for (std::size_t t = 0; t < 10; ++t) cov.price(0, t) = static_cast<double>(t);
  const auto [scaled, norm] = normalize_covariates(cov, {0, 5});
  EXPECT_DOUBLE_EQ(norm.price.min, 0.0);
  EXPECT_DOUBLE_EQ(norm.price.max, 4.0);
  EXPECT_DOUBLE_EQ(scaled.price(0, 4), 1.0);
  EXPECT_DOUBLE_EQ(scaled.price(0, 8), 2.0);
  EXPECT_TRUE(norm.temperature.degenerate);
  EXPECT_DOUBLE_EQ(scaled.temperature(0, 9), 0.0);
}

TEST(Dataset, SingleAreaSingleStep) {
  TempDir dir;
  DemandSeries d;
  d.area_ids = {"solo"};
  d.values = Matrix(1, 1, 0.5);
  const std::string city[] = {"city"};
  write_table(dir.path / "demand.csv", d.area_ids, d.values, 0, 5);
  write_table(dir.path / "price.csv", city, Matrix(1, 1, 1.0), 0, 5);
  write_table(dir.path / "temperature.csv", city, Matrix(1, 1, 25.0), 0, 5);
  const auto [demand, cov] = load_dataset(dir.path / "demand.csv", dir.path / "price.csv", dir.path / "temperature.csv");
  EXPECT_EQ(demand.areas(), 1u);
  EXPECT_EQ(demand.steps(), 1u);
  EXPECT_DOUBLE_EQ(demand.values(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(cov.temperature(0, 0), 25.0);
}

TEST(Dataset, InterpolationExamples) {
  const TimedSample mid[] = {{0, 10.0}, {30, 16.0}};
  EXPECT_DOUBLE_EQ(interpolate_linear(mid, 15.0)[1], 13.0);

  const TimedSample flat[] = {{0, 20.0}, {30, 20.0}, {60, 20.0}};
  for (double v : interpolate_linear(flat, 5.0)) EXPECT_DOUBLE_EQ(v, 20.0);

  const TimedSample ramp[] = {{0, 0.0}, {30, 6.0}, {60, 6.0}};
  const std::vector<double> expected{0, 1, 2, 3, 4, 5, 6, 6, 6, 6, 6, 6, 6};
  const auto got = interpolate_linear(ramp, 5.0);
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-12) << i;
}

TEST(Dataset, InterpolationIsExactOnAffineInputs) {
  for (const auto& [a, b] : {std::pair{0.0, 1.0}, {-3.5, 0.125}, {27.0, -0.04}}) {
    std::vector<TimedSample> s;
    for (int k = 0; k <= 48; ++k) s.push_back({30.0 * k, a + b * 30.0 * k});
    const auto v = interpolate_linear(s, 5.0);
    ASSERT_EQ(v.size(), 48u * 6 + 1);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], a + b * 5.0 * static_cast<double>(i), 1e-12);
  }
}

TEST(Dataset, SplitExamplesAndPartition) {
  const auto s = chronological_split(8640);
  EXPECT_EQ(s.train, (IndexRange{0, 5184}));
  EXPECT_EQ(s.val, (IndexRange{5184, 6048}));
  EXPECT_EQ(s.test, (IndexRange{6048, 8640}));
  const auto ten = chronological_split(10);
  EXPECT_EQ(ten.train, (IndexRange{0, 6}));
  EXPECT_EQ(ten.val, (IndexRange{6, 7}));
  EXPECT_EQ(ten.test, (IndexRange{7, 10}));
  for (std::size_t T = 10; T < 400; ++T) {
    const auto p = chronological_split(T);
    EXPECT_EQ(p.train.begin, 0u);
    EXPECT_EQ(p.train.end, p.val.begin);
    EXPECT_EQ(p.val.end, p.test.begin);
    EXPECT_EQ(p.test.end, T);
  }
}

TEST(Dataset, WindowCountMatchesBruteForce) {
  const auto d = small_demand(1, 260);
  CovariateSeries cov{Matrix(1, 260), Matrix(1, 260)};
  const int horizons[] = {3, 6, 9, 12};
  for (std::size_t len = 24; len <= 200; ++len) {
    const IndexRange r{30, 30 + len};
    std::vector<std::size_t> brute;
    for (std::size_t t = r.begin; t < r.end; ++t)
      if (t + 1 >= r.begin + 12 && t + 12 < r.end) brute.push_back(t);
    const auto w = make_windows(d, cov, r, 12, horizons);
    EXPECT_EQ(w.anchors, brute) << "length " << len;
    EXPECT_EQ(w.samples, len - 12 - 12 + 1);
  }
  const auto big = small_demand(1, 2592);
  CovariateSeries bc{Matrix(1, 2592), Matrix(1, 2592)};
  EXPECT_EQ(make_windows(big, bc, {0, 2592}, 12, horizons).samples, 2569u);
  const int twelve[] = {12};
  EXPECT_EQ(make_windows(d, cov, {0, 24}, 12, twelve).samples, 1u);
  EXPECT_THROW(make_windows(d, cov, {0, 23}, 12, twelve), Error);
}

TEST(Dataset, NormalizationExamples) {
  CovariateSeries cov{Matrix(1, 4, 1.0), Matrix(1, 4)};
  cov.temperature(0, 0) = 25.0;
  cov.temperature(0, 1) = 35.0;
  cov.temperature(0, 2) = 30.0;
  cov.temperature(0, 3) = 40.0;
  const auto [scaled, norm] = normalize_covariates(cov, {0, 2});
  EXPECT_DOUBLE_EQ(scaled.temperature(0, 2), 0.5);
  EXPECT_DOUBLE_EQ(scaled.temperature(0, 3), 1.5);
  EXPECT_TRUE(norm.price.degenerate);
  for (double v : scaled.price.data) EXPECT_EQ(v, 0.0);
}
