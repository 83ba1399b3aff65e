#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "evcp/error.hpp"
#include "evcp/region_features.hpp"
#include "oracle.hpp"
#include "test_support.hpp"

using namespace evcp;

namespace {

PoiCorpus corpus_from(const std::vector<std::vector<long>>& rows) {
  PoiCorpus c;
  for (std::size_t a = 0; a < rows.size(); ++a) c.area_ids.push_back("a" + std::to_string(a));
  for (std::size_t k = 0; k < rows[0].size(); ++k) c.categories.push_back("c" + std::to_string(k));
  for (const auto& r : rows)
    for (long v : r) c.counts.push_back(v);
  return c;
}

Matrix random_rows(std::size_t n, std::size_t d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(n, d);
  for (double& v : m.data) v = u(rng);
  return m;
}

}  // namespace

TEST(Tfidf, HandCorpus) {
  // Category A counts (2, 4, 0); area totals (4, 4, 1); C only in area 3.
  const std::vector<std::vector<long>> rows{{2, 2, 0}, {4, 0, 0}, {0, 0, 1}};
  const auto u = tfidf(corpus_from(rows));
  const auto o = oracle::tfidf(rows);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(u(a, k), o[a][k], 1e-12);
  EXPECT_NEAR(u(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(u(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(u(2, 2), std::log(1.5), 1e-12);
  EXPECT_NEAR(u(0, 1), 0.5 * std::log(1.5), 1e-12);
}

TEST(Tfidf, UbiquitousCategoryIsNegative) {
  const auto u = tfidf(corpus_from({{3, 1}, {1, 0}, {5, 0}, {2, 2}}));
  for (std::size_t a = 0; a < 4; ++a) EXPECT_LT(u(a, 0), 0.0);
  EXPECT_NEAR(u(0, 0), 0.75 * std::log(4.0 / 5.0), 1e-12);
}

TEST(Tfidf, EmptyAreaNamed) {
  auto c = corpus_from({{1, 2}, {0, 0}});
  try {
    tfidf(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("a1"), std::string::npos) << e.what();
  }
}

TEST(Tfidf, RowDuplicationInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<long> cnt(0, 9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<long>> rows(6, std::vector<long>(5));
    for (auto& r : rows) {
      for (long& v : r) v = cnt(rng);
      r[trial % 5] += 1;
    }
    auto scaled = rows;
    for (long& v : scaled[2]) v *= 3;
    const auto u = tfidf(corpus_from(rows));
    const auto w = tfidf(corpus_from(scaled));
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(u(2, k), w(2, k), 1e-12);
  }
}

TEST(Tfidf, IncreasingInCountWhenIdfPositive) {
  // Category 0 appears in one of four areas, so idf = ln(4/2) > 0.
  double prev = -1.0;
  for (long f = 1; f < 10; ++f) {
    const auto u = tfidf(corpus_from({{f, 5}, {0, 3}, {0, 1}, {0, 7}}));
    EXPECT_GT(u(0, 0), prev);
    prev = u(0, 0);
  }
}

TEST(KMeans, SeparatedOneDimensional) {
  Matrix rows(4, 1);
  rows.data = {0.0, 0.1, 9.9, 10.0};
  const auto r = kmeans(rows, 2, 1);
  EXPECT_EQ(r.labels[0], r.labels[1]);
  EXPECT_EQ(r.labels[2], r.labels[3]);
  EXPECT_NE(r.labels[0], r.labels[2]);
}

TEST(KMeans, OneClusterPerArea) {
  const auto rows = random_rows(7, 3, 2);
  const auto r = kmeans(rows, 7, 3);
  EXPECT_EQ(std::set<std::size_t>(r.labels.begin(), r.labels.end()).size(), 7u);
  EXPECT_DOUBLE_EQ(r.inertia, 0.0);
}

TEST(KMeans, BeatsRandomPartitions) {
  const auto rows = random_rows(20, 5, 11);
  const auto r = kmeans(rows, 3, 4);
  EXPECT_NEAR(r.inertia, partition_inertia(rows, r.labels), 1e-9);
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> pick(0, 2);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::size_t> labels(20);
    for (auto& l : labels) l = pick(rng);
    // Brute-force scorer: squared distance to each group mean.
    double inertia = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> mean(5, 0.0);
      std::size_t n = 0;
      for (std::size_t a = 0; a < 20; ++a)
        if (labels[a] == c) {
          ++n;
          for (std::size_t k = 0; k < 5; ++k) mean[k] += rows(a, k);
        }
      for (auto& m : mean) m /= n ? static_cast<double>(n) : 1.0;
      for (std::size_t a = 0; a < 20; ++a)
        if (labels[a] == c)
          for (std::size_t k = 0; k < 5; ++k) inertia += (rows(a, k) - mean[k]) * (rows(a, k) - mean[k]);
    }
    EXPECT_LE(r.inertia, inertia + 1e-12);
  }
}

TEST(KMeans, DeterministicAndStableAcrossSeeds) {
  // Three tight blobs far apart.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.01);
  Matrix rows(15, 2);
  std::vector<std::size_t> truth;
  for (std::size_t a = 0; a < 15; ++a) {
    rows(a, 0) = static_cast<double>(a % 3) * 5.0 + n(rng);
    rows(a, 1) = static_cast<double>(a % 3 == 1) * 5.0 + n(rng);
    truth.push_back(a % 3);
  }
  const auto a = kmeans(rows, 3, 42);
  const auto b = kmeans(rows, 3, 42);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.centroids, b.centroids);
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    EXPECT_DOUBLE_EQ(adjusted_rand_index(kmeans(rows, 3, seed).labels, truth), 1.0);
}

TEST(KMeans, RejectsBadClusterCount) {
  const auto rows = random_rows(4, 2, 1);
  EXPECT_THROW(kmeans(rows, 0, 1), Error);
  EXPECT_THROW(kmeans(rows, 5, 1), Error);
}

TEST(Structure, DirectConstruction) {
  const std::size_t labels[] = {0, 0, 1};
  const std::pair<std::size_t, std::size_t> pairs[] = {{0, 1}};
  const auto s = build_structure(labels, pairs);
  Matrix m(3, 2);
  m.data = {1, 0, 1, 0, 0, 1};
  Matrix g(3, 3);
  g.data = {0, 1, 0, 1, 0, 0, 0, 0, 0};
  EXPECT_EQ(s.incidence, m);
  EXPECT_EQ(s.adjacency, g);
  EXPECT_EQ(s.isolated, (std::vector<bool>{false, false, true}));
  EXPECT_EQ(s.members(0), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.neighbors(1), (std::vector<std::size_t>{0}));

  const std::pair<std::size_t, std::size_t> both[] = {{0, 1}, {1, 0}};
  EXPECT_EQ(build_structure(labels, both).adjacency, g);
  const std::pair<std::size_t, std::size_t> bad[] = {{0, 3}};
  EXPECT_THROW(build_structure(labels, bad), Error);
}

TEST(Structure, IncidenceSums) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, 3);
  std::vector<std::size_t> labels{0, 1, 2, 3};
  for (int i = 0; i < 16; ++i) labels.push_back(pick(rng));
  const auto s = build_structure(labels, {});
  double total = 0;
  for (std::size_t a = 0; a < s.areas; ++a) {
    double row = 0;
    for (std::size_t c = 0; c < s.clusters; ++c) row += s.incidence(a, c);
    EXPECT_EQ(row, 1.0);
  }
  for (std::size_t c = 0; c < s.clusters; ++c) {
    double col = 0;
    for (std::size_t a = 0; a < s.areas; ++a) col += s.incidence(a, c);
    EXPECT_EQ(col, static_cast<double>(s.members(c).size()));
    total += col;
  }
  EXPECT_EQ(total, 20.0);
}

TEST(Pearson, Examples) {
  Matrix v(3, 4);
  v.data = {0, 1, 2, 3, 3, 2, 1, 0, 3, 5, 7, 9};
  const auto p = pearson_matrix(v, 0.4);
  EXPECT_NEAR(p.coefficients(0, 1), -1.0, 1e-12);
  EXPECT_NEAR(p.coefficients(0, 2), 1.0, 1e-12);
  EXPECT_EQ(p.mask(0, 1), 0.0);
  EXPECT_EQ(p.mask(0, 2), 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p.coefficients(i, i), 1.0);
}

TEST(Pearson, MatchesOracleAndIsSymmetric) {
  const auto v = random_rows(6, 30, 21);
  const auto p = pearson_matrix(v, 0.4);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      const oracle::Vec a(v.row(i).begin(), v.row(i).end()), b(v.row(j).begin(), v.row(j).end());
      EXPECT_NEAR(p.coefficients(i, j), oracle::pearson(a, b), 1e-12);
      EXPECT_EQ(p.coefficients(i, j), p.coefficients(j, i));
      EXPECT_GE(p.coefficients(i, j), -1.0);
      EXPECT_LE(p.coefficients(i, j), 1.0);
    }
}

TEST(Pearson, ZeroVarianceFlagged) {
  Matrix v(2, 3);
  v.data = {1, 2, 3, 4, 4, 4};
  const auto p = pearson_matrix(v, 0.4);
  EXPECT_EQ(p.zero_variance, (std::vector<std::size_t>{1}));
  EXPECT_EQ(p.coefficients(0, 1), 0.0);
}

TEST(Ari, KnownValues) {
  const std::size_t a[] = {0, 0, 1, 1};
  const std::size_t relabeled[] = {1, 1, 0, 0};
  const std::size_t mixed[] = {0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, relabeled), 1.0);
  // Contingency all ones: index 0, expected 2/3, max 2, so ARI = -0.5.
  EXPECT_NEAR(adjusted_rand_index(a, mixed), -0.5, 1e-12);
}

TEST(RegionFiles, RoundTrip) {
  TempDir dir;
  const auto c = corpus_from({{1, 2}, {3, 0}, {0, 4}});
  write_poi_csv(dir.path / "poi.csv", c);
  const auto back = read_poi_csv(dir.path / "poi.csv");
  EXPECT_EQ(back.counts, c.counts);
  EXPECT_EQ(back.area_ids, c.area_ids);

  const std::pair<std::size_t, std::size_t> pairs[] = {{0, 2}, {1, 2}};
  write_adjacency(dir.path / "adj.txt", pairs, c.area_ids);
  EXPECT_EQ(read_adjacency(dir.path / "adj.txt", c.area_ids), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}, {1, 2}}));
  const std::string fewer[] = {"a0", "a1"};
  EXPECT_THROW(read_adjacency(dir.path / "adj.txt", fewer), Error);

  const std::size_t labels[] = {1, 0, 1};
  write_labels_csv(dir.path / "labels.csv", c.area_ids, labels);
  EXPECT_EQ(read_labels_csv(dir.path / "labels.csv", c.area_ids), (std::vector<std::size_t>{1, 0, 1}));

  const auto s = build_structure(labels, pairs);
  write_clusters_json(dir.path / "clusters.json", c.area_ids, c.categories, tfidf(c), s, 0.5);
  const auto rs = read_clusters_json(dir.path / "clusters.json", c.area_ids);
  EXPECT_EQ(rs.labels, s.labels);
  EXPECT_EQ(rs.adjacency, s.adjacency);

  const std::string reordered[] = {"a2", "a0", "a1"};
  const auto aligned = align_corpus(c, reordered);
  EXPECT_EQ(aligned.count(0, 1), 4);
}
