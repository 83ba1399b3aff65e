#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "evcp/error.hpp"
#include "evcp/evaluation.hpp"
#include "evcp/training.hpp"
#include "test_support.hpp"

using namespace evcp;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

const int kFour[] = {3, 6, 9, 12};

}  // namespace

TEST(Metrics, PerfectPrediction) {
  const auto y = uniform(5 * 3 * 4, 1);
  const auto r = metrics(y, y, 5, 3, kFour);
  for (const auto& h : r.horizons) {
    EXPECT_EQ(h.rmse, 0.0);
    EXPECT_EQ(h.mae, 0.0);
    EXPECT_EQ(*h.rae, 0.0);
    EXPECT_EQ(*h.r2, 1.0);
    EXPECT_EQ(h.count, 15u);
  }
}

TEST(Metrics, TwoPointFixture) {
  const int one[] = {1};
  const std::vector<double> target{0, 1}, pred{1, 0};
  const auto r = metrics(pred, target, 2, 1, one);
  EXPECT_EQ(r.horizons[0].rmse, 1.0);
  EXPECT_EQ(r.horizons[0].mae, 1.0);
  EXPECT_EQ(*r.horizons[0].rae, 2.0);
  EXPECT_EQ(*r.horizons[0].r2, -3.0);
  EXPECT_EQ(r.avg_rmse, 1.0);
}

TEST(Metrics, OrderingAndAverages) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto y = uniform(6 * 4 * 4, seed), p = uniform(6 * 4 * 4, seed + 100);
    const auto r = metrics(p, y, 6, 4, kFour);
    double rmse = 0, mae = 0;
    for (const auto& h : r.horizons) {
      EXPECT_GE(h.rmse, h.mae);
      EXPECT_GE(h.mae, 0.0);
      EXPECT_GE(*h.rae, 0.0);
      EXPECT_LE(*h.r2, 1.0);
      rmse += h.rmse / 4;
      mae += h.mae / 4;
    }
    EXPECT_NEAR(r.avg_rmse, rmse, 1e-15);
    EXPECT_NEAR(r.avg_mae, mae, 1e-15);
  }
}

TEST(Metrics, ScaleConsistent) {
  const auto y = uniform(8 * 2 * 4, 3), p = uniform(8 * 2 * 4, 4);
  const auto base = metrics(p, y, 8, 2, kFour);
  for (double c : {0.01, 3.0, 250.0}) {
    std::vector<double> cy(y), cp(p);
    for (double& v : cy) v *= c;
    for (double& v : cp) v *= c;
    const auto r = metrics(cp, cy, 8, 2, kFour);
    for (std::size_t h = 0; h < 4; ++h) {
      EXPECT_NEAR(r.horizons[h].rmse, c * base.horizons[h].rmse, 1e-10 * c);
      EXPECT_NEAR(r.horizons[h].mae, c * base.horizons[h].mae, 1e-10 * c);
      EXPECT_NEAR(*r.horizons[h].rae, *base.horizons[h].rae, 1e-10);
      EXPECT_NEAR(*r.horizons[h].r2, *base.horizons[h].r2, 1e-10);
    }
  }
}

TEST(Metrics, SamplePermutationInvariant) {
  const std::size_t S = 7, N = 3, H = 4;
  const auto y = uniform(S * N * H, 5), p = uniform(S * N * H, 6);
  const std::size_t order[] = {4, 0, 6, 2, 1, 5, 3};
  std::vector<double> py, pp;
  for (std::size_t s : order) {
    py.insert(py.end(), y.begin() + s * N * H, y.begin() + (s + 1) * N * H);
    pp.insert(pp.end(), p.begin() + s * N * H, p.begin() + (s + 1) * N * H);
  }
  const auto a = metrics(p, y, S, N, kFour), b = metrics(pp, py, S, N, kFour);
  for (std::size_t h = 0; h < H; ++h) {
    EXPECT_NEAR(a.horizons[h].rmse, b.horizons[h].rmse, 1e-14);
    EXPECT_NEAR(*a.horizons[h].r2, *b.horizons[h].r2, 1e-14);
  }
}

TEST(Metrics, R2IsOneOnlyForExactFit) {
  auto y = uniform(4 * 2 * 4, 7);
  auto p = y;
  p[5] += 1e-6;
  const auto r = metrics(p, y, 4, 2, kFour);
  EXPECT_LT(*r.horizons[1].r2, 1.0);
  EXPECT_EQ(*r.horizons[0].r2, 1.0);
}

TEST(Metrics, ConstantTargetsLeaveRatiosUndefined) {
  const int one[] = {1};
  const std::vector<double> y{0.5, 0.5, 0.5}, p{0.4, 0.5, 0.6};
  const auto r = metrics(p, y, 3, 1, one);
  EXPECT_FALSE(r.horizons[0].rae.has_value());
  EXPECT_FALSE(r.horizons[0].r2.has_value());
  EXPECT_FALSE(r.avg_r2.has_value());
}

TEST(Metrics, RejectsBadSizes) {
  const int one[] = {1};
  EXPECT_THROW(metrics(std::vector<double>{1}, std::vector<double>{1}, 1, 1, one), Error);
  EXPECT_THROW(metrics(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}, 2, 1, one), Error);
}

TEST(Persistence, RepeatsLastObservation) {
  DemandSeries d;
  d.area_ids = {"a", "b"};
  d.values = Matrix(2, 60);
  for (std::size_t t = 0; t < 60; ++t) {
    d.values(0, t) = 0.7;
    d.values(1, t) = 0.1 + 0.01 * static_cast<double>(t);
  }
  CovariateSeries cov{Matrix(2, 60), Matrix(2, 60)};
  const auto w = make_windows(d, cov, {0, 60}, 12, kFour);
  const auto p = persistence_baseline(w);
  for (std::size_t s = 0; s < w.samples; ++s)
    for (std::size_t h = 0; h < 4; ++h) EXPECT_EQ(p[(s * 2 + 0) * 4 + h], 0.7);

  // Constant area has zero error; the ramp area errs by slope * horizon.
  std::vector<double> pred_a, target_a, pred_b, target_b;
  for (std::size_t s = 0; s < w.samples; ++s)
    for (std::size_t h = 0; h < 4; ++h) {
      pred_a.push_back(p[(s * 2) * 4 + h]);
      target_a.push_back(w.target(s, 0, h));
      pred_b.push_back(p[(s * 2 + 1) * 4 + h]);
      target_b.push_back(w.target(s, 1, h));
    }
  const auto ra = metrics(pred_a, target_a, w.samples, 1, kFour);
  const auto rb = metrics(pred_b, target_b, w.samples, 1, kFour);
  for (std::size_t h = 0; h < 4; ++h) {
    EXPECT_EQ(ra.horizons[h].rmse, 0.0);
    EXPECT_NEAR(rb.horizons[h].mae, 0.01 * kFour[h], 1e-12);
  }
}

TEST(Variants, NamesRoundTripAndToggleOneThing) {
  EXPECT_EQ(all_variants().size(), 8u);
  const ModelConfig base;
  int differing_total = 0;
  for (Variant v : all_variants()) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
    const auto c = apply_variant(base, v);
    const int differing = (c.use_hypergraph != base.use_hypergraph) + (c.use_graph != base.use_graph) +
                          (c.use_encoder != base.use_encoder) + (c.use_price != base.use_price) +
                          (c.use_temperature != base.use_temperature) +
                          (c.use_variable_selection != base.use_variable_selection) + (c.gumbel != base.gumbel);
    EXPECT_EQ(differing, v == Variant::full ? 0 : 1) << variant_name(v);
    differing_total += differing;
  }
  EXPECT_EQ(differing_total, 7);
  EXPECT_FALSE(apply_variant(base, Variant::no_module_a).use_hypergraph);
  EXPECT_FALSE(apply_variant(base, Variant::no_module_b).use_graph);
  EXPECT_FALSE(apply_variant(base, Variant::no_module_c).use_encoder);
  EXPECT_THROW(parse_variant("no_module_d"), Error);
}

TEST(Ablation, FullVariantMatchesPlainTraining) {
  ModelConfig base;
  base.lookback = 4;
  base.d_model = 4;
  base.clusters = 2;
  base.encoder_blocks = 1;
  base.horizons = {1, 2};
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.patience = 2;
  tc.batch_size = 8;
  tc.seed = 9;
  const std::size_t labels[] = {0, 1, 0};
  const std::pair<std::size_t, std::size_t> pairs[] = {{0, 1}};
  ExperimentData data{random_batch(16, 3, 4, {1, 2}, 1), random_batch(6, 3, 4, {1, 2}, 2),
                      random_batch(6, 3, 4, {1, 2}, 3), build_structure(labels, pairs)};
  const Variant only[] = {Variant::full};
  const auto rows = run_ablation(only, data, base, tc, 11);
  ASSERT_EQ(rows.size(), 1u);

  const auto trained = train(init_model(base, 11), data.train, data.val, data.structure, tc);
  const auto direct = metrics(predict(trained.best, data.test, data.structure), data.test);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(rows[0].report.horizons[h].rmse, direct.horizons[h].rmse);
    EXPECT_EQ(rows[0].report.horizons[h].mae, direct.horizons[h].mae);
  }
  EXPECT_EQ(rows[0].history.best_val_loss, trained.history.best_val_loss);
}

TEST(Reports, CsvJsonAndText) {
  TempDir dir;
  const int one[] = {3};
  const auto r = metrics(std::vector<double>{1, 0}, std::vector<double>{0, 1}, 2, 1, one);
  const std::vector<std::pair<std::string, MetricReport>> rows{{"m", r}};
  write_metrics_csv(dir.path / "m.csv", rows);
  const auto text = slurp(dir.path / "m.csv");
  EXPECT_NE(text.find("label,horizon,metric,value"), std::string::npos);
  EXPECT_NE(text.find("m,3,rmse,1"), std::string::npos);
  const auto j = metrics_table_json(rows);
  EXPECT_EQ(j["m"]["3"]["rae"], 2.0);
  EXPECT_TRUE(j["m"].contains("average"));
  EXPECT_NE(format_report("m", r, 5).find("15min"), std::string::npos);
  EXPECT_EQ(report_json(r)["average"]["count"], 2);
}
