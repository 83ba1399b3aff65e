#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "evcp/error.hpp"
#include "evcp/training.hpp"
#include "oracle.hpp"
#include "test_support.hpp"

using namespace evcp;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.lookback = 4;
  c.d_model = 4;
  c.clusters = 2;
  c.encoder_blocks = 1;
  c.horizons = {1, 2};
  return c;
}

RegionStructure tiny_structure() {
  const std::size_t labels[] = {0, 1, 0};
  const std::pair<std::size_t, std::size_t> pairs[] = {{0, 1}};
  return build_structure(labels, pairs);
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.patience = epochs - 1;
  t.batch_size = 8;
  t.chunk_size = 3;
  t.learning_rate = 1e-2;
  t.seed = 17;
  return t;
}

struct Fixture {
  WindowBatch train = random_batch(20, 3, 4, {1, 2}, 1);
  WindowBatch val = random_batch(6, 3, 4, {1, 2}, 2);
  RegionStructure structure = tiny_structure();
};

void expect_same_history(const TrainHistory& a, const TrainHistory& b) {
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].train_loss, b.epochs[i].train_loss);
    EXPECT_EQ(a.epochs[i].val_loss, b.epochs[i].val_loss);
    EXPECT_EQ(a.epochs[i].clipped_steps, b.epochs[i].clipped_steps);
  }
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_EQ(a.best_val_loss, b.best_val_loss);
  EXPECT_EQ(a.stop_reason, b.stop_reason);
}

}  // namespace

TEST(Training, MseExamples) {
  EXPECT_EQ(mse_loss(std::vector<double>{0.3, 0.4}, std::vector<double>{0.3, 0.4}), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(std::vector<double>{0, 0}, std::vector<double>{1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(mse_loss(std::vector<double>{0, 2}, std::vector<double>{1, 0}), 2.5);
  EXPECT_THROW(mse_loss(std::vector<double>{0}, std::vector<double>{1, 0}), Error);
}

TEST(Training, AdamMatchesScalarOracle) {
  ParameterSet p{{"x", {{1}, {1.0}}}};
  AdamState state;
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  const auto want = oracle::adam_trace(1.0, 0.1, 3);
  for (std::size_t t = 1; t <= 3; ++t) {
    const Gradients g{{"x", {2.0 * p["x"].data[0]}}};
    adam_step(p, g, state, t, cfg);
    EXPECT_NEAR(p["x"].data[0], want[t - 1], 1e-12);
  }
}

TEST(Training, AdamZeroGradientLeavesParameters) {
  ParameterSet p{{"w", {{2}, {0.5, -0.25}}}};
  AdamState state;
  adam_step(p, {{"w", {0.0, 0.0}}}, state, 1, TrainConfig{});
  EXPECT_EQ(p["w"].data, (std::vector<double>{0.5, -0.25}));

  state.m["w"] = {0.4, 0.0};
  state.v["w"] = {0.2, 0.0};
  adam_step(p, {}, state, 2, TrainConfig{});
  EXPECT_DOUBLE_EQ(state.m["w"][0], 0.9 * 0.4);
  EXPECT_DOUBLE_EQ(state.v["w"][0], 0.999 * 0.2);
}

TEST(Training, AdamFirstStepHasLearningRateMagnitude) {
  for (double g : {1e-3, 0.5, -7.0, 300.0}) {
    ParameterSet p{{"w", {{1}, {0.0}}}};
    AdamState state;
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    adam_step(p, {{"w", {g}}}, state, 1, cfg);
    EXPECT_NEAR(p["w"].data[0], g > 0 ? -0.01 : 0.01, 1e-7);
  }
}

TEST(Training, NonFiniteGradientNamesTensorAndChangesNothing) {
  ParameterSet p{{"a", {{1}, {1.0}}}, {"b", {{1}, {2.0}}}};
  AdamState state;
  try {
    adam_step(p, {{"a", {1.0}}, {"b", {std::numeric_limits<double>::quiet_NaN()}}}, state, 1, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_EQ(p["a"].data[0], 1.0);
  EXPECT_TRUE(state.m.empty() || state.m["a"][0] == 0.0);
}

TEST(Training, GlobalNormClipping) {
  Gradients g{{"a", {3.0}}, {"b", {4.0}}};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_EQ(g["a"][0], 3.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g["a"][0], 0.6, 1e-15);
  EXPECT_NEAR(g["b"][0], 0.8, 1e-15);
  Gradients h{{"a", {3.0}}};
  clip_global_norm(h, 0.0);
  EXPECT_EQ(h["a"][0], 3.0);
}

TEST(Training, ConfigValidation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.patience = t.max_epochs;
  EXPECT_THROW(t.validate(), Error);
  t = TrainConfig{};
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), Error);
  t = TrainConfig{};
  t.learning_rate = -1;
  EXPECT_THROW(t.validate(), Error);
  nlohmann::json j = TrainConfig{};
  EXPECT_EQ(j.get<TrainConfig>(), TrainConfig{});
  j["lr"] = 1;
  EXPECT_THROW(j.get<TrainConfig>(), Error);
}

TEST(Training, DerivedSeedsDiffer) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
  EXPECT_NE(derive_seed(1, {0}), derive_seed(1, {0, 0}));
}

TEST(Training, PatienceStopsWhenNothingImproves) {
  Fixture f;
  auto cfg = tiny_train(20);
  cfg.learning_rate = 0.0;
  cfg.patience = 3;
  const auto out = train(init_model(tiny_model(), 1), f.train, f.val, f.structure, cfg);
  EXPECT_EQ(out.history.stop_reason, "patience");
  EXPECT_EQ(out.history.best_epoch, 1u);
  EXPECT_EQ(out.history.epochs.size(), 4u);
  for (const auto& e : out.history.epochs) EXPECT_EQ(e.val_loss, out.history.epochs[0].val_loss);
}

TEST(Training, LossDecreasesAndBestIsMinimum) {
  Fixture f;
  const auto out = train(init_model(tiny_model(), 2), f.train, f.train, f.structure, tiny_train(15));
  const auto& e = out.history.epochs;
  EXPECT_LT(e.back().train_loss, e.front().train_loss);
  double lowest = e.front().val_loss;
  for (const auto& r : e) lowest = std::min(lowest, r.val_loss);
  EXPECT_EQ(out.history.best_val_loss, lowest);
  EXPECT_EQ(e[out.history.best_epoch - 1].val_loss, lowest);
  // The snapshot reproduces its recorded validation loss.
  EXPECT_EQ(evaluate_loss(out.best, f.train, f.structure), out.history.best_val_loss);
}

TEST(Training, SameSeedSameTrajectory) {
  Fixture f;
  const auto a = train(init_model(tiny_model(), 3), f.train, f.val, f.structure, tiny_train(4));
  const auto b = train(init_model(tiny_model(), 3), f.train, f.val, f.structure, tiny_train(4));
  EXPECT_EQ(a.model.parameters, b.model.parameters);
  EXPECT_EQ(a.best.parameters, b.best.parameters);
  expect_same_history(a.history, b.history);
  auto other = tiny_train(4);
  other.seed = 18;
  EXPECT_NE(train(init_model(tiny_model(), 3), f.train, f.val, f.structure, other).model.parameters,
            a.model.parameters);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  TempDir dir;
  Fixture f;
  const auto full = train(init_model(tiny_model(), 4), f.train, f.val, f.structure, tiny_train(5));

  auto first = tiny_train(5);
  first.max_epochs = 2;
  first.patience = 1;
  auto partial = train(init_model(tiny_model(), 4), f.train, f.val, f.structure, first);
  save_train_state(dir.path / "state.bin", partial);
  auto loaded = load_train_state(dir.path / "state.bin");
  EXPECT_EQ(loaded.model.parameters, partial.model.parameters);
  EXPECT_EQ(loaded.adam.m, partial.adam.m);
  EXPECT_EQ(loaded.step, partial.step);
  const auto resumed = train(std::move(loaded), f.train, f.val, f.structure, tiny_train(5));
  EXPECT_EQ(resumed.model.parameters, full.model.parameters);
  EXPECT_EQ(resumed.best.parameters, full.best.parameters);
  expect_same_history(resumed.history, full.history);
}

TEST(Training, ChunkSizeOnlyChangesRounding) {
  Fixture f;
  auto a_cfg = tiny_train(2), b_cfg = tiny_train(2);
  a_cfg.chunk_size = 1;
  b_cfg.chunk_size = 8;
  auto model = tiny_model();
  model.dropout = 0.0;
  model.gumbel = false;
  const auto a = train(init_model(model, 5), f.train, f.val, f.structure, a_cfg);
  const auto b = train(init_model(model, 5), f.train, f.val, f.structure, b_cfg);
  for (const auto& [name, t] : a.model.parameters)
    for (std::size_t i = 0; i < t.data.size(); ++i)
      EXPECT_NEAR(t.data[i], b.model.parameters.at(name).data[i], 1e-9) << name;
}

TEST(Training, HistoryJsonRoundTrip) {
  TrainHistory h;
  h.epochs = {{1, 0.5, 0.4, 1.25, 2}, {2, 0.3, 0.35, 1.5, 0}};
  h.best_epoch = 2;
  h.best_val_loss = 0.35;
  h.stop_reason = "max_epochs";
  const auto back = history_from_json(history_json(h));
  expect_same_history(back, h);
  // Wall-clock time is not part of the persisted history.
  EXPECT_EQ(back.epochs[1].seconds, 0.0);
}

TEST(Training, MismatchedDataRejected) {
  Fixture f;
  const auto wide = random_batch(4, 3, 5, {1, 2}, 3);
  EXPECT_THROW(train(init_model(tiny_model(), 1), wide, f.val, f.structure, tiny_train(2)), Error);
}
