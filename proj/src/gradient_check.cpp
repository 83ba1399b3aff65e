#include "evcp/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "evcp/error.hpp"
#include "evcp/layers.hpp"
#include "evcp/model.hpp"
#include "evcp/training.hpp"

namespace evcp {

namespace {

using ad::Var;
namespace L = layers;

struct Case {
  ParameterSet params;
  std::function<Var(const ParamBinder&)> build;
  /// Empty: score is a fixed random weighting of the outputs.
  std::vector<double> mse_target;
};

void add_input(ParameterSet& params, const std::string& name, ad::Shape shape, std::mt19937_64& rng, double lo,
               double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t{shape, std::vector<double>(ad::numel(shape))};
  for (double& v : t.data) v = u(rng);
  params[name] = std::move(t);
}

// Initialized weights plus a uniform jitter so gains and biases are not at
// their trivial starting values.
void add_weights(ParameterSet& params, const std::vector<ParameterSpec>& specs, std::mt19937_64& rng) {
  ParameterSet w = initialize(specs, rng());
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  for (auto& [name, t] : w) {
    for (double& v : t.data) v += jitter(rng);
    params[name] = std::move(t);
  }
}

RegionStructure random_structure(std::size_t areas, std::size_t clusters, std::mt19937_64& rng) {
  std::vector<std::size_t> labels(areas);
  for (std::size_t i = 0; i < areas; ++i) labels[i] = i < clusters ? i : rng() % clusters;
  std::shuffle(labels.begin(), labels.end(), rng);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  // The last area stays isolated.
  for (std::size_t a = 0; a + 1 < areas; ++a)
    for (std::size_t b = a + 1; b + 1 < areas; ++b)
      if (b == a + 1 || rng() % 3 == 0) pairs.emplace_back(a, b);
  return build_structure(labels, pairs);
}

Case make_case(const std::string& layer, std::mt19937_64& rng) {
  Case c;
  auto& p = c.params;
  std::vector<ParameterSpec> specs;
  if (layer == "elu") {
    add_input(p, "input.x", {3, 4}, rng, -2.0, 2.0);
    c.build = [](const ParamBinder& b) { return L::elu(b("input.x")); };
  } else if (layer == "glu") {
    add_input(p, "input.x", {2, 3}, rng, -1.0, 1.0);
    L::declare_glu(specs, "glu", 3, 3);
    add_weights(p, specs, rng);
    c.build = [](const ParamBinder& b) { return L::glu(b("input.x"), L::GluWeights::bind(b, "glu")); };
  } else if (layer == "grn") {
    add_input(p, "input.x", {2, 4}, rng, -1.0, 1.0);
    L::declare_grn(specs, "grn", 4, 5);
    add_weights(p, specs, rng);
    c.build = [](const ParamBinder& b) {
      auto ctx = L::ForwardContext::evaluation();
      return L::grn(b("input.x"), L::GrnWeights::bind(b, "grn"), ctx);
    };
  } else if (layer == "soft_attention") {
    add_input(p, "input.center", {3}, rng, -1.0, 1.0);
    add_input(p, "input.members", {4, 3}, rng, -1.0, 1.0);
    L::declare_attention(specs, "score", 3);
    add_weights(p, specs, rng);
    c.build = [](const ParamBinder& b) {
      return L::soft_attention(b("input.center"), b("input.members"), b("score")).values;
    };
  } else if (layer == "hypergraph_attention") {
    add_input(p, "input.nodes", {2, 5, 4}, rng, 0.0, 1.0);
    L::declare_attention(specs, "edge_score", 4);
    L::declare_attention(specs, "node_score", 4);
    add_weights(p, specs, rng);
    auto topology = L::AttentionTopology::from(random_structure(5, 2, rng));
    c.build = [topology](const ParamBinder& b) {
      return L::hypergraph_attention(b("input.nodes"), topology, b("edge_score"), b("node_score"));
    };
  } else if (layer == "graph_attention") {
    add_input(p, "input.nodes", {2, 5, 4}, rng, 0.0, 1.0);
    L::declare_attention(specs, "score", 4);
    add_weights(p, specs, rng);
    auto topology = L::AttentionTopology::from(random_structure(5, 2, rng));
    c.build = [topology](const ParamBinder& b) { return L::graph_attention(b("input.nodes"), topology, b("score")); };
  } else if (layer == "add_norm") {
    add_input(p, "input.a", {3, 5}, rng, -1.0, 1.0);
    add_input(p, "input.b", {3, 5}, rng, -1.0, 1.0);
    add_input(p, "input.c", {3, 5}, rng, -1.0, 1.0);
    L::declare_norm(specs, "norm", 5);
    add_weights(p, specs, rng);
    c.build = [](const ParamBinder& b) {
      const Var terms[] = {b("input.a"), b("input.b"), b("input.c")};
      return L::add_norm(terms, L::NormWeights::bind(b, "norm"));
    };
  } else if (layer == "gumbel_softmax") {
    add_input(p, "input.scores", {3, 4}, rng, -2.0, 2.0);
    const double temperature = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    c.build = [temperature](const ParamBinder& b) {
      std::mt19937_64 unused(0);
      return L::gumbel_softmax(b("input.scores"), temperature, L::NoiseMode::zero, unused);
    };
  } else if (layer == "gated_temporal_attention") {
    add_input(p, "input.q", {2, 3, 4}, rng, -1.0, 1.0);
    add_input(p, "input.k", {2, 3, 4}, rng, -1.0, 1.0);
    add_input(p, "input.v", {2, 3, 4}, rng, -1.0, 1.0);
    c.build = [](const ParamBinder& b) {
      std::mt19937_64 unused(0);
      return L::gated_temporal_attention(b("input.q"), b("input.k"), b("input.v"), 1.5, L::NoiseMode::zero, unused)
          .values;
    };
  } else if (layer == "variable_selection") {
    add_input(p, "input.features", {2, 3, 3}, rng, -1.0, 1.0);
    L::declare_grn(specs, "embed", 3, 4);
    L::declare_grn(specs, "select", 3, 4);
    add_weights(p, specs, rng);
    c.build = [](const ParamBinder& b) {
      auto ctx = L::ForwardContext::evaluation();
      return L::variable_selection(b("input.features"), L::GrnWeights::bind(b, "embed"),
                                   L::GrnWeights::bind(b, "select"), ctx)
          .combined;
    };
  } else if (layer == "encoder_block") {
    add_input(p, "input.x", {2, 3, 4}, rng, -1.0, 1.0);
    L::declare_encoder_block(specs, "block", 4);
    add_weights(p, specs, rng);
    c.build = [](const ParamBinder& b) {
      auto ctx = L::ForwardContext::evaluation();
      return L::encoder_block(b("input.x"), L::EncoderWeights::bind(b, "block"), 1.5, L::NoiseMode::zero, ctx);
    };
  } else if (layer == "model") {
    ModelConfig config;
    config.lookback = 12;
    config.clusters = 2;
    config.d_model = 4;
    config.encoder_blocks = 2;
    add_weights(p, parameter_specs(config), rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> inputs(3 * 12 * 3);
    for (double& v : inputs) v = u(rng);
    c.mse_target.resize(3 * config.horizons.size());
    for (double& v : c.mse_target) v = u(rng);
    auto topology = L::AttentionTopology::from(random_structure(3, 2, rng));
    c.build = [config, inputs, topology](const ParamBinder& b) {
      auto ctx = L::ForwardContext::evaluation();
      return forward_graph(config, b, Var::constant({1, 3, 12, 3}, inputs), topology, ctx);
    };
  } else {
    raise(ErrorKind::config, "check_gradients: unknown layer '" + layer + "'");
  }
  return c;
}

Var score(const Case& c, const Var& out, const std::vector<double>& weights) {
  return c.mse_target.empty() ? ad::dot_const(out, weights) : ad::mse(out, c.mse_target);
}

}  // namespace

const std::vector<std::string>& gradient_layers() {
  static const std::vector<std::string> ids{"elu",
                                            "glu",
                                            "grn",
                                            "soft_attention",
                                            "hypergraph_attention",
                                            "graph_attention",
                                            "add_norm",
                                            "gumbel_softmax",
                                            "gated_temporal_attention",
                                            "variable_selection",
                                            "encoder_block",
                                            "model"};
  return ids;
}

GradientReport check_gradients(const std::string& layer, std::size_t trials, double tolerance, std::uint64_t seed,
                               const GradientCorruption& corrupt) {
  GradientReport report;
  report.layer = layer;
  report.trials = trials;
  report.tolerance = tolerance;
  std::map<std::string, double> worst;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(derive_seed(seed, {trial}));
    Case c = make_case(layer, rng);

    const ParamBinder tracked(c.params, true);
    const Var out = c.build(tracked);
    std::vector<double> weights(out.size());
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& w : weights) w = u(rng);
    ad::backward(score(c, out, weights));
    Gradients analytic = tracked.gradients();
    if (corrupt) corrupt(analytic);

    auto evaluate = [&](const ParameterSet& params) {
      const ParamBinder frozen(params, false);
      return score(c, c.build(frozen), weights).item();
    };
    ParameterSet probe = c.params;
    for (auto& [name, tensor] : probe) {
      double& w = worst[name];
      const auto& a = analytic.at(name);
      for (std::size_t i = 0; i < tensor.data.size(); ++i) {
        const double saved = tensor.data[i];
        tensor.data[i] = saved + kFiniteDifferenceStep;
        const double up = evaluate(probe);
        tensor.data[i] = saved - kFiniteDifferenceStep;
        const double down = evaluate(probe);
        tensor.data[i] = saved;
        const double numeric = (up - down) / (2.0 * kFiniteDifferenceStep);
        // a central difference cannot resolve anything inside its own round-off band
        const double noise = 10.0 * std::numeric_limits<double>::epsilon() *
                             std::max(std::abs(up), std::abs(down)) / kFiniteDifferenceStep;
        const double denom = std::max({std::abs(a[i]), std::abs(numeric), kGradientFloor});
        const double rel = std::max(0.0, std::abs(a[i] - numeric) - noise) / denom;
        w = std::max(w, std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity());
      }
    }
  }
  double max_err = -1.0;
  for (const auto& [name, err] : worst) {
    const bool ok = err < tolerance;
    report.tensors.push_back({name, err, ok});
    report.passed = report.passed && ok;
    if (!ok && err > max_err) {
      max_err = err;
      report.failure = "tensor " + name + " relative error " + std::to_string(err) + " exceeds " +
                       std::to_string(tolerance);
    }
  }
  return report;
}

}  // namespace evcp
