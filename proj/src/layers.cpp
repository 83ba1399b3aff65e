#include "evcp/layers.hpp"

#include <cmath>
#include <limits>

#include "evcp/error.hpp"

namespace evcp::layers {

using ad::Var;

void declare_norm(std::vector<ParameterSpec>& specs, const std::string& prefix, std::size_t width) {
  specs.push_back({prefix + ".gain", {width}, InitKind::ones});
  specs.push_back({prefix + ".bias", {width}, InitKind::zeros});
}

void declare_glu(std::vector<ParameterSpec>& specs, const std::string& prefix, std::size_t in, std::size_t out) {
  specs.push_back({prefix + ".value.w", {in, out}, InitKind::glorot});
  specs.push_back({prefix + ".value.b", {out}, InitKind::zeros});
  specs.push_back({prefix + ".gate.w", {in, out}, InitKind::glorot});
  specs.push_back({prefix + ".gate.b", {out}, InitKind::zeros});
}

void declare_grn(std::vector<ParameterSpec>& specs, const std::string& prefix, std::size_t width,
                 std::size_t hidden) {
  specs.push_back({prefix + ".hidden.w", {width, hidden}, InitKind::glorot});
  specs.push_back({prefix + ".hidden.b", {hidden}, InitKind::zeros});
  specs.push_back({prefix + ".proj.w", {hidden, hidden}, InitKind::glorot});
  specs.push_back({prefix + ".proj.b", {hidden}, InitKind::zeros});
  declare_glu(specs, prefix + ".glu", hidden, width);
  declare_norm(specs, prefix + ".norm", width);
}

void declare_attention(std::vector<ParameterSpec>& specs, const std::string& name, std::size_t width) {
  specs.push_back({name, {2 * width}, InitKind::glorot});
}

void declare_encoder_block(std::vector<ParameterSpec>& specs, const std::string& prefix, std::size_t d_model) {
  declare_grn(specs, prefix + ".query", d_model, d_model);
  declare_grn(specs, prefix + ".key", d_model, d_model);
  declare_grn(specs, prefix + ".value", d_model, d_model);
  declare_norm(specs, prefix + ".attention_norm", d_model);
  declare_grn(specs, prefix + ".feed_forward", d_model, d_model);
  declare_norm(specs, prefix + ".output_norm", d_model);
}

NormWeights NormWeights::bind(const ParamBinder& p, const std::string& prefix) {
  return {p(prefix + ".gain"), p(prefix + ".bias")};
}

GluWeights GluWeights::bind(const ParamBinder& p, const std::string& prefix) {
  return {p(prefix + ".value.w"), p(prefix + ".value.b"), p(prefix + ".gate.w"), p(prefix + ".gate.b")};
}

GrnWeights GrnWeights::bind(const ParamBinder& p, const std::string& prefix) {
  return {p(prefix + ".hidden.w"), p(prefix + ".hidden.b"), p(prefix + ".proj.w"), p(prefix + ".proj.b"),
          GluWeights::bind(p, prefix + ".glu"), NormWeights::bind(p, prefix + ".norm")};
}

EncoderWeights EncoderWeights::bind(const ParamBinder& p, const std::string& prefix) {
  return {GrnWeights::bind(p, prefix + ".query"),
          GrnWeights::bind(p, prefix + ".key"),
          GrnWeights::bind(p, prefix + ".value"),
          GrnWeights::bind(p, prefix + ".feed_forward"),
          NormWeights::bind(p, prefix + ".attention_norm"),
          NormWeights::bind(p, prefix + ".output_norm")};
}

Var glu(const Var& x, const GluWeights& w) {
  return ad::mul(ad::linear(x, w.value_w, w.value_b), ad::sigmoid(ad::linear(x, w.gate_w, w.gate_b)));
}

Var grn(const Var& x, const GrnWeights& w, ForwardContext& ctx) {
  require(w.glu.value_w.dim(1) == x.last_dim(), ErrorKind::shape,
          "grn: output width " + std::to_string(w.glu.value_w.dim(1)) + " must equal input width " +
              std::to_string(x.last_dim()));
  Var hidden = ad::elu(ad::linear(x, w.hidden_w, w.hidden_b));
  Var projected = ad::linear(hidden, w.proj_w, w.proj_b);
  if (ctx.mode == Mode::train && ctx.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - ctx.dropout);
    std::vector<double> mask(projected.size());
    const double scale = 1.0 / (1.0 - ctx.dropout);
    for (double& m : mask) m = keep(ctx.rng) ? scale : 0.0;
    projected = ad::mul_const(projected, mask);
  }
  const Var terms[] = {x, glu(projected, w.glu)};
  return add_norm(terms, w.norm);
}

Var add_norm(std::span<const Var> inputs, const NormWeights& w) {
  require(inputs.size() >= 2, ErrorKind::shape, "add_norm: needs at least two inputs");
  return ad::layer_norm(ad::add_n(inputs), w.gain, w.bias, kNormEpsilon);
}

AttentionOutput soft_attention(const Var& center, const Var& members, const Var& score_weight) {
  require(center.rank() == 1, ErrorKind::shape, "soft_attention: center must be a vector");
  require(members.rank() == 2 && members.dim(0) >= 1, ErrorKind::structure,
          "soft_attention: empty member set");
  require(members.dim(1) == center.dim(0), ErrorKind::shape, "soft_attention: center and members differ in width");
  const std::size_t m = members.dim(0), d = center.dim(0);
  ad::Segments seg;
  std::vector<std::size_t> all(m);
  for (std::size_t j = 0; j < m; ++j) all[j] = j;
  seg.push(all);
  auto att = ad::segment_attention(ad::reshape(center, {1, 1, d}), ad::reshape(members, {1, m, d}), seg,
                                   score_weight, kLeakySlope);
  return {ad::reshape(ad::leaky_relu(att.values, kLeakySlope), {d}), std::move(att.weights)};
}

AttentionTopology AttentionTopology::from(const RegionStructure& s) {
  AttentionTopology t;
  t.areas = s.areas;
  t.clusters = s.clusters;
  for (std::size_t c = 0; c < s.clusters; ++c) {
    auto members = s.members(c);
    require(!members.empty(), ErrorKind::structure, "hyperedge " + std::to_string(c) + " is empty");
    t.edge_members.push(members);
  }
  for (std::size_t a = 0; a < s.areas; ++a) {
    std::vector<std::size_t> edges;
    for (std::size_t c = 0; c < s.clusters; ++c)
      if (s.incidence(a, c) != 0.0) edges.push_back(c);
    require(!edges.empty(), ErrorKind::structure, "area " + std::to_string(a) + " belongs to no hyperedge");
    t.node_edges.push(edges);
    auto nb = s.neighbors(a);
    if (nb.empty()) nb.push_back(a);
    t.node_neighbors.push(nb);
  }
  return t;
}

namespace {

// Lifts [N, T] to [1, N, T]; remembers whether to squeeze back.
std::pair<Var, bool> as_batched(const Var& x, std::size_t areas, const char* op) {
  if (x.rank() == 2) {
    require(x.dim(0) == areas, ErrorKind::structure,
            std::string(op) + ": " + std::to_string(x.dim(0)) + " rows for " + std::to_string(areas) + " areas");
    return {ad::reshape(x, {1, x.dim(0), x.dim(1)}), true};
  }
  require(x.rank() == 3 && x.dim(1) == areas, ErrorKind::structure,
          std::string(op) + ": expected [N, T] or [B, N, T] with N = " + std::to_string(areas) + ", got " +
              ad::to_string(x.shape()));
  return {x, false};
}

Var unbatch(const Var& y, bool squeeze) { return squeeze ? ad::reshape(y, {y.dim(1), y.dim(2)}) : y; }

}  // namespace

Var hypergraph_attention(const Var& nodes, const AttentionTopology& t, const Var& edge_w, const Var& node_w) {
  auto [x, squeeze] = as_batched(nodes, t.areas, "hypergraph_attention");
  Var edge_centers = ad::segment_mean(x, t.edge_members);
  Var edges = ad::leaky_relu(
      ad::segment_attention(edge_centers, x, t.edge_members, edge_w, kLeakySlope).values, kLeakySlope);
  Var updated = ad::leaky_relu(ad::segment_attention(x, edges, t.node_edges, node_w, kLeakySlope).values,
                               kLeakySlope);
  return unbatch(updated, squeeze);
}

Var hypergraph_attention(const Var& nodes, const RegionStructure& s, const Var& edge_w, const Var& node_w) {
  return hypergraph_attention(nodes, AttentionTopology::from(s), edge_w, node_w);
}

Var graph_attention(const Var& nodes, const AttentionTopology& t, const Var& w) {
  auto [x, squeeze] = as_batched(nodes, t.areas, "graph_attention");
  Var y = ad::leaky_relu(ad::segment_attention(x, x, t.node_neighbors, w, kLeakySlope).values, kLeakySlope);
  return unbatch(y, squeeze);
}

Var graph_attention(const Var& nodes, const RegionStructure& s, const Var& w) {
  return graph_attention(nodes, AttentionTopology::from(s), w);
}

std::vector<double> gumbel_noise(std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  std::vector<double> eps(count);
  for (double& e : eps) e = -std::log(-std::log(u(rng)));
  return eps;
}

Var gumbel_softmax(const Var& scores, double temperature, NoiseMode noise, std::mt19937_64& rng) {
  require(temperature > 0.0, ErrorKind::domain, "gumbel_softmax: temperature must be positive");
  if (noise == NoiseMode::zero) return ad::tempered_softmax(scores, temperature);
  const auto eps = gumbel_noise(scores.size(), rng);
  return ad::tempered_softmax(scores, temperature, eps);
}

std::vector<double> gumbel_softmax(std::span<const double> scores, double temperature, NoiseMode noise,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var s = Var::constant({scores.size()}, std::vector<double>(scores.begin(), scores.end()));
  Var w = gumbel_softmax(s, temperature, noise, rng);
  return {w.value().begin(), w.value().end()};
}

AttentionOutput gated_temporal_attention(const Var& q, const Var& k, const Var& v, double temperature,
                                         NoiseMode noise, std::mt19937_64& rng) {
  require(q.shape() == k.shape() && q.shape() == v.shape() && (q.rank() == 2 || q.rank() == 3), ErrorKind::shape,
          "gated_temporal_attention: q, k, v must share a [T, D] or [G, T, D] shape");
  const bool squeeze = q.rank() == 2;
  auto lift = [&](const Var& x) { return squeeze ? ad::reshape(x, {1, x.dim(0), x.dim(1)}) : x; };
  Var q3 = lift(q), k3 = lift(k), v3 = lift(v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q3.dim(2)));
  Var scores = ad::scale(ad::matmul_nt(q3, k3), scale);
  Var weights = gumbel_softmax(scores, temperature, noise, rng);
  Var out = ad::batched_matmul(weights, v3);
  if (squeeze) out = ad::reshape(out, {q.dim(0), q.dim(1)});
  return {out, {weights.value().begin(), weights.value().end()}};
}

SelectionOutput variable_selection(const Var& features, const GrnWeights& embed, const GrnWeights& select,
                                   ForwardContext& ctx) {
  require(features.rank() >= 1 && features.last_dim() >= 1, ErrorKind::shape,
          "variable_selection: features need a trailing feature axis");
  Var embedded = grn(features, embed, ctx);
  Var weights = ad::tempered_softmax(grn(features, select, ctx), 1.0);
  return {ad::weighted_sum_last(weights, embedded), weights};
}

Var encoder_block(const Var& x, const EncoderWeights& w, double temperature, NoiseMode noise, ForwardContext& ctx) {
  require(x.rank() == 3, ErrorKind::shape, "encoder_block: expected [G, T, D], got " + ad::to_string(x.shape()));
  Var q = grn(x, w.query, ctx);
  Var k = grn(x, w.key, ctx);
  Var v = grn(x, w.value, ctx);
  Var attended = gated_temporal_attention(q, k, v, temperature, noise, ctx.rng).values;
  const Var first[] = {attended, x};
  Var normed = add_norm(first, w.attention_norm);
  Var ff = grn(normed, w.feed_forward, ctx);
  const Var second[] = {normed, ff};
  return add_norm(second, w.output_norm);
}

}  // namespace evcp::layers
