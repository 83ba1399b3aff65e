#pragma once

// Differentiable building blocks of the forecaster. Every layer is a free
// function over ad::Var tensors plus a small struct of bound weights; the
// declare_* helpers list the tensors a layer needs so models can build their
// parameter inventory.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "evcp/autodiff.hpp"
#include "evcp/parameters.hpp"
#include "evcp/region_features.hpp"

namespace evcp::layers {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kNormEpsilon = 1e-5;

enum class Mode { train, eval };
enum class NoiseMode { sampled, zero };

/// Per-pass state: dropout and Gumbel noise draw from `rng`.
struct ForwardContext {
  Mode mode = Mode::eval;
  NoiseMode noise = NoiseMode::zero;
  double dropout = 0.0;
  std::mt19937_64 rng{0};

  static ForwardContext evaluation() { return {}; }
  static ForwardContext training(double dropout, std::uint64_t seed) {
    return {Mode::train, NoiseMode::sampled, dropout, std::mt19937_64(seed)};
  }
};

// ------------------------------------------------------------------ weights

void declare_norm(std::vector<ParameterSpec>& specs, const std::string& prefix, std::size_t width);
void declare_glu(std::vector<ParameterSpec>& specs, const std::string& prefix, std::size_t in, std::size_t out);
void declare_grn(std::vector<ParameterSpec>& specs, const std::string& prefix, std::size_t width,
                 std::size_t hidden);
void declare_attention(std::vector<ParameterSpec>& specs, const std::string& name, std::size_t width);
void declare_encoder_block(std::vector<ParameterSpec>& specs, const std::string& prefix, std::size_t d_model);

struct NormWeights {
  ad::Var gain, bias;
  static NormWeights bind(const ParamBinder& p, const std::string& prefix);
};

struct GluWeights {
  ad::Var value_w, value_b, gate_w, gate_b;
  static GluWeights bind(const ParamBinder& p, const std::string& prefix);
};

struct GrnWeights {
  ad::Var hidden_w, hidden_b, proj_w, proj_b;
  GluWeights glu;
  NormWeights norm;
  static GrnWeights bind(const ParamBinder& p, const std::string& prefix);
};

struct EncoderWeights {
  GrnWeights query, key, value, feed_forward;
  NormWeights attention_norm, output_norm;
  static EncoderWeights bind(const ParamBinder& p, const std::string& prefix);
};

// ---------------------------------------------------------------- layers

inline ad::Var elu(const ad::Var& x) { return ad::elu(x); }

/// (x W1 + b1) * sigmoid(x W2 + b2)
ad::Var glu(const ad::Var& x, const GluWeights& w);

/// LayerNorm(x + GLU(W2 ELU(W1 x + b1) + b2)); dropout hits the second dense
/// output in training mode.
ad::Var grn(const ad::Var& x, const GrnWeights& w, ForwardContext& ctx);

/// LayerNorm over the last axis of the elementwise sum of >= 2 inputs.
ad::Var add_norm(std::span<const ad::Var> inputs, const NormWeights& w);

struct AttentionOutput {
  ad::Var values;
  std::vector<double> weights;
};

/// Feature-aware soft attention of one center [D] over members [M, D]:
/// LeakyReLU(sum_j softmax_j(LeakyReLU(w·(center || member_j))) member_j).
AttentionOutput soft_attention(const ad::Var& center, const ad::Var& members, const ad::Var& score_weight);

/// CSR views of a RegionStructure for the two spatial attention layers.
struct AttentionTopology {
  std::size_t areas = 0;
  std::size_t clusters = 0;
  ad::Segments edge_members;    // cluster -> member areas
  ad::Segments node_edges;      // area -> clusters containing it
  ad::Segments node_neighbors;  // area -> adjacent areas, or itself if isolated

  static AttentionTopology from(const RegionStructure& structure);
};

/// Two-step hypergraph attention over [N, T] or [B, N, T] node features.
/// Hyperedges start from the mean of their members, attend over the members,
/// then every node attends over the hyperedges it belongs to.
ad::Var hypergraph_attention(const ad::Var& nodes, const AttentionTopology& topology,
                             const ad::Var& edge_score_weight, const ad::Var& node_score_weight);
ad::Var hypergraph_attention(const ad::Var& nodes, const RegionStructure& structure,
                             const ad::Var& edge_score_weight, const ad::Var& node_score_weight);

/// Graph attention over adjacent areas; isolated areas attend to themselves.
ad::Var graph_attention(const ad::Var& nodes, const AttentionTopology& topology, const ad::Var& score_weight);
ad::Var graph_attention(const ad::Var& nodes, const RegionStructure& structure, const ad::Var& score_weight);

/// Gumbel(0, 1) draws via -ln(-ln U).
std::vector<double> gumbel_noise(std::size_t count, std::mt19937_64& rng);

/// softmax((scores + eps) / temperature) over the last axis, eps ~ Gumbel(0, 1)
/// when sampled and 0 otherwise.
ad::Var gumbel_softmax(const ad::Var& scores, double temperature, NoiseMode noise, std::mt19937_64& rng);
std::vector<double> gumbel_softmax(std::span<const double> scores, double temperature, NoiseMode noise,
                                   std::uint64_t seed);

/// Scaled dot-product attention with a Gumbel-Softmax row activation.
/// q, k, v are [T, D] or [G, T, D]; weights are [G, T, T].
AttentionOutput gated_temporal_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                                         double temperature, NoiseMode noise, std::mt19937_64& rng);

struct SelectionOutput {
  ad::Var combined;  // [..., ]
  ad::Var weights;   // [..., F]
};

/// Variable selection over the last (feature) axis: embedded = GRN_embed(x),
/// weights = softmax(GRN_select(x)), combined = sum_f weights * embedded.
SelectionOutput variable_selection(const ad::Var& features, const GrnWeights& embed, const GrnWeights& select,
                                   ForwardContext& ctx);

/// One encoder block over [G, T, D]:
///   a = GTA(GRN_q(x), GRN_k(x), GRN_v(x)); b = AddNorm(a, x);
///   c = GRN_ff(b); out = AddNorm(b, c).
ad::Var encoder_block(const ad::Var& x, const EncoderWeights& w, double temperature, NoiseMode noise,
                      ForwardContext& ctx);

}  // namespace evcp::layers
