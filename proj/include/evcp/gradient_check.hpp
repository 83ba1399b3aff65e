#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evcp/parameters.hpp"

namespace evcp {

struct TensorCheck {
  std::string name;
  /// Largest elementwise relative error over every trial.
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradientReport {
  std::string layer;
  std::size_t trials = 0;
  double tolerance = 0.0;
  bool passed = true;
  std::vector<TensorCheck> tensors;
  /// Names the worst tensor when the check fails.
  std::string failure;
};

/// Applied to the analytic gradients before comparison; lets tests prove the
/// harness notices a wrong gradient.
using GradientCorruption = std::function<void(Gradients&)>;

/// elu, glu, grn, soft_attention, hypergraph_attention, graph_attention,
/// add_norm, gumbel_softmax, gated_temporal_attention, variable_selection,
/// encoder_block and model (full forward pass under MSE on a [1, 3, 12] batch).
const std::vector<std::string>& gradient_layers();

/// Central finite differences (step 1e-5) against reverse-mode gradients on
/// random small instances, zero noise and no dropout. Layers are scored on a
/// fixed random weighting of their outputs; inputs are checked alongside the
/// parameters. Relative error is (|a - n| - r) / max(|a|, |n|, kGradientFloor),
/// with r = 10 eps max(|f+|, |f-|) / step the round-off of the difference (clamped at 0).
GradientReport check_gradients(const std::string& layer, std::size_t trials, double tolerance,
                               std::uint64_t seed = 0, const GradientCorruption& corrupt = {});

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kGradientFloor = 1e-6;

}  // namespace evcp
