#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evcp/autodiff.hpp"

namespace evcp {

struct Tensor {
  ad::Shape shape;
  std::vector<double> data;

  bool operator==(const Tensor&) const = default;
};

/// Learnable tensors keyed by dotted name. Ordered so that iteration,
/// initialization and serialization are deterministic.
using ParameterSet = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, std::vector<double>>;

enum class InitKind { glorot, zeros, ones };

struct ParameterSpec {
  std::string name;
  ad::Shape shape;
  InitKind init = InitKind::glorot;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases and
/// offsets, unit gains. 1-D glorot tensors are treated as [n x 1] columns.
/// Tensors are drawn in spec order from one stream seeded by `seed`.
ParameterSet initialize(const std::vector<ParameterSpec>& specs, std::uint64_t seed);

/// Throws ErrorKind::shape naming the first missing, extra or mis-shaped tensor.
void audit(const ParameterSet& params, const std::vector<ParameterSpec>& specs);

std::size_t parameter_count(const ParameterSet& params);

/// Exposes a ParameterSet as tape leaves for one forward pass. With
/// track_gradients=false the leaves are constants and no backward closures
/// are recorded, which is what evaluation wants.
class ParamBinder {
 public:
  explicit ParamBinder(const ParameterSet& params, bool track_gradients = true);

  ad::Var operator()(const std::string& name) const;
  bool contains(const std::string& name) const { return leaves_.count(name) != 0; }

  /// Gradients of every bound tensor after ad::backward().
  Gradients gradients() const;

 private:
  std::map<std::string, ad::Var> leaves_;
};

}  // namespace evcp
