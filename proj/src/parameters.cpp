#include "evcp/parameters.hpp"

#include <cmath>
#include <random>

#include "evcp/error.hpp"

namespace evcp {

ParameterSet initialize(const std::vector<ParameterSpec>& specs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet params;
  for (const auto& spec : specs) {
    require(!params.count(spec.name), ErrorKind::config, "duplicate parameter " + spec.name);
    Tensor t{spec.shape, std::vector<double>(ad::numel(spec.shape), 0.0)};
    switch (spec.init) {
      case InitKind::zeros:
        break;
      case InitKind::ones:
        std::fill(t.data.begin(), t.data.end(), 1.0);
        break;
      case InitKind::glorot: {
        const double fan_in = static_cast<double>(spec.shape.empty() ? 1 : spec.shape[0]);
        const double fan_out = static_cast<double>(spec.shape.size() > 1 ? spec.shape[1] : 1);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& v : t.data) v = dist(rng);
        break;
      }
    }
    params.emplace(spec.name, std::move(t));
  }
  return params;
}

void audit(const ParameterSet& params, const std::vector<ParameterSpec>& specs) {
  for (const auto& spec : specs) {
    auto it = params.find(spec.name);
    require(it != params.end(), ErrorKind::shape, "parameter audit: missing tensor " + spec.name);
    require(it->second.shape == spec.shape, ErrorKind::shape,
            "parameter audit: " + spec.name + " has shape " + ad::to_string(it->second.shape) +
                ", expected " + ad::to_string(spec.shape));
    require(it->second.data.size() == ad::numel(spec.shape), ErrorKind::shape,
            "parameter audit: " + spec.name + " holds the wrong number of values");
    for (double v : it->second.data)
      require(std::isfinite(v), ErrorKind::numeric, "parameter audit: " + spec.name + " is not finite");
  }
  require(params.size() == specs.size(), ErrorKind::shape,
          "parameter audit: expected " + std::to_string(specs.size()) + " tensors, found " +
              std::to_string(params.size()));
}

std::size_t parameter_count(const ParameterSet& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.data.size();
  return n;
}

ParamBinder::ParamBinder(const ParameterSet& params, bool track_gradients) {
  for (const auto& [name, t] : params)
    leaves_.emplace(name, track_gradients ? ad::Var::parameter(t.shape, t.data)
                                          : ad::Var::constant(t.shape, t.data));
}

ad::Var ParamBinder::operator()(const std::string& name) const {
  auto it = leaves_.find(name);
  require(it != leaves_.end(), ErrorKind::shape, "unknown parameter " + name);
  return it->second;
}

Gradients ParamBinder::gradients() const {
  Gradients grads;
  for (const auto& [name, leaf] : leaves_) grads.emplace(name, leaf.grad());
  return grads;
}

}  // namespace evcp
