#include "evcp/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "evcp/error.hpp"
#include "json_fields.hpp"

namespace evcp {

using nlohmann::json;

void ModelConfig::validate() const {
  require(lookback >= 1, ErrorKind::config, "model.lookback must be positive");
  require(clusters >= 1, ErrorKind::config, "model.clusters must be positive");
  require(encoder_blocks >= 1, ErrorKind::config, "model.encoder_blocks must be positive");
  require(d_model >= 1, ErrorKind::config, "model.d_model must be positive");
  require(std::isfinite(temperature) && temperature > 0.0, ErrorKind::config,
          "model.temperature must be positive");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::config, "model.dropout must lie in [0, 1)");
  require(!horizons.empty(), ErrorKind::config, "model.horizons must not be empty");
  for (int h : horizons) require(h >= 1, ErrorKind::config, "model.horizons must be positive step offsets");
}

std::vector<std::string> ModelConfig::feature_order() const {
  std::vector<std::string> names{"fused_demand"};
  if (use_price) names.push_back("price");
  if (use_temperature) names.push_back("temperature");
  return names;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"lookback", c.lookback},
           {"clusters", c.clusters},
           {"encoder_blocks", c.encoder_blocks},
           {"temperature", c.temperature},
           {"d_model", c.d_model},
           {"horizons", c.horizons},
           {"dropout", c.dropout},
           {"use_hypergraph", c.use_hypergraph},
           {"use_graph", c.use_graph},
           {"use_encoder", c.use_encoder},
           {"use_price", c.use_price},
           {"use_temperature", c.use_temperature},
           {"use_variable_selection", c.use_variable_selection},
           {"gumbel", c.gumbel},
           {"demand_skip", c.demand_skip}};
}

void from_json(const json& j, ModelConfig& c) {
  const std::string where = "model";
  detail::reject_unknown_keys(j,
                              {"lookback", "clusters", "encoder_blocks", "temperature", "d_model", "horizons",
                               "dropout", "use_hypergraph", "use_graph", "use_encoder", "use_price",
                               "use_temperature", "use_variable_selection", "gumbel", "demand_skip"},
                              where);
  detail::read_field(j, "lookback", c.lookback, where);
  detail::read_field(j, "clusters", c.clusters, where);
  detail::read_field(j, "encoder_blocks", c.encoder_blocks, where);
  detail::read_field(j, "temperature", c.temperature, where);
  detail::read_field(j, "d_model", c.d_model, where);
  detail::read_field(j, "horizons", c.horizons, where);
  detail::read_field(j, "dropout", c.dropout, where);
  detail::read_field(j, "use_hypergraph", c.use_hypergraph, where);
  detail::read_field(j, "use_graph", c.use_graph, where);
  detail::read_field(j, "use_encoder", c.use_encoder, where);
  detail::read_field(j, "use_price", c.use_price, where);
  detail::read_field(j, "use_temperature", c.use_temperature, where);
  detail::read_field(j, "use_variable_selection", c.use_variable_selection, where);
  detail::read_field(j, "gumbel", c.gumbel, where);
  detail::read_field(j, "demand_skip", c.demand_skip, where);
}

namespace {

std::size_t decoder_width(const ModelConfig& c) {
  return (c.use_encoder ? c.lookback * c.d_model : c.lookback) + (c.demand_skip ? c.lookback : 0);
}

}  // namespace

std::vector<ParameterSpec> parameter_specs(const ModelConfig& c) {
  c.validate();
  std::vector<ParameterSpec> specs;
  if (c.use_hypergraph) {
    layers::declare_attention(specs, "hyper.edge_score", c.lookback);
    layers::declare_attention(specs, "hyper.node_score", c.lookback);
  }
  if (c.use_graph) layers::declare_attention(specs, "graph.score", c.lookback);
  layers::declare_norm(specs, "fusion.norm", c.lookback);
  if (c.use_variable_selection) {
    layers::declare_grn(specs, "vsn.embed", c.feature_count(), c.d_model);
    layers::declare_grn(specs, "vsn.select", c.feature_count(), c.d_model);
  }
  if (c.use_encoder) {
    specs.push_back({"lift.w", {1, c.d_model}, InitKind::glorot});
    specs.push_back({"lift.b", {c.d_model}, InitKind::zeros});
    for (std::size_t b = 0; b < c.encoder_blocks; ++b)
      layers::declare_encoder_block(specs, "encoder." + std::to_string(b), c.d_model);
  }
  specs.push_back({"decoder.w", {decoder_width(c), c.horizons.size()}, InitKind::glorot});
  specs.push_back({"decoder.b", {c.horizons.size()}, InitKind::zeros});
  return specs;
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  return {config, initialize(parameter_specs(config), seed), seed};
}

void audit(const ModelState& state) { audit(state.parameters, parameter_specs(state.config)); }

ad::Var batch_inputs(const WindowBatch& batch, std::size_t begin, std::size_t end) {
  require(begin < end && end <= batch.samples, ErrorKind::empty_batch,
          "batch_inputs: sample range [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
              std::to_string(batch.samples));
  const std::size_t per = batch.areas * batch.lookback * WindowBatch::kFeatures;
  std::vector<double> values(batch.inputs.begin() + static_cast<std::ptrdiff_t>(begin * per),
                             batch.inputs.begin() + static_cast<std::ptrdiff_t>(end * per));
  return ad::Var::constant({end - begin, batch.areas, batch.lookback, WindowBatch::kFeatures}, std::move(values));
}

std::vector<double> batch_targets(const WindowBatch& batch, std::size_t begin, std::size_t end) {
  const std::size_t per = batch.areas * batch.horizons.size();
  return {batch.targets.begin() + static_cast<std::ptrdiff_t>(begin * per),
          batch.targets.begin() + static_cast<std::ptrdiff_t>(end * per)};
}

namespace {

// One feature plane of a [B, N, T, 3] input as a constant [B, N, T].
ad::Var feature_plane(const ad::Var& inputs, std::size_t feature) {
  const auto v = inputs.value();
  const std::size_t count = v.size() / WindowBatch::kFeatures;
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = v[i * WindowBatch::kFeatures + feature];
  return ad::Var::constant({inputs.dim(0), inputs.dim(1), inputs.dim(2)}, std::move(out));
}

}  // namespace

ad::Var forward_graph(const ModelConfig& c, const ParamBinder& p, const ad::Var& inputs,
                      const layers::AttentionTopology& topology, layers::ForwardContext& ctx) {
  require(inputs.rank() == 4 && inputs.dim(3) == WindowBatch::kFeatures, ErrorKind::shape,
          "forward: inputs must be [B, N, lookback, 3], got " + ad::to_string(inputs.shape()));
  require(inputs.dim(2) == c.lookback, ErrorKind::shape,
          "forward: window length " + std::to_string(inputs.dim(2)) + " differs from lookback " +
              std::to_string(c.lookback));
  require(inputs.dim(1) == topology.areas, ErrorKind::structure,
          "forward: batch has " + std::to_string(inputs.dim(1)) + " areas, structure has " +
              std::to_string(topology.areas));
  const std::size_t B = inputs.dim(0), N = inputs.dim(1), T = c.lookback;

  const ad::Var demand = feature_plane(inputs, 0);

  std::vector<ad::Var> fused;
  if (c.use_hypergraph)
    fused.push_back(layers::hypergraph_attention(demand, topology, p("hyper.edge_score"), p("hyper.node_score")));
  if (c.use_graph) fused.push_back(layers::graph_attention(demand, topology, p("graph.score")));
  fused.push_back(demand);
  const ad::Var H = ad::layer_norm(ad::add_n(fused), p("fusion.norm.gain"), p("fusion.norm.bias"),
                                   layers::kNormEpsilon);

  std::vector<ad::Var> features{H};
  if (c.use_price) features.push_back(feature_plane(inputs, 1));
  if (c.use_temperature) features.push_back(feature_plane(inputs, 2));
  const ad::Var xi = ad::stack_last(features);

  ad::Var selected;
  if (c.use_variable_selection) {
    selected = layers::variable_selection(xi, layers::GrnWeights::bind(p, "vsn.embed"),
                                          layers::GrnWeights::bind(p, "vsn.select"), ctx)
                   .combined;
  } else {
    selected = ad::mean_last(xi);
  }

  ad::Var flat;
  if (c.use_encoder) {
    ad::Var z = ad::linear(ad::reshape(selected, {B * N, T, 1}), p("lift.w"), p("lift.b"));
    const double temperature = c.gumbel ? c.temperature : 1.0;
    const layers::NoiseMode noise = c.gumbel ? ctx.noise : layers::NoiseMode::zero;
    for (std::size_t b = 0; b < c.encoder_blocks; ++b)
      z = layers::encoder_block(z, layers::EncoderWeights::bind(p, "encoder." + std::to_string(b)), temperature,
                                noise, ctx);
    flat = ad::reshape(z, {B, N, T * c.d_model});
  } else {
    flat = selected;
  }
  if (c.demand_skip) {
    const ad::Var parts[] = {flat, demand};
    flat = ad::concat_last(parts);
  }
  return ad::linear(flat, p("decoder.w"), p("decoder.b"));
}

std::vector<double> predict(const ModelState& state, const WindowBatch& batch, const RegionStructure& structure,
                            std::size_t chunk) {
  require(chunk >= 1, ErrorKind::config, "predict: chunk must be positive");
  require(batch.horizons.size() == state.config.horizons.size(), ErrorKind::shape,
          "predict: batch carries " + std::to_string(batch.horizons.size()) + " horizons, model emits " +
              std::to_string(state.config.horizons.size()));
  const ParamBinder params(state.parameters, false);
  const auto topology = layers::AttentionTopology::from(structure);
  std::vector<double> out;
  out.reserve(batch.samples * batch.areas * batch.horizons.size());
  for (std::size_t begin = 0; begin < batch.samples; begin += chunk) {
    const std::size_t end = std::min(batch.samples, begin + chunk);
    auto ctx = layers::ForwardContext::evaluation();
    const ad::Var y = forward_graph(state.config, params, batch_inputs(batch, begin, end), topology, ctx);
    out.insert(out.end(), y.value().begin(), y.value().end());
  }
  return out;
}

// ------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'E', 'V', 'C', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void put_uint(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t end, std::string path) : data_(data), end_(end), path_(std::move(path)) {}

  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    require(n <= end_ - pos_, ErrorKind::load, path_ + ": truncated tensor file");
  }
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

}  // namespace

void save_tensor_file(const std::filesystem::path& path, const json& header, const ParameterSet& tensors) {
  std::string out(kMagic, sizeof kMagic);
  put_uint(out, kVersion, 4);
  const std::string text = header.dump();
  put_uint(out, text.size(), 8);
  out += text;
  put_uint(out, tensors.size(), 8);
  for (const auto& [name, t] : tensors) {
    require(t.data.size() == ad::numel(t.shape), ErrorKind::shape, "tensor " + name + " has inconsistent size");
    put_uint(out, name.size(), 4);
    out += name;
    put_uint(out, t.shape.size(), 4);
    for (std::size_t d : t.shape) put_uint(out, d, 8);
    for (double v : t.data) put_uint(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  put_uint(out, fnv1a(out), 8);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), ErrorKind::io, "cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    require(static_cast<bool>(f), ErrorKind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::io, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::pair<json, ParameterSet> load_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  require(data.size() >= sizeof kMagic + 4 + 8 + 8 + 8, ErrorKind::load, where + ": file too short");
  require(std::memcmp(data.data(), kMagic, sizeof kMagic) == 0, ErrorKind::load, where + ": not a checkpoint");

  const std::size_t body = data.size() - 8;
  Reader tail(data, data.size(), where);
  tail.bytes(body);
  require(tail.uint(8) == fnv1a(data.substr(0, body)), ErrorKind::load, where + ": checksum mismatch");

  Reader r(data, body, where);
  r.bytes(sizeof kMagic);
  const auto version = r.uint(4);
  require(version == kVersion, ErrorKind::load,
          where + ": unsupported version " + std::to_string(version) + " (expected " + std::to_string(kVersion) + ")");
  json header;
  try {
    header = json::parse(r.bytes(r.uint(8)));
  } catch (const json::exception& e) {
    raise(ErrorKind::load, where + ": bad header: " + e.what());
  }
  ParameterSet tensors;
  const auto count = r.uint(8);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.uint(4));
    Tensor t;
    const auto rank = r.uint(4);
    for (std::uint64_t d = 0; d < rank; ++d) t.shape.push_back(r.uint(8));
    const std::size_t n = ad::numel(t.shape);
    require(n <= body / 8, ErrorKind::load, where + ": implausible tensor size for " + name);
    t.data.resize(n);
    for (double& v : t.data) v = std::bit_cast<double>(r.uint(8));
    tensors.emplace(std::move(name), std::move(t));
  }
  require(r.done(), ErrorKind::load, where + ": trailing bytes after tensors");
  return {std::move(header), std::move(tensors)};
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const json& extra) {
  audit(state);
  json header{{"kind", "model"},
              {"config", state.config},
              {"feature_order", state.config.feature_order()},
              {"seed_lineage", {{"init_seed", state.init_seed}}},
              {"extra", extra}};
  save_tensor_file(path, header, state.parameters);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) { return load_tensor_file(path).first; }

namespace {

ModelState state_from(const json& header, ParameterSet params, const std::filesystem::path& path) {
  require(header.value("kind", "") == "model", ErrorKind::load, path.string() + ": not a model checkpoint");
  ModelState state;
  try {
    state.config = header.at("config").get<ModelConfig>();
    state.init_seed = header.at("seed_lineage").at("init_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    raise(ErrorKind::load, path.string() + ": bad header: " + e.what());
  }
  state.parameters = std::move(params);
  return state;
}

}  // namespace

ModelState load_checkpoint(const std::filesystem::path& path) {
  auto [header, params] = load_tensor_file(path);
  ModelState state = state_from(header, std::move(params), path);
  audit(state);
  return state;
}

ModelState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto [header, params] = load_tensor_file(path);
  ModelState state = state_from(header, std::move(params), path);
  audit(state.parameters, parameter_specs(expected));
  state.config = expected;
  return state;
}

}  // namespace evcp
