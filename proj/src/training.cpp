#include "evcp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "evcp/error.hpp"
#include "evcp/layers.hpp"
#include "json_fields.hpp"

namespace evcp {

using nlohmann::json;

void TrainConfig::validate() const {
  require(max_epochs >= 1, ErrorKind::config, "train.max_epochs must be positive");
  require(patience >= 1, ErrorKind::config, "train.patience must be positive");
  require(patience < max_epochs, ErrorKind::config, "train.patience must be smaller than train.max_epochs");
  require(batch_size >= 1, ErrorKind::config, "train.batch_size must be positive");
  require(chunk_size >= 1, ErrorKind::config, "train.chunk_size must be positive");
  require(std::isfinite(learning_rate) && learning_rate >= 0.0, ErrorKind::config,
          "train.learning_rate must be finite and nonnegative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::config,
          "train.beta1 and train.beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, ErrorKind::config, "train.adam_eps must be positive");
  require(clip_norm >= 0.0, ErrorKind::config, "train.clip_norm must be nonnegative");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"max_epochs", c.max_epochs}, {"patience", c.patience},   {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate}, {"beta1", c.beta1},   {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},     {"clip_norm", c.clip_norm}, {"chunk_size", c.chunk_size},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  const std::string where = "train";
  detail::reject_unknown_keys(j,
                              {"max_epochs", "patience", "batch_size", "learning_rate", "beta1", "beta2",
                               "adam_eps", "clip_norm", "chunk_size", "seed"},
                              where);
  detail::read_field(j, "max_epochs", c.max_epochs, where);
  detail::read_field(j, "patience", c.patience, where);
  detail::read_field(j, "batch_size", c.batch_size, where);
  detail::read_field(j, "learning_rate", c.learning_rate, where);
  detail::read_field(j, "beta1", c.beta1, where);
  detail::read_field(j, "beta2", c.beta2, where);
  detail::read_field(j, "adam_eps", c.adam_eps, where);
  detail::read_field(j, "clip_norm", c.clip_norm, where);
  detail::read_field(j, "chunk_size", c.chunk_size, where);
  detail::read_field(j, "seed", c.seed, where);
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  };
  std::uint64_t h = mix(base);
  for (std::uint64_t p : path) h = mix(h ^ mix(p));
  return h;
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size(), ErrorKind::shape,
          "mse_loss: " + std::to_string(pred.size()) + " predictions for " + std::to_string(target.size()) +
              " targets");
  require(!pred.empty(), ErrorKind::empty_batch, "mse_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, std::size_t t,
               const TrainConfig& c) {
  require(t >= 1, ErrorKind::domain, "adam_step: step index starts at 1");
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    require(it != params.end(), ErrorKind::shape, "adam_step: gradient for unknown tensor " + name);
    require(g.size() == it->second.data.size(), ErrorKind::shape, "adam_step: gradient size mismatch for " + name);
    for (std::size_t i = 0; i < g.size(); ++i)
      require(std::isfinite(g[i]), ErrorKind::numeric,
              "non-finite gradient in tensor " + name + " at element " + std::to_string(i));
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (auto& [name, tensor] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(tensor.data.size(), 0.0);
    v.resize(tensor.data.size(), 0.0);
    auto g = grads.find(name);
    for (std::size_t i = 0; i < tensor.data.size(); ++i) {
      const double gi = g == grads.end() ? 0.0 : g->second[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      tensor.data[i] -= c.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.adam_eps);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g) x *= f;
  }
  return norm;
}

json history_json(const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"clipped_steps", e.clipped_steps}});
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"best_val_loss", h.best_val_loss},
          {"stop_reason", h.stop_reason}};
}

TrainHistory history_from_json(const json& j) {
  TrainHistory h;
  try {
    for (const auto& e : j.at("epochs"))
      h.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                          e.at("val_loss").get<double>(), e.value("seconds", 0.0),
                          e.at("clipped_steps").get<std::size_t>()});
    h.best_epoch = j.at("best_epoch").get<std::size_t>();
    h.best_val_loss = j.at("best_val_loss").get<double>();
    h.stop_reason = j.at("stop_reason").get<std::string>();
  } catch (const json::exception& e) {
    raise(ErrorKind::load, std::string("bad training history: ") + e.what());
  }
  return h;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorKind::io, "cannot write " + path.string());
  f << "epoch,train_loss,val_loss,clipped_steps\n";
  char buf[128];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu\n", e.epoch, e.train_loss, e.val_loss, e.clipped_steps);
    f << buf;
  }
}

void write_timing_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorKind::io, "cannot write " + path.string());
  f << "epoch,seconds\n";
  char buf[64];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.3f\n", e.epoch, e.seconds);
    f << buf;
  }
}

TrainState initial_train_state(const ModelState& model) {
  audit(model);
  TrainState s;
  s.model = model;
  s.best = model;
  return s;
}

namespace {

void put_prefixed(ParameterSet& out, const std::string& prefix, const ParameterSet& tensors) {
  for (const auto& [name, t] : tensors) out[prefix + name] = t;
}

void put_moments(ParameterSet& out, const std::string& prefix, const std::map<std::string, std::vector<double>>& m) {
  for (const auto& [name, v] : m) out[prefix + name] = Tensor{{v.size()}, v};
}

}  // namespace

void save_train_state(const std::filesystem::path& path, const TrainState& s) {
  ParameterSet tensors;
  put_prefixed(tensors, "model/", s.model.parameters);
  put_prefixed(tensors, "best/", s.best.parameters);
  put_moments(tensors, "adam.m/", s.adam.m);
  put_moments(tensors, "adam.v/", s.adam.v);
  json header{{"kind", "train_state"},
              {"config", s.model.config},
              {"init_seed", s.model.init_seed},
              {"step", s.step},
              {"history", history_json(s.history)}};
  save_tensor_file(path, header, tensors);
}

TrainState load_train_state(const std::filesystem::path& path) {
  auto [header, tensors] = load_tensor_file(path);
  require(header.value("kind", "") == "train_state", ErrorKind::load, path.string() + ": not a training state");
  TrainState s;
  try {
    s.model.config = header.at("config").get<ModelConfig>();
    s.model.init_seed = header.at("init_seed").get<std::uint64_t>();
    s.step = header.at("step").get<std::size_t>();
  } catch (const json::exception& e) {
    raise(ErrorKind::load, path.string() + ": bad header: " + e.what());
  }
  s.history = history_from_json(header.at("history"));
  s.best.config = s.model.config;
  s.best.init_seed = s.model.init_seed;
  for (auto& [name, t] : tensors) {
    const auto slash = name.find('/');
    require(slash != std::string::npos, ErrorKind::load, path.string() + ": unexpected tensor " + name);
    const std::string group = name.substr(0, slash), key = name.substr(slash + 1);
    if (group == "model") s.model.parameters[key] = std::move(t);
    else if (group == "best") s.best.parameters[key] = std::move(t);
    else if (group == "adam.m") s.adam.m[key] = std::move(t.data);
    else if (group == "adam.v") s.adam.v[key] = std::move(t.data);
    else raise(ErrorKind::load, path.string() + ": unexpected tensor " + name);
  }
  audit(s.model);
  audit(s.best);
  return s;
}

double evaluate_loss(const ModelState& model, const WindowBatch& data, const RegionStructure& structure,
                     std::size_t chunk) {
  return mse_loss(predict(model, data, structure, chunk), data.targets);
}

TrainState train(TrainState state, const WindowBatch& train_data, const WindowBatch& val_data,
                 const RegionStructure& structure, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  require(train_data.samples > 0, ErrorKind::empty_batch, "train: no training windows");
  require(val_data.samples > 0, ErrorKind::empty_batch, "train: no validation windows");
  audit(state.model);
  const ModelConfig& mc = state.model.config;
  const auto topology = layers::AttentionTopology::from(structure);
  auto& history = state.history;
  if (history.stop_reason == "max_epochs" && history.epochs.back().epoch < config.max_epochs)
    history.stop_reason.clear();
  if (!history.stop_reason.empty()) return state;

  const std::size_t first_epoch = history.epochs.empty() ? 1 : history.epochs.back().epoch + 1;
  for (std::size_t epoch = first_epoch; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_data.samples);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t clipped = 0;
    for (std::size_t bstart = 0, bidx = 0; bstart < order.size(); bstart += config.batch_size, ++bidx) {
      const std::size_t bend = std::min(order.size(), bstart + config.batch_size);
      const WindowBatch batch =
          select_samples(train_data, std::span<const std::size_t>(order).subspan(bstart, bend - bstart));
      Gradients grads;
      double batch_loss = 0.0;
      for (std::size_t cstart = 0, cidx = 0; cstart < batch.samples; cstart += config.chunk_size, ++cidx) {
        const std::size_t cend = std::min(batch.samples, cstart + config.chunk_size);
        const ParamBinder params(state.model.parameters, true);
        auto ctx = layers::ForwardContext::training(mc.dropout, derive_seed(config.seed, {epoch, bidx, cidx}));
        const ad::Var pred = forward_graph(mc, params, batch_inputs(batch, cstart, cend), topology, ctx);
        const std::vector<double> target = batch_targets(batch, cstart, cend);
        const double weight = static_cast<double>(cend - cstart) / static_cast<double>(batch.samples);
        const ad::Var loss = ad::scale(ad::mse(pred, target), weight);
        ad::backward(loss);
        batch_loss += loss.item();
        for (auto& [name, g] : params.gradients()) {
          auto& acc = grads[name];
          if (acc.empty()) acc.assign(g.size(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
      }
      if (!std::isfinite(batch_loss)) {
        history.stop_reason = "diverged";
        raise(ErrorKind::numeric, "training loss became non-finite in epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(bidx) + "; last good epoch " +
                                      std::to_string(history.epochs.empty() ? 0 : history.epochs.back().epoch));
      }
      if (clip_global_norm(grads, config.clip_norm) > config.clip_norm && config.clip_norm > 0.0) ++clipped;
      adam_step(state.model.parameters, grads, state.adam, ++state.step, config);
      loss_sum += batch_loss * static_cast<double>(batch.samples);
    }

    const double val_loss = evaluate_loss(state.model, val_data, structure, config.chunk_size);
    require(std::isfinite(val_loss), ErrorKind::numeric,
            "validation loss became non-finite in epoch " + std::to_string(epoch));
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    history.epochs.push_back(
        {epoch, loss_sum / static_cast<double>(train_data.samples), val_loss, seconds, clipped});
    if (history.best_epoch == 0 || val_loss < history.best_val_loss) {
      history.best_epoch = epoch;
      history.best_val_loss = val_loss;
      state.best = state.model;
    }
    if (epoch - history.best_epoch >= config.patience) history.stop_reason = "patience";
    else if (epoch == config.max_epochs) history.stop_reason = "max_epochs";
    if (on_epoch) on_epoch(state);
    if (!history.stop_reason.empty()) break;
  }
  return state;
}

TrainState train(const ModelState& model, const WindowBatch& train_data, const WindowBatch& val_data,
                 const RegionStructure& structure, const TrainConfig& config, const EpochCallback& on_epoch) {
  return train(initial_train_state(model), train_data, val_data, structure, config, on_epoch);
}

}  // namespace evcp
