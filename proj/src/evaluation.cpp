#include "evcp/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "evcp/error.hpp"

namespace evcp {

using nlohmann::json;

MetricReport metrics(std::span<const double> pred, std::span<const double> target, std::size_t samples,
                     std::size_t areas, std::span<const int> horizons) {
  const std::size_t H = horizons.size();
  require(H >= 1, ErrorKind::shape, "metrics: no horizons");
  require(pred.size() == target.size(), ErrorKind::shape,
          "metrics: " + std::to_string(pred.size()) + " predictions for " + std::to_string(target.size()) + " targets");
  require(pred.size() == samples * areas * H, ErrorKind::shape, "metrics: size does not match [S, N, H]");
  require(samples * areas >= 2, ErrorKind::insufficient_data, "metrics: need at least two values per horizon");

  MetricReport r;
  r.samples = samples;
  r.areas = areas;
  const std::size_t rows = samples * areas;
  bool all_rae = true;
  double sum_rae = 0.0, sum_r2 = 0.0;
  for (std::size_t h = 0; h < H; ++h) {
    double mean = 0.0;
    for (std::size_t i = 0; i < rows; ++i) mean += target[i * H + h];
    mean /= static_cast<double>(rows);
    double se = 0.0, ae = 0.0, dev_abs = 0.0, dev_sq = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double y = target[i * H + h], e = y - pred[i * H + h];
      se += e * e;
      ae += std::abs(e);
      dev_abs += std::abs(y - mean);
      dev_sq += (y - mean) * (y - mean);
    }
    HorizonMetrics m;
    m.horizon = horizons[h];
    m.count = rows;
    m.rmse = std::sqrt(se / static_cast<double>(rows));
    m.mae = ae / static_cast<double>(rows);
    if (dev_sq > 0.0) {
      m.rae = ae / dev_abs;
      m.r2 = 1.0 - se / dev_sq;
      sum_rae += *m.rae;
      sum_r2 += *m.r2;
    } else {
      all_rae = false;
    }
    r.avg_rmse += m.rmse;
    r.avg_mae += m.mae;
    r.horizons.push_back(m);
  }
  r.avg_rmse /= static_cast<double>(H);
  r.avg_mae /= static_cast<double>(H);
  if (all_rae) {
    r.avg_rae = sum_rae / static_cast<double>(H);
    r.avg_r2 = sum_r2 / static_cast<double>(H);
  }
  return r;
}

MetricReport metrics(std::span<const double> pred, const WindowBatch& batch) {
  return metrics(pred, batch.targets, batch.samples, batch.areas, batch.horizons);
}

std::vector<double> persistence_baseline(const WindowBatch& batch) {
  require(batch.lookback >= 1, ErrorKind::shape, "persistence_baseline: empty windows");
  const std::size_t H = batch.horizons.size();
  std::vector<double> out(batch.samples * batch.areas * H);
  for (std::size_t s = 0; s < batch.samples; ++s)
    for (std::size_t n = 0; n < batch.areas; ++n) {
      const double last = batch.input(s, n, batch.lookback - 1, 0);
      for (std::size_t h = 0; h < H; ++h) out[(s * batch.areas + n) * H + h] = last;
    }
  return out;
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::no_module_a, Variant::no_module_b,    Variant::no_module_c,
                                      Variant::no_price,    Variant::no_temperature, Variant::no_var_sel,
                                      Variant::softmax_instead_of_gumbel, Variant::full};
  return v;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_module_a: return "no_module_a";
    case Variant::no_module_b: return "no_module_b";
    case Variant::no_module_c: return "no_module_c";
    case Variant::no_price: return "no_price";
    case Variant::no_temperature: return "no_temperature";
    case Variant::no_var_sel: return "no_var_sel";
    case Variant::softmax_instead_of_gumbel: return "softmax_instead_of_gumbel";
  }
  return "unknown";
}

Variant parse_variant(const std::string& id) {
  for (Variant v : all_variants())
    if (variant_name(v) == id) return v;
  raise(ErrorKind::config, "unknown ablation variant '" + id + "'");
}

ModelConfig apply_variant(ModelConfig c, Variant v) {
  switch (v) {
    case Variant::full: break;
    case Variant::no_module_a: c.use_hypergraph = false; break;
    case Variant::no_module_b: c.use_graph = false; break;
    case Variant::no_module_c: c.use_encoder = false; break;
    case Variant::no_price: c.use_price = false; break;
    case Variant::no_temperature: c.use_temperature = false; break;
    case Variant::no_var_sel: c.use_variable_selection = false; break;
    case Variant::softmax_instead_of_gumbel: c.gumbel = false; break;
  }
  return c;
}

std::vector<AblationRow> run_ablation(std::span<const Variant> variants, const ExperimentData& data,
                                      const ModelConfig& base, const TrainConfig& train_config, std::uint64_t seed) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    const ModelState init = init_model(apply_variant(base, v), seed);
    const TrainState trained = train(init, data.train, data.val, data.structure, train_config);
    const auto pred = predict(trained.best, data.test, data.structure, train_config.chunk_size);
    rows.push_back({v, metrics(pred, data.test), trained.history});
  }
  return rows;
}

namespace {

json optional_value(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json report_json(const MetricReport& r) {
  json j;
  for (const auto& m : r.horizons)
    j[std::to_string(m.horizon)] = {{"rmse", m.rmse},
                                    {"mae", m.mae},
                                    {"rae", optional_value(m.rae)},
                                    {"r2", optional_value(m.r2)},
                                    {"count", m.count}};
  j["average"] = {{"rmse", r.avg_rmse},
                  {"mae", r.avg_mae},
                  {"rae", optional_value(r.avg_rae)},
                  {"r2", optional_value(r.avg_r2)},
                  {"count", r.samples * r.areas}};
  return j;
}

json metrics_table_json(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  json j = json::object();
  for (const auto& [label, r] : rows) j[label] = report_json(r);
  return j;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorKind::io, "cannot write " + path.string());
  f << "label,horizon,metric,value\n";
  char buf[64];
  auto emit = [&](const std::string& label, const std::string& horizon, const char* metric,
                  const std::optional<double>& v) {
    f << label << ',' << horizon << ',' << metric << ',';
    if (v) {
      std::snprintf(buf, sizeof buf, "%.17g", *v);
      f << buf;
    }
    f << '\n';
  };
  for (const auto& [label, r] : rows) {
    for (const auto& m : r.horizons) {
      const std::string h = std::to_string(m.horizon);
      emit(label, h, "rmse", m.rmse);
      emit(label, h, "mae", m.mae);
      emit(label, h, "rae", m.rae);
      emit(label, h, "r2", m.r2);
    }
    emit(label, "average", "rmse", r.avg_rmse);
    emit(label, "average", "mae", r.avg_mae);
    emit(label, "average", "rae", r.avg_rae);
    emit(label, "average", "r2", r.avg_r2);
  }
}

std::string format_report(const std::string& label, const MetricReport& r, int step_minutes) {
  std::ostringstream out;
  char buf[160];
  auto cell = [](const std::optional<double>& v) {
    char b[32];
    if (v) std::snprintf(b, sizeof b, "%8.3f", *v * 100.0);
    else std::snprintf(b, sizeof b, "%8s", "n/a");
    return std::string(b);
  };
  out << label << " (metrics x 1e-2)\n";
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s %8s\n", "horizon", "RMSE", "MAE", "RAE", "R2");
  out << buf;
  for (const auto& m : r.horizons) {
    std::snprintf(buf, sizeof buf, "%-10s %s %s %s %s\n",
                  (std::to_string(m.horizon * step_minutes) + "min").c_str(), cell(m.rmse).c_str(),
                  cell(m.mae).c_str(), cell(m.rae).c_str(), cell(m.r2).c_str());
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-10s %s %s %s %s\n", "average", cell(r.avg_rmse).c_str(), cell(r.avg_mae).c_str(),
                cell(r.avg_rae).c_str(), cell(r.avg_r2).c_str());
  out << buf;
  return out.str();
}

}  // namespace evcp
