#include "evcp/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "evcp/dataset.hpp"
#include "evcp/region_features.hpp"
#include "evcp/synthetic.hpp"

namespace evcp {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorKind kind) { return kind == ErrorKind::numeric ? kExitNumeric : kExitInput; }

namespace {

const char* const kCommands[] = {"synth", "prepare", "cluster", "train", "evaluate", "ablate"};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

// Creates the stage directory and echoes the effective config into it.
fs::path begin_stage(const RunConfig& config, const std::string& stage) {
  RunConfig echoed = config;
  echoed.command = stage;
  const fs::path dir = config.stage_dir(stage);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  write_json(dir / "run.json", to_json(echoed));
  return dir;
}

fs::path require_file(const fs::path& path, const std::string& hint) {
  require(fs::is_regular_file(path), ErrorKind::io, "missing " + path.string() + " (" + hint + ")");
  return path;
}

struct Prepared {
  DatasetDescriptor descriptor;
  DemandSeries demand;
  CovariateSeries covariates;
  SplitIndex split;
};

Prepared load_prepared(const RunConfig& config) {
  const fs::path path = require_file(config.stage_dir("prepare") / "dataset.json", "run the prepare command first");
  Prepared p;
  p.descriptor = read_descriptor(path);
  std::tie(p.demand, p.covariates) = load_dataset(p.descriptor);
  p.split = chronological_split(p.demand.steps());
  return p;
}

RegionStructure load_structure(const RunConfig& config, std::span<const std::string> area_ids) {
  const fs::path path = require_file(config.stage_dir("cluster") / "clusters.json", "run the cluster command first");
  return read_clusters_json(path, area_ids);
}

ExperimentData experiment_from(const Prepared& p, RegionStructure structure, const ModelConfig& model) {
  ExperimentData d;
  d.train = make_windows(p.demand, p.covariates, p.split.train, model.lookback, model.horizons);
  d.val = make_windows(p.demand, p.covariates, p.split.val, model.lookback, model.horizons);
  d.test = make_windows(p.demand, p.covariates, p.split.test, model.lookback, model.horizons);
  d.structure = std::move(structure);
  return d;
}

json range_json(const IndexRange& r) { return json::array({r.begin, r.end}); }

json norm_json(const NormStats& s) { return {{"min", s.min}, {"max", s.max}, {"degenerate", s.degenerate}}; }

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

ExperimentData load_experiment(const RunConfig& config) {
  const Prepared p = load_prepared(config);
  return experiment_from(p, load_structure(config, p.demand.area_ids), config.model);
}

void cmd_synth(const RunConfig& config, std::ostream& log) {
  validate(config.synth);
  const fs::path dir = begin_stage(config, "synth");
  const SyntheticDataset data = generate_synthetic(config.synth, config.seed);
  const fs::path descriptor = write_synthetic_bundle(dir, data);
  log << "synthetic bundle: " << data.demand.areas() << " areas, " << data.demand.steps() << " steps, "
      << config.synth.groups << " groups -> " << descriptor.string() << '\n';
}

void cmd_prepare(const RunConfig& config, std::ostream& log) {
  require(!config.dataset.empty(), ErrorKind::config, "prepare needs a dataset descriptor (--dataset)");
  const fs::path dir = begin_stage(config, "prepare");
  const DatasetDescriptor source = read_descriptor(config.dataset);
  const auto [demand, covariates] = load_dataset(source);
  const SplitIndex split = chronological_split(demand.steps());
  const auto [scaled, norm] = normalize_covariates(covariates, split.train);

  DatasetDescriptor prepared = source;
  prepared.demand = dir / "demand.csv";
  prepared.price = dir / "price.csv";
  prepared.temperature = dir / "temperature.csv";
  prepared.step_minutes = demand.step_minutes;
  prepared.orientation = Orientation::time_major;
  write_table(prepared.demand, demand.area_ids, demand.values, demand.start_minute, demand.step_minutes);
  write_table(prepared.price, demand.area_ids, scaled.price, demand.start_minute, demand.step_minutes);
  write_table(prepared.temperature, demand.area_ids, scaled.temperature, demand.start_minute, demand.step_minutes);
  write_descriptor(dir / "dataset.json", prepared);

  write_json(dir / "split.json", {{"train", range_json(split.train)},
                                  {"val", range_json(split.val)},
                                  {"test", range_json(split.test)},
                                  {"price", norm_json(norm.price)},
                                  {"temperature", norm_json(norm.temperature)}});
  write_json(dir / "summary.json", {{"areas", demand.areas()},
                                    {"steps", demand.steps()},
                                    {"step_minutes", demand.step_minutes},
                                    {"train_steps", split.train.size()},
                                    {"val_steps", split.val.size()},
                                    {"test_steps", split.test.size()}});
  log << "prepared " << demand.areas() << " areas, " << demand.steps() << " steps (train " << split.train.size()
      << ", val " << split.val.size() << ", test " << split.test.size() << ")\n";
}

void cmd_cluster(const RunConfig& config, std::ostream& log) {
  config.model.validate();
  const fs::path dir = begin_stage(config, "cluster");
  const Prepared p = load_prepared(config);
  const auto& ids = p.demand.area_ids;
  require(!p.descriptor.poi.empty(), ErrorKind::config, "dataset descriptor names no poi file");
  require(!p.descriptor.adjacency.empty(), ErrorKind::config, "dataset descriptor names no adjacency file");
  const PoiCorpus corpus = align_corpus(read_poi_csv(p.descriptor.poi), ids);
  const Matrix u = tfidf(corpus);
  const auto pairs = read_adjacency(p.descriptor.adjacency, ids);
  std::vector<std::size_t> truth;
  if (!p.descriptor.groups.empty() && fs::exists(p.descriptor.groups)) truth = read_labels_csv(p.descriptor.groups, ids);

  auto cluster_once = [&](std::size_t c) {
    const KMeansResult km = kmeans(u, c, config.seed);
    json info{{"clusters", c}, {"inertia", km.inertia}};
    if (!truth.empty()) info["ari"] = adjusted_rand_index(km.labels, truth);
    return std::pair{km, info};
  };

  const auto [km, info] = cluster_once(config.model.clusters);
  const RegionStructure structure = build_structure(km.labels, pairs);
  write_clusters_json(dir / "clusters.json", ids, corpus.categories, u, structure, km.inertia);
  write_labels_csv(dir / "labels.csv", ids, km.labels);
  json summary = info;
  std::vector<std::size_t> sizes(structure.clusters, 0);
  for (std::size_t l : km.labels) ++sizes[l];
  summary["sizes"] = sizes;
  std::size_t isolated = 0;
  for (bool b : structure.isolated) isolated += b ? 1 : 0;
  summary["isolated_areas"] = isolated;
  write_json(dir / "summary.json", summary);
  log << "clustered " << ids.size() << " areas into " << structure.clusters << " hyperedges, inertia "
      << fixed(km.inertia);
  if (summary.contains("ari")) log << ", ARI vs ground truth " << fixed(summary["ari"].get<double>(), 4);
  log << '\n';

  if (config.sweep) {
    const fs::path sweep_dir = dir / "sweep";
    fs::create_directories(sweep_dir);
    json table = json::array();
    for (std::size_t c = config.sweep->lo; c <= config.sweep->hi; ++c) {
      const auto [k, row] = cluster_once(c);
      write_labels_csv(sweep_dir / ("labels_C" + std::to_string(c) + ".csv"), ids, k.labels);
      table.push_back(row);
      log << "  C=" << c << " inertia " << fixed(k.inertia) << '\n';
    }
    write_json(dir / "sweep.json", table);
  }
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  config.model.validate();
  const TrainConfig tc = config.effective_train();
  tc.validate();
  const fs::path dir = begin_stage(config, "train");
  const ExperimentData data = load_experiment(config);
  const fs::path state_path = dir / "train_state.bin";

  TrainState start;
  if (config.resume) {
    require_file(state_path, "nothing to resume");
    start = load_train_state(state_path);
    require(start.model.config == config.model, ErrorKind::config,
            "saved training state was produced with a different model config");
    log << "resuming after epoch " << (start.history.epochs.empty() ? 0 : start.history.epochs.back().epoch) << '\n';
  } else {
    start = initial_train_state(init_model(config.model, config.seed));
  }
  log << "training on " << data.train.samples << " windows, validating on " << data.val.samples << " ("
      << parameter_count(start.model.parameters) << " parameters)\n";

  const TrainState done = train(std::move(start), data.train, data.val, data.structure, tc, [&](const TrainState& s) {
    save_train_state(state_path, s);
    write_history_csv(dir / "history.csv", s.history);
    write_timing_csv(dir / "timing.csv", s.history);
    const auto& e = s.history.epochs.back();
    log << "epoch " << e.epoch << " train " << fixed(e.train_loss, 8) << " val " << fixed(e.val_loss, 8) << " ("
        << fixed(e.seconds, 1) << "s)" << std::endl;
  });

  json extra{{"learning_rate", tc.learning_rate},
             {"dropout", config.model.dropout},
             {"train", tc},
             {"run_seed", config.seed},
             {"best_epoch", done.history.best_epoch}};
  save_checkpoint(dir / "model.ckpt", done.best, extra);
  write_json(dir / "history.json", history_json(done.history));
  write_json(dir / "summary.json", {{"best_epoch", done.history.best_epoch},
                                    {"best_val_loss", done.history.best_val_loss},
                                    {"epochs", done.history.epochs.size()},
                                    {"stop_reason", done.history.stop_reason}});
  log << "stopped (" << done.history.stop_reason << "); best epoch " << done.history.best_epoch << ", val MSE "
      << fixed(done.history.best_val_loss, 8) << '\n';
}

void cmd_evaluate(const RunConfig& config, std::ostream& log) {
  const fs::path dir = begin_stage(config, "evaluate");
  const ModelState model =
      load_checkpoint(require_file(config.stage_dir("train") / "model.ckpt", "run the train command first"));
  const Prepared p = load_prepared(config);
  const ExperimentData data = experiment_from(p, load_structure(config, p.demand.area_ids), model.config);

  const auto pred = predict(model, data.test, data.structure);
  const std::vector<std::pair<std::string, MetricReport>> rows{
      {"cityevcp", metrics(pred, data.test)}, {"persistence", metrics(persistence_baseline(data.test), data.test)}};
  write_json(dir / "metrics.json", metrics_table_json(rows));
  write_metrics_csv(dir / "metrics.csv", rows);

  const PearsonResult corr = pearson_matrix(p.demand, 0.4);
  write_matrix_csv(dir / "correlation.csv", p.demand.area_ids, corr.coefficients);
  write_matrix_csv(dir / "correlation_mask.csv", p.demand.area_ids, corr.mask);

  std::ofstream report(dir / "report.txt");
  for (const auto& [label, r] : rows) {
    const std::string text = format_report(label, r, p.demand.step_minutes);
    report << text << '\n';
    log << text << '\n';
  }
}

void cmd_ablate(const RunConfig& config, std::ostream& log) {
  config.model.validate();
  const TrainConfig tc = config.effective_train();
  tc.validate();
  std::vector<Variant> variants;
  for (const auto& id : config.variants) variants.push_back(parse_variant(id));
  if (variants.empty()) variants = all_variants();
  const fs::path dir = begin_stage(config, "ablate");
  const Prepared p = load_prepared(config);
  const ExperimentData data = experiment_from(p, load_structure(config, p.demand.area_ids), config.model);

  std::vector<std::pair<std::string, MetricReport>> rows;
  json histories = json::object();
  for (Variant v : variants) {
    log << "variant " << variant_name(v) << '\n';
    const Variant one[] = {v};
    auto result = run_ablation(one, data, config.model, tc, config.seed);
    rows.emplace_back(variant_name(v), result.front().report);
    histories[variant_name(v)] = history_json(result.front().history);
    log << "  average RMSE " << fixed(result.front().report.avg_rmse * 100.0, 4) << " x 1e-2\n";
  }
  write_json(dir / "metrics.json", metrics_table_json(rows));
  write_metrics_csv(dir / "metrics.csv", rows);
  write_json(dir / "histories.json", histories);
  std::ofstream report(dir / "report.txt");
  for (const auto& [label, r] : rows) report << format_report(label, r, p.demand.step_minutes) << '\n';
}

int run_command(const RunConfig& config, std::ostream& log, std::ostream& err) {
  try {
    if (config.command == "synth") cmd_synth(config, log);
    else if (config.command == "prepare") cmd_prepare(config, log);
    else if (config.command == "cluster") cmd_cluster(config, log);
    else if (config.command == "train") cmd_train(config, log);
    else if (config.command == "evaluate") cmd_evaluate(config, log);
    else if (config.command == "ablate") cmd_ablate(config, log);
    else raise(ErrorKind::config, "unknown command '" + config.command + "'");
    return kExitOk;
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& log, std::ostream& err) {
  CLI::App app{"Citywide EV charging occupancy forecaster"};
  app.require_subcommand(1);

  std::string config_path, out, dataset, sweep;
  std::uint64_t seed = 0;
  std::size_t clusters = 0;
  std::vector<std::string> variants;
  bool resume = false;
  struct Flags {
    CLI::Option *config, *seed, *out, *dataset, *clusters, *variant, *sweep, *resume;
  };
  std::map<std::string, Flags> flags;
  const std::map<std::string, std::string> help{
      {"synth", "generate a synthetic dataset bundle"},
      {"prepare", "validate, align, normalize and split a dataset"},
      {"cluster", "TF-IDF + K-means clustering and region structure"},
      {"train", "train the forecaster with early stopping"},
      {"evaluate", "test-split metrics against the persistence baseline"},
      {"ablate", "train and score the ablation variants"}};
  for (const char* name : kCommands) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    Flags f;
    f.config = sub->add_option("--config", config_path, "run configuration JSON");
    f.seed = sub->add_option("--seed", seed, "random seed");
    f.out = sub->add_option("--out", out, "output root directory");
    f.dataset = sub->add_option("--dataset", dataset, "dataset descriptor JSON");
    f.clusters = sub->add_option("--clusters", clusters, "cluster count C");
    f.variant = sub->add_option("--variant", variants, "ablation variant id (repeatable)");
    f.sweep = sub->add_option("--sweep", sweep, "cluster-count sweep lo..hi");
    f.resume = sub->add_flag("--resume", resume, "continue from the saved training state");
    flags[name] = f;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, log, err);
      return kExitOk;
    }
    err << "error: " << e.what() << '\n' << app.help();
    return kExitInput;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const Flags& f = flags.at(command);
  RunConfig config;
  try {
    if (f.config->count()) {
      config = load_run_config(config_path);
      require(config.command.empty() || config.command == command, ErrorKind::config,
              "config was written for '" + config.command + "', not '" + command + "'");
    }
    config.command = command;
    if (f.seed->count()) config.seed = seed;
    if (f.out->count()) config.out = out;
    if (f.dataset->count()) config.dataset = dataset;
    if (f.clusters->count()) config.model.clusters = clusters;
    if (f.variant->count()) config.variants = variants;
    if (f.sweep->count()) config.sweep = parse_sweep(sweep);
    if (f.resume->count()) config.resume = resume;
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code_for(e.kind());
  }
  return run_command(config, log, err);
}

}  // namespace evcp
