#include "evcp/run_config.hpp"

#include <charconv>
#include <fstream>

#include "evcp/error.hpp"
#include "json_fields.hpp"

namespace evcp {

using nlohmann::json;

SweepRange parse_sweep(const std::string& text) {
  const auto dots = text.find("..");
  require(dots != std::string::npos, ErrorKind::config, "sweep must look like lo..hi, got '" + text + "'");
  auto number = [&](std::string_view s) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && ptr == s.data() + s.size() && !s.empty(), ErrorKind::config,
            "sweep bound '" + std::string(s) + "' is not a nonnegative integer");
    return v;
  };
  const std::string_view view(text);
  SweepRange r{number(view.substr(0, dots)), number(view.substr(dots + 2))};
  require(r.lo >= 1 && r.lo <= r.hi, ErrorKind::config, "sweep needs 1 <= lo <= hi, got '" + text + "'");
  return r;
}

std::string format_sweep(const SweepRange& r) { return std::to_string(r.lo) + ".." + std::to_string(r.hi); }

TrainConfig RunConfig::effective_train() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

void to_json(json& j, const SynthConfig& c) {
  j = json{{"areas", c.areas},
           {"groups", c.groups},
           {"steps", c.steps},
           {"step_minutes", c.step_minutes},
           {"lookback", c.lookback},
           {"noise", c.noise},
           {"poi_noise", c.poi_noise},
           {"categories", c.categories},
           {"pois_per_area", c.pois_per_area},
           {"start_minute", c.start_minute},
           {"price_effect", c.price_effect},
           {"temperature_effect", c.temperature_effect}};
}

void from_json(const json& j, SynthConfig& c) {
  const std::string where = "synth";
  detail::reject_unknown_keys(j,
                              {"areas", "groups", "steps", "step_minutes", "lookback", "noise", "poi_noise",
                               "categories", "pois_per_area", "start_minute", "price_effect", "temperature_effect"},
                              where);
  detail::read_field(j, "areas", c.areas, where);
  detail::read_field(j, "groups", c.groups, where);
  detail::read_field(j, "steps", c.steps, where);
  detail::read_field(j, "step_minutes", c.step_minutes, where);
  detail::read_field(j, "lookback", c.lookback, where);
  detail::read_field(j, "noise", c.noise, where);
  detail::read_field(j, "poi_noise", c.poi_noise, where);
  detail::read_field(j, "categories", c.categories, where);
  detail::read_field(j, "pois_per_area", c.pois_per_area, where);
  detail::read_field(j, "start_minute", c.start_minute, where);
  detail::read_field(j, "price_effect", c.price_effect, where);
  detail::read_field(j, "temperature_effect", c.temperature_effect, where);
}

json to_json(const RunConfig& c) {
  TrainConfig train = c.effective_train();
  return json{{"command", c.command},
              {"dataset", c.dataset.generic_string()},
              {"out", c.out.generic_string()},
              {"seed", c.seed},
              {"model", c.model},
              {"train", train},
              {"synth", c.synth},
              {"sweep", c.sweep ? json(format_sweep(*c.sweep)) : json(nullptr)},
              {"variants", c.variants},
              {"resume", c.resume}};
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  const std::string where = "config";
  detail::reject_unknown_keys(j, {"command", "dataset", "out", "seed", "model", "train", "synth", "sweep", "variants",
                                  "resume"},
                              where);
  detail::read_field(j, "command", c.command, where);
  std::string path;
  if (j.contains("dataset")) {
    detail::read_field(j, "dataset", path, where);
    c.dataset = path;
  }
  if (j.contains("out")) {
    detail::read_field(j, "out", path, where);
    c.out = path;
  }
  detail::read_field(j, "seed", c.seed, where);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("synth")) from_json(j.at("synth"), c.synth);
  if (j.contains("sweep")) {
    if (j.at("sweep").is_null()) {
      c.sweep.reset();
    } else {
      std::string text;
      detail::read_field(j, "sweep", text, where);
      c.sweep = parse_sweep(text);
    }
  }
  detail::read_field(j, "variants", c.variants, where);
  detail::read_field(j, "resume", c.resume, where);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, path.string() + ": " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

}  // namespace evcp
