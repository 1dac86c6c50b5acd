#include "efm/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include <fmt/format.h>

#include "efm/error.hpp"
#include "efm/parallel.hpp"
#include "efm/rng.hpp"

namespace efm {

namespace {

constexpr std::uint64_t kMagnifyStream = 0x4d41474e49465900ULL;

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  return s;
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

bool all_equal(const std::vector<double>& v) {
  for (double x : v)
    if (x != v.front()) return false;
  return true;
}

} // namespace

MagnificationConfig ExperimentConfig::desk_magnification() {
  MagnificationConfig m;
  m.K = 500;
  return m;
}

void ExperimentConfig::validate() const {
  if (scenario.empty()) throw ConfigError("scenario name must not be empty");
  if (reps < 1) throw ConfigError("reps must be at least 1");
  if (n < 8) throw ConfigError(fmt::format("n must be at least 8 (got {})", n));
  if (threads < 1) throw ConfigError("threads must be at least 1");
  magnification.validate();
  if (magnification.o + 3 > std::min(model.p(), n))
    throw ConfigError(fmt::format("o = {} needs o + 3 <= min(p, n) = {}", magnification.o,
                                  std::min(model.p(), n)));
  if (onatski_nu && !(*onatski_nu > 0.0)) throw ConfigError("onatski_nu must be positive");
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return to_json(*this) == to_json(other);
}

nlohmann::json to_json(const RadiusLaw& law) {
  switch (law.kind()) {
  case RadiusKind::MultivariateT: return {{"family", "t"}, {"parameter", law.parameter()}};
  case RadiusKind::ParetoTail: return {{"family", "pareto"}, {"parameter", law.parameter()}};
  case RadiusKind::ExponentialTail: return {{"family", "exponential"}, {"parameter", law.parameter()}};
  case RadiusKind::Constant: return {{"family", "constant"}};
  }
  return {};
}

RadiusLaw radius_law_from_json(const nlohmann::json& j) {
  if (j.is_string()) return radius_law_from_string(j.get<std::string>());
  const auto family = j.at("family").get<std::string>();
  if (family == "constant") return RadiusLaw::constant();
  const double a = j.at("parameter").get<double>();
  if (family == "t") return RadiusLaw::multivariate_t(a);
  if (family == "pareto") return RadiusLaw::pareto_tail(a);
  if (family == "exponential") return RadiusLaw::exponential_tail(a);
  throw ConfigError(fmt::format("unknown radius family '{}' (t, pareto, exponential, constant)", family));
}

RadiusLaw radius_law_from_string(const std::string& s) {
  if (s == "constant") return RadiusLaw::constant();
  static const std::regex re(R"(^\s*(t|pareto|exponential)\s*\(\s*([0-9.eE+-]+)\s*\)\s*$)");
  std::smatch m;
  if (!std::regex_match(s, m, re))
    throw ConfigError(fmt::format("cannot parse radius law '{}' (e.g. t(4.3), pareto(1.5), exponential(1), constant)", s));
  double a;
  try {
    a = std::stod(m[2].str());
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("bad radius parameter in '{}'", s));
  }
  try {
    return radius_law_from_json({{"family", m[1].str()}, {"parameter", a}});
  } catch (const ConstructionError& e) {
    throw ConfigError(e.what());
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json model{{"p", c.model.p()}, {"spikes", c.model.spikes()}};
  const auto& tail = c.model.tail_values();
  if (!tail.empty() && all_equal(tail)) model["tail_value"] = tail.front();
  else model["tail"] = tail;
  auto mag = to_json(c.magnification);
  mag.erase("seed");
  return {{"schema_version", kSchemaVersion},
          {"scenario", c.scenario},
          {"model", model},
          {"law", to_json(c.law)},
          {"n", c.n},
          {"reps", c.reps},
          {"magnification", mag},
          {"onatski_nu", c.onatski_nu ? nlohmann::json(*c.onatski_nu) : nlohmann::json(nullptr)},
          {"none_flagged", to_string(c.none_flagged)},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"threads", c.threads}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig c) {
  try {
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kSchemaVersion)
      throw ConfigError(fmt::format("unsupported schema_version {}", j.at("schema_version").dump()));
    c.scenario = get_or<std::string>(j, "scenario", c.scenario);
    if (j.contains("model")) {
      const auto& mj = j.at("model");
      const auto p = get_or<std::size_t>(mj, "p", c.model.p());
      const auto spikes = get_or<std::vector<double>>(mj, "spikes", c.model.spikes());
      std::vector<double> tail;
      if (mj.contains("tail")) tail = mj.at("tail").get<std::vector<double>>();
      else if (mj.contains("tail_value"))
        tail.assign(p - std::min(p, spikes.size()), mj.at("tail_value").get<double>());
      try {
        c.model = PopulationModel(p, spikes, tail);
      } catch (const ConstructionError& e) {
        throw ConfigError(e.what());
      }
    }
    if (j.contains("law")) {
      try {
        c.law = radius_law_from_json(j.at("law"));
      } catch (const ConstructionError& e) {
        throw ConfigError(e.what());
      }
    }
    c.n = get_or<std::size_t>(j, "n", c.n);
    c.reps = get_or<std::size_t>(j, "reps", c.reps);
    if (j.contains("magnification"))
      c.magnification = magnification_config_from_json(j.at("magnification"), c.magnification);
    if (j.contains("onatski_nu"))
      c.onatski_nu = j.at("onatski_nu").is_null() ? std::nullopt
                                                  : std::optional<double>(j.at("onatski_nu").get<double>());
    if (j.contains("none_flagged"))
      c.none_flagged = none_flagged_rule_from_string(j.at("none_flagged").get<std::string>());
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir);
    c.threads = get_or<std::size_t>(j, "threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("experiment config: {}", e.what()));
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return experiment_config_from_json(j);
}

std::uint64_t rep_seed(const ExperimentConfig& cfg, std::size_t rep) {
  return stable_hash(cfg.seed, cfg.scenario, rep);
}

RepRecord run_replication(const ExperimentConfig& cfg, std::size_t rep, RunArtifacts* artifacts) {
  RepRecord r;
  r.rep = rep;
  r.seed = rep_seed(cfg, rep);
  r.m = cfg.model.m();
  const auto panel = generate_panel(cfg.model, cfg.law, cfg.n, r.seed);
  const auto cache = gram_matrix(panel);
  const auto spec = spectrum(cache);
  const auto on = onatski_estimate(spec, cfg.magnification.o, cfg.n, cfg.onatski_nu);

  MagnificationConfig mag = cfg.magnification;
  mag.seed = child_seed(r.seed, {kMagnifyStream});
  mag.threads = 1;
  const auto ma = estimate_factors(cache, spec, mag, {cfg.none_flagged, cfg.onatski_nu});

  r.r_on = on.r_hat;
  r.r_ma = ma.r_hat;
  r.r_star = ma.detection->r_star;
  r.f_hat = ma.detection->f_hat;
  r.ok = true;
  if (artifacts) {
    artifacts->spectrum = spec;
    artifacts->gaps = on.diagnostics.gaps;
    artifacts->nu = on.diagnostics.nu;
    artifacts->detection = ma.detection;
  }
  return r;
}

MetricsTable run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  MetricsTable table;
  table.records.resize(cfg.reps);
  parallel_for(cfg.reps, cfg.threads, [&](std::size_t rep) {
    try {
      table.records[rep] = run_replication(cfg, rep, rep == 0 ? &table.artifacts : nullptr);
    } catch (const Error& e) {
      RepRecord r;
      r.rep = rep;
      r.seed = rep_seed(cfg, rep);
      r.m = cfg.model.m();
      r.error = fmt::format("{}: {}", e.kind(), e.what());
      table.records[rep] = std::move(r);
    } catch (const std::exception& e) {
      RepRecord r;
      r.rep = rep;
      r.seed = rep_seed(cfg, rep);
      r.m = cfg.model.m();
      r.error = fmt::format("exception: {}", e.what());
      table.records[rep] = std::move(r);
    }
  });
  table.summary = compute_metrics(table.records);
  table.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return table;
}

MetricsSummary compute_metrics(const std::vector<RepRecord>& records) {
  MetricsSummary s;
  s.reps = records.size();
  std::size_t over_on = 0, over_ma = 0, exact_on = 0, exact_ma = 0, fp = 0;
  for (const auto& r : records) {
    if (!r.ok) {
      ++s.failed;
      continue;
    }
    ++s.completed;
    over_on += r.r_on > r.m;
    over_ma += r.r_ma > r.m;
    exact_on += r.r_on == r.m;
    exact_ma += r.r_ma == r.m;
    fp += r.r_on == r.m && r.r_ma != r.m;
  }
  if (s.completed > 0) {
    const double c = static_cast<double>(s.completed);
    s.over_on = over_on / c;
    s.over_ma = over_ma / c;
    s.exact_on = exact_on / c;
    s.exact_ma = exact_ma / c;
  }
  s.on_exact_count = exact_on;
  if (exact_on > 0) s.false_positive = static_cast<double>(fp) / static_cast<double>(exact_on);
  return s;
}

std::string records_csv(const std::vector<RepRecord>& records) {
  std::ostringstream os;
  os << "rep,seed,m,status,r_on,r_ma,r_star,f_hat,error\n";
  for (const auto& r : records) {
    if (r.ok)
      os << fmt::format("{},{},{},ok,{},{},{},{},\n", r.rep, r.seed, r.m, r.r_on, r.r_ma,
                        r.r_star ? std::to_string(*r.r_star) : std::string("none"), r.f_hat);
    else
      os << fmt::format("{},{},{},failed,,,,,{}\n", r.rep, r.seed, r.m, sanitize(r.error));
  }
  return os.str();
}

std::vector<RepRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<RepRecord> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw ParseError(fmt::format("records.csv line {}: expected 9 fields, got {}", lineno, f.size()));
    try {
      RepRecord r;
      r.rep = std::stoul(f[0]);
      r.seed = std::stoull(f[1]);
      r.m = std::stoul(f[2]);
      r.ok = f[3] == "ok";
      if (r.ok) {
        r.r_on = std::stoul(f[4]);
        r.r_ma = std::stoul(f[5]);
        if (f[6] != "none") r.r_star = std::stoul(f[6]);
        r.f_hat = std::stoul(f[7]);
      } else {
        r.error = f[8];
      }
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ParseError(fmt::format("records.csv line {}: malformed number", lineno));
    }
  }
  return out;
}

nlohmann::json to_json(const MetricsSummary& s) {
  return {{"reps", s.reps},
          {"completed", s.completed},
          {"failed", s.failed},
          {"overestimation", {{"On", s.over_on}, {"Ma", s.over_ma}}},
          {"exact", {{"On", s.exact_on}, {"Ma", s.exact_ma}}},
          {"false_positive_ratio", s.false_positive ? nlohmann::json(*s.false_positive) : nlohmann::json(nullptr)},
          {"on_exact_count", s.on_exact_count}};
}

std::string plot_file_name(PlotKind kind) {
  switch (kind) {
  case PlotKind::Scree: return "scree.csv";
  case PlotKind::GapSeries: return "gaps.csv";
  case PlotKind::FluctuationSeries: return "fluctuation.csv";
  case PlotKind::FactorTimeline: return "factor_timeline.csv";
  }
  return "plot.csv";
}

std::string emit_plot_data(const RunArtifacts& a, PlotKind kind) {
  std::ostringstream os;
  switch (kind) {
  case PlotKind::Scree: {
    if (!a.spectrum) throw MissingArtifact("scree data needs a spectrum; run a simulation or detection first");
    os << "i,lambda\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(50, a.spectrum->size()); ++i)
      os << fmt::format("{},{:.17g}\n", i + 1, (*a.spectrum)[i]);
    break;
  }
  case PlotKind::GapSeries: {
    if (!a.gaps || !a.nu) throw MissingArtifact("gap series needs an Onatski estimate; run estimation first");
    os << "i,G,nu\n";
    for (std::size_t i = 0; i < a.gaps->size(); ++i) {
      const double g = (*a.gaps)[i];
      os << (std::isinf(g) ? fmt::format("{},inf,{:.17g}\n", i + 1, *a.nu)
                           : fmt::format("{},{:.17g},{:.17g}\n", i + 1, g, *a.nu));
    }
    break;
  }
  case PlotKind::FluctuationSeries: {
    if (!a.detection) throw MissingArtifact("fluctuation series needs a detection report; run detection first");
    os << "i,T,L\n";
    for (const auto& r : a.detection->records)
      os << fmt::format("{},{:.17g},{:.17g}\n", r.i, r.stat, r.threshold);
    break;
  }
  case PlotKind::FactorTimeline: {
    if (!a.timeline) throw MissingArtifact("factor timeline needs a rolling panel run; run the panel workflow first");
    os << "window,r_hat\n";
    for (const auto& [label, r] : *a.timeline) os << fmt::format("{},{}\n", label, r);
    break;
  }
  }
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw ConfigError(fmt::format("failed writing {}", path.string()));
}

void write_experiment_outputs(const ExperimentConfig& cfg, const MetricsTable& table,
                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "records.csv", records_csv(table.records));
  auto summary = to_json(table.summary);
  summary["schema_version"] = kSchemaVersion;
  summary["scenario"] = cfg.scenario;
  summary["law"] = cfg.law.label();
  summary["n"] = cfg.n;
  summary["p"] = cfg.model.p();
  summary["m"] = cfg.model.m();
  write_text_file(dir / "summary.json", summary.dump(2) + "\n");
  write_text_file(dir / "timing.json",
                  nlohmann::json{{"schema_version", kSchemaVersion},
                                 {"seconds", table.seconds},
                                 {"threads", cfg.threads}}
                          .dump(2) +
                      "\n");
  write_text_file(dir / "effective_config.json", to_json(cfg).dump(2) + "\n");
  for (auto kind : {PlotKind::Scree, PlotKind::GapSeries, PlotKind::FluctuationSeries}) {
    try {
      write_text_file(dir / plot_file_name(kind), emit_plot_data(table.artifacts, kind));
    } catch (const MissingArtifact&) {
    }
  }
}

} // namespace efm
