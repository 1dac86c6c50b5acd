// efm: command-line front end.
//
// Precedence for every setting: built-in default < config file < --profile
// preset < EFM_SEED (seed only) < explicit flag.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "efm/error.hpp"
#include "efm/estimators.hpp"
#include "efm/harness.hpp"
#include "efm/magnify.hpp"
#include "efm/model.hpp"
#include "efm/oracles.hpp"
#include "efm/panel.hpp"
#include "efm/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitPartial = 2;

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("EFM_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t pos = 0;
    const auto s = std::stoull(v, &pos);
    if (pos != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw efm::ConfigError(fmt::format("EFM_SEED='{}' is not an unsigned integer", v));
  }
}

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(cell, &pos));
      if (pos != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw efm::ConfigError(fmt::format("{}: cannot read '{}' as a number", what, cell));
    }
  }
  return out;
}

// Shortest decimal that survives 15 significant digits, so that printed
// constants read like their closed forms.
double tidy(double x) {
  if (!std::isfinite(x)) return x;
  return std::stod(fmt::format("{:.15g}", x));
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

struct MagnifyFlags {
  std::optional<std::size_t> K, o;
  std::optional<std::string> policy, mode, weights, magnifier;
  std::optional<double> kappa, rho, eigen_scale;
  bool dense = false;

  void add(CLI::App* app) {
    app->add_option("--K", K, "Magnification replications");
    app->add_option("--o", o, "Leading indices examined");
    app->add_option("--policy", policy, "Threshold policy: fixed-small, paper-ceil, paper-frac, jump");
    app->add_option("--kappa", kappa, "fixed-small multiplier");
    app->add_option("--rho", rho, "jump multiplier");
    app->add_option("--mode", mode, "Magnifier mode: fixed, adaptive, shared-adaptive");
    app->add_option("--magnifier", magnifier, "Fixed magnifier bounds a,b");
    app->add_option("--weights", weights, "Weight law: uniform or binomial");
    app->add_option("--eigen-scale", eigen_scale, "Multiplier applied to eigenvalues in lambda-dependent thresholds");
    app->add_flag("--dense", dense, "Solve magnified spectra densely instead of top-k Lanczos");
  }

  void apply(efm::MagnificationConfig& c) const {
    if (K) c.K = *K;
    if (o) c.o = *o;
    if (policy || kappa || rho) {
      const std::string name = policy.value_or(efm::threshold_name(c.threshold));
      c.threshold = efm::threshold_from_string(name, name == "jump" ? rho.value_or(0.0) : kappa.value_or(0.0));
    }
    if (mode) c.mode = efm::magnifier_mode_from_string(*mode);
    if (magnifier) {
      const auto ab = parse_list(*magnifier, "--magnifier");
      if (ab.size() != 2) throw efm::ConfigError("--magnifier expects a,b");
      c.fixed_a = ab[0];
      c.fixed_b = ab[1];
    }
    if (weights) {
      if (*weights == "uniform") c.weight_law = efm::WeightLaw::Uniform;
      else if (*weights == "binomial") c.weight_law = efm::WeightLaw::Binomial;
      else throw efm::ConfigError(fmt::format("unknown weight law '{}'", *weights));
    }
    if (eigen_scale) c.eigen_scale = *eigen_scale;
    if (dense) c.eigen_mode = efm::EigenMode::Dense;
    c.validate();
  }
};

struct InputFlags {
  std::string input;
  std::string impute = "mean";
  bool standardize = false;

  void add(CLI::App* app) {
    app->add_option("--input", input, "Panel CSV (rows = observations, columns = variables)")->required();
    app->add_option("--impute", impute, "Missing values: mean or drop");
    app->add_flag("--standardize", standardize, "Center and scale each variable");
  }

  efm::PanelMatrix load() const {
    if (impute != "mean" && impute != "drop") throw efm::ConfigError(fmt::format("unknown --impute '{}'", impute));
    auto src = efm::load_panel(input);
    src = efm::impute_missing(src, impute == "drop" ? efm::ImputeMethod::Drop : efm::ImputeMethod::ColumnMean);
    efm::PanelMatrix panel{efm::window_matrix(src, 0, src.rows(), standardize), efm::LoadedProvenance{input}};
    efm::validate_panel(panel);
    return panel;
  }
};

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto e = env_seed()) return *e;
  return fallback;
}

void apply_profile(efm::ExperimentConfig& cfg, const std::string& profile) {
  std::size_t size, reps, K;
  if (profile == "paper") {
    size = 1000; reps = 1000; K = 1000;
  } else if (profile == "desk") {
    size = 400; reps = 200; K = 500;
  } else {
    throw efm::ConfigError(fmt::format("unknown profile '{}' (paper, desk)", profile));
  }
  cfg.model = efm::PopulationModel(size, cfg.model.spikes(),
                                   std::vector<double>(size - cfg.model.m(),
                                                       cfg.model.tail_values().empty() ? 1.0 : cfg.model.tail_values().front()));
  cfg.n = size;
  cfg.reps = reps;
  cfg.magnification.K = K;
}

// ---------------------------------------------------------------- simulate

struct SimulateCmd {
  std::string config_path, out, profile, law, none_flagged;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps, threads, n, p;
  std::optional<double> nu;
  MagnifyFlags mag;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "Experiment JSON");
    app->add_option("--profile", profile, "Size preset: paper or desk");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--out", out, "Output directory");
    app->add_option("--reps", reps, "Replications");
    app->add_option("--threads", threads, "Worker threads");
    app->add_option("--n", n, "Observations");
    app->add_option("--p", p, "Dimension");
    app->add_option("--law", law, "Radius law, e.g. t(4.3)");
    app->add_option("--nu", nu, "Onatski threshold");
    app->add_option("--none-flagged", none_flagged, "onatski or scan-all");
    mag.add(app);
  }

  int run() const {
    efm::ExperimentConfig cfg;
    cfg.threads = efm::default_threads();
    json file;
    if (!config_path.empty()) {
      cfg = efm::load_experiment_config(config_path);
      std::ifstream in(config_path);
      file = json::parse(in);
      if (!file.contains("threads")) cfg.threads = efm::default_threads();
    }
    if (!profile.empty()) apply_profile(cfg, profile);
    cfg.seed = resolve_seed(seed, cfg.seed);
    if (!out.empty()) cfg.output_dir = out;
    if (reps) cfg.reps = *reps;
    if (threads) cfg.threads = *threads;
    if (n) cfg.n = *n;
    if (p) {
      const double tail = cfg.model.tail_values().empty() ? 1.0 : cfg.model.tail_values().front();
      cfg.model = efm::PopulationModel(*p, cfg.model.spikes(), std::vector<double>(*p - cfg.model.m(), tail));
    }
    if (!law.empty()) cfg.law = efm::radius_law_from_string(law);
    if (nu) cfg.onatski_nu = *nu;
    if (!none_flagged.empty()) cfg.none_flagged = efm::none_flagged_rule_from_string(none_flagged);
    mag.apply(cfg.magnification);
    cfg.validate();

    const auto table = efm::run_experiment(cfg);
    efm::write_experiment_outputs(cfg, table, cfg.output_dir);
    const auto& s = table.summary;
    std::cout << fmt::format("{}: {} reps ({} failed)  over On {:.4f}  over Ma {:.4f}  FP {}  -> {}\n",
                             cfg.scenario, s.reps, s.failed, s.over_on, s.over_ma,
                             s.false_positive ? fmt::format("{:.4f}", *s.false_positive) : "null",
                             cfg.output_dir);
    return s.failed > 0 ? kExitPartial : kExitOk;
  }
};

// ---------------------------------------------------------------- detect / estimate

struct DetectCmd {
  InputFlags in;
  MagnifyFlags mag;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;

  void add(CLI::App* app) {
    in.add(app);
    mag.add(app);
    app->add_option("--seed", seed, "Magnifier seed");
    app->add_option("--threads", threads, "Worker threads");
    app->add_option("--out", out, "Output directory (JSON to stdout when omitted)");
  }

  efm::MagnificationConfig config() const {
    efm::MagnificationConfig c;
    mag.apply(c);
    c.seed = resolve_seed(seed, c.seed);
    c.threads = threads.value_or(efm::default_threads());
    return c;
  }

  int run() const {
    const auto cfg = config();
    const auto panel = in.load();
    const auto cache = efm::gram_matrix(panel);
    const auto spec = efm::spectrum(cache);
    const auto report = efm::detect_spurious(cache, spec, cfg);
    auto j = efm::to_json(report);
    j["config"] = efm::to_json(cfg);
    if (out.empty()) {
      print_json(j);
    } else {
      efm::write_text_file(fs::path(out) / "detection.json", j.dump(2) + "\n");
      efm::write_text_file(fs::path(out) / "fluctuation.csv", efm::fluctuation_csv(report));
      efm::RunArtifacts art;
      art.spectrum = spec;
      efm::write_text_file(fs::path(out) / "scree.csv", efm::emit_plot_data(art, efm::PlotKind::Scree));
      json eff{{"schema_version", efm::kSchemaVersion}, {"command", "detect"}, {"input", in.input},
               {"impute", in.impute}, {"standardize", in.standardize}, {"magnification", efm::to_json(cfg)}};
      efm::write_text_file(fs::path(out) / "effective_config.json", eff.dump(2) + "\n");
      std::cout << fmt::format("f_hat={} r_star={}\n", report.f_hat,
                               report.r_star ? std::to_string(*report.r_star) : "none");
    }
    return kExitOk;
  }
};

struct EstimateCmd {
  DetectCmd base;
  std::optional<double> nu;
  std::string none_flagged = "onatski";
  bool diagnostics = false;

  void add(CLI::App* app) {
    base.add(app);
    app->add_option("--nu", nu, "Onatski threshold (default ceil(log n))");
    app->add_option("--none-flagged", none_flagged, "onatski or scan-all");
    app->add_flag("--diagnostics", diagnostics, "Print the per-index table");
  }

  int run() const {
    const auto cfg = base.config();
    const efm::EstimateOptions opts{efm::none_flagged_rule_from_string(none_flagged), nu};
    const auto panel = base.in.load();
    const auto cache = efm::gram_matrix(panel);
    const auto spec = efm::spectrum(cache);
    const auto on = efm::onatski_estimate(spec, cfg.o, panel.n(), nu);
    const auto ma = efm::estimate_factors(cache, spec, cfg, opts);
    json j{{"schema_version", efm::kSchemaVersion}, {"On", efm::to_json(on)}, {"Ma", efm::to_json(ma)}};
    const std::string line = fmt::format(
        "r_on={} r_ma={} r_star={} f_hat={}", on.r_hat, ma.r_hat,
        ma.detection->r_star ? std::to_string(*ma.detection->r_star) : "none", ma.detection->f_hat);
    if (base.out.empty()) {
      print_json(j);
    } else {
      efm::write_text_file(fs::path(base.out) / "estimate.json", j.dump(2) + "\n");
      efm::RunArtifacts art;
      art.spectrum = spec;
      art.gaps = on.diagnostics.gaps;
      art.nu = on.diagnostics.nu;
      art.detection = ma.detection;
      for (auto k : {efm::PlotKind::Scree, efm::PlotKind::GapSeries, efm::PlotKind::FluctuationSeries})
        efm::write_text_file(fs::path(base.out) / efm::plot_file_name(k), efm::emit_plot_data(art, k));
      json eff{{"schema_version", efm::kSchemaVersion}, {"command", "estimate"}, {"input", base.in.input},
               {"impute", base.in.impute}, {"standardize", base.in.standardize},
               {"nu", nu ? json(*nu) : json(nullptr)}, {"none_flagged", none_flagged},
               {"magnification", efm::to_json(cfg)}};
      efm::write_text_file(fs::path(base.out) / "effective_config.json", eff.dump(2) + "\n");
      std::cout << line << "\n";
    }
    if (diagnostics) {
      std::cerr << "i,lambda,G,T,L,flagged\n";
      for (const auto& r : ma.detection->records) {
        const double g = r.i <= on.diagnostics.gaps.size() ? on.diagnostics.gaps[r.i - 1] : NAN;
        std::cerr << fmt::format("{},{:.6g},{:.6g},{:.6g},{:.6g},{}\n", r.i, r.eigenvalue, g, r.stat,
                                 r.threshold, r.flagged ? 1 : 0);
      }
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------- panel

struct PanelCmd {
  std::string input, out = "panel_out", impute = "mean", diff, none_flagged = "onatski";
  std::size_t window = 48, step = 48;
  double nu = 9.0;
  bool no_standardize = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  MagnifyFlags mag;

  void add(CLI::App* app) {
    app->add_option("--input", input, "Panel CSV (rows = dates, columns = variables)")->required();
    app->add_option("--out", out, "Output directory");
    app->add_option("--window", window, "Window length in rows");
    app->add_option("--step", step, "Window step in rows");
    app->add_option("--nu", nu, "Onatski threshold");
    app->add_option("--impute", impute, "Missing values: mean or drop");
    app->add_option("--diff", diff, "Difference every column first: first or log");
    app->add_option("--none-flagged", none_flagged, "onatski or scan-all");
    app->add_flag("--no-standardize", no_standardize, "Skip per-window centering and scaling");
    app->add_option("--seed", seed, "Magnifier seed");
    app->add_option("--threads", threads, "Worker threads");
    mag.add(app);
  }

  int run() const {
    efm::PanelRunConfig cfg;
    cfg.window = window;
    cfg.step = step;
    cfg.nu = nu;
    cfg.standardize = !no_standardize;
    cfg.none_flagged = efm::none_flagged_rule_from_string(none_flagged);
    cfg.seed = resolve_seed(seed, cfg.seed);
    cfg.threads = threads.value_or(efm::default_threads());
    mag.apply(cfg.magnification);
    if (impute != "mean" && impute != "drop") throw efm::ConfigError(fmt::format("unknown --impute '{}'", impute));

    auto src = efm::load_panel(input);
    if (!diff.empty()) {
      if (diff != "first" && diff != "log") throw efm::ConfigError(fmt::format("unknown --diff '{}'", diff));
      src = efm::difference(src, diff == "log" ? efm::DifferenceKind::LogFirst : efm::DifferenceKind::First);
    }
    src = efm::impute_missing(src, impute == "drop" ? efm::ImputeMethod::Drop : efm::ImputeMethod::ColumnMean);
    const auto windows = efm::rolling_estimate(src, cfg);
    efm::write_panel_outputs(windows, out);
    json eff{{"schema_version", efm::kSchemaVersion}, {"command", "panel"}, {"input", input},
             {"window", window}, {"step", step}, {"nu", nu}, {"impute", impute},
             {"diff", diff.empty() ? json(nullptr) : json(diff)}, {"standardize", cfg.standardize},
             {"none_flagged", none_flagged}, {"seed", cfg.seed}, {"magnification", efm::to_json(cfg.magnification)}};
    efm::write_text_file(fs::path(out) / "effective_config.json", eff.dump(2) + "\n");
    std::cout << efm::timeline_csv(windows);
    return kExitOk;
  }
};

// ---------------------------------------------------------------- generate

struct GenerateCmd {
  std::size_t p = 400, n = 400;
  std::string spikes = "12,6", law = "t(4.3)", out;
  double tail = 1.0;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--p", p, "Dimension");
    app->add_option("--n", n, "Observations");
    app->add_option("--spikes", spikes, "Spike variances, descending");
    app->add_option("--tail", tail, "Bulk variance");
    app->add_option("--law", law, "Radius law");
    app->add_option("--seed", seed, "Seed");
    app->add_option("--out", out, "CSV path")->required();
  }

  int run() const {
    const auto s = spikes.empty() ? std::vector<double>{} : parse_list(spikes, "--spikes");
    if (s.size() > p) throw efm::ConfigError("more spikes than dimensions");
    efm::PopulationModel model(p, s, std::vector<double>(p - s.size(), tail));
    const auto panel = efm::generate_panel(model, efm::radius_law_from_string(law), n, resolve_seed(seed, 1));
    std::ostringstream os;
    for (std::size_t k = 0; k < p; ++k) os << (k ? "," : "") << "x" << k + 1;
    os << "\n";
    for (Eigen::Index t = 0; t < panel.values.cols(); ++t) {
      for (Eigen::Index k = 0; k < panel.values.rows(); ++k)
        os << (k ? "," : "") << fmt::format("{:.17g}", panel.values(k, t));
      os << "\n";
    }
    efm::write_text_file(out, os.str());
    return kExitOk;
  }
};

// ---------------------------------------------------------------- oracle

struct OracleCmd {
  std::string what;
  std::optional<double> a, b;
  std::size_t p = 1000, n = 1000, i = 1, k = 1;
  std::string spikes = "240", law = "t(5)";
  double tail = 1.0, eps = 0.05;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("quantity", what, "theta, zeta, clt, constant, location, outlier")->required();
    app->add_option("--a", a, "Magnifier lower bound");
    app->add_option("--b", b, "Magnifier upper bound");
    app->add_option("--p", p, "Dimension");
    app->add_option("--n", n, "Observations");
    app->add_option("--i", i, "Spike index (1-based)");
    app->add_option("--k", k, "Order statistic (1-based)");
    app->add_option("--spikes", spikes, "Spike variances, descending (empty for none)");
    app->add_option("--tail", tail, "Bulk variance");
    app->add_option("--law", law, "Radius law");
    app->add_option("--eps", eps, "Exponent slack in q = n^{1/alpha - eps}");
    app->add_option("--seed", seed, "Seed for radius draws");
  }

  efm::PopulationModel model() const {
    const auto s = spikes.empty() ? std::vector<double>{} : parse_list(spikes, "--spikes");
    if (s.size() > p) throw efm::ConfigError("more spikes than dimensions");
    return efm::PopulationModel(p, s, std::vector<double>(p - s.size(), tail));
  }

  std::vector<double> radii(const efm::RadiusLaw& l) const {
    efm::Rng rng(efm::child_seed(resolve_seed(seed, 1), {efm::kRadiusStream}));
    return efm::sample_radius_squared(l.with_dimension(p), n, rng);
  }

  int run() const {
    json j;
    if (what == "constant") {
      if (!a || !b) throw efm::ConfigError("constant needs --a and --b");
      j["c"] = tidy(efm::magnifier_constant(*a, *b));
    } else if (what == "clt") {
      const auto l = efm::radius_law_from_string(law).with_dimension(p);
      std::optional<std::pair<double, double>> mag;
      if (a || b) {
        if (!a || !b) throw efm::ConfigError("clt needs both --a and --b for a magnifier");
        mag = std::make_pair(*a, *b);
      }
      j["variance"] = tidy(efm::clt_variance(l, mag));
      j["law"] = l.label();
    } else if (what == "theta") {
      j["theta"] = efm::theta_fixed_point(model(), i);
      j["residual"] = efm::theta_residual(model(), i, j["theta"].get<double>());
    } else if (what == "zeta") {
      const auto m = model();
      const auto xi = radii(efm::radius_law_from_string(law));
      const auto pt = efm::oracle_point(m, xi, i);
      j = {{"theta", pt.theta}, {"zeta", pt.zeta}, {"theta_residual", pt.theta_residual},
           {"zeta_residual", pt.zeta_residual}};
    } else if (what == "location") {
      const auto xi = radii(efm::radius_law_from_string(law));
      j["location"] = efm::spurious_location(model(), xi, k);
    } else if (what == "outlier") {
      const auto l = efm::radius_law_from_string(law);
      const auto m = model();
      efm::ConsistentSystem sys{p, m.tail_values(), radii(l), efm::default_q(n, l, eps)};
      const auto pr = efm::predict_outlier(sys, eps);
      j = {{"mu", pr.mu}, {"sample_value", pr.sample_value}, {"ratio", pr.ratio},
           {"q", sys.q}, {"window", pr.window}, {"residual", pr.residual}};
    } else {
      throw efm::ConfigError(fmt::format("unknown oracle '{}' (theta, zeta, clt, constant, location, outlier)", what));
    }
    print_json(j);
    return kExitOk;
  }
};

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heavy-tailed factor models: spurious-factor detection and factor-number estimation"};
  app.require_subcommand(1);

  SimulateCmd simulate;
  DetectCmd detect;
  EstimateCmd estimate;
  PanelCmd panel;
  GenerateCmd generate;
  OracleCmd oracle;
  simulate.add(app.add_subcommand("simulate", "Run a Monte Carlo experiment"));
  detect.add(app.add_subcommand("detect", "First-round spurious-signal detection on a panel"));
  estimate.add(app.add_subcommand("estimate", "Estimate the number of factors of a panel"));
  panel.add(app.add_subcommand("panel", "Rolling-window factor counts on a dated panel"));
  generate.add(app.add_subcommand("generate", "Write a simulated panel as CSV"));
  oracle.add(app.add_subcommand("oracle", "Print a theoretical quantity as JSON"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "efm: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (app.got_subcommand("simulate")) return simulate.run();
    if (app.got_subcommand("detect")) return detect.run();
    if (app.got_subcommand("estimate")) return estimate.run();
    if (app.got_subcommand("panel")) return panel.run();
    if (app.got_subcommand("generate")) return generate.run();
    if (app.got_subcommand("oracle")) return oracle.run();
  } catch (const efm::Error& e) {
    std::cerr << "efm: " << e.kind() << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "efm: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
