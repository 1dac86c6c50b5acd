// Acceptance runs: one pass/fail line per criterion.
//
//   efm_acceptance [--work DIR] [--threads T] [--seed S] ITEM...
//
// ITEM is a criterion number 1..11 or "setup", which runs the t(4.3) desk
// table shared by criteria 6 and 7 and leaves its records in DIR.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/binomial.hpp>
#include <fmt/format.h>

#include "efm/error.hpp"
#include "efm/estimators.hpp"
#include "efm/harness.hpp"
#include "efm/log.hpp"
#include "efm/magnify.hpp"
#include "efm/model.hpp"
#include "efm/oracles.hpp"
#include "efm/parallel.hpp"
#include "efm/rng.hpp"
#include "efm/spectral.hpp"

using namespace efm;
namespace fs = std::filesystem;

namespace {

struct Context {
  fs::path work = "acceptance_work";
  std::size_t threads = default_threads();
  std::uint64_t seed = 20240501;
};

struct Outcome {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;     ///< overrides the measured time when positive
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double rate_se(double rate, std::size_t reps) { return std::sqrt(rate * (1.0 - rate) / double(reps)); }

// Exact one-sided sign test on discordant pairs: P(X >= wins) with
// X ~ Binomial(wins + losses, 1/2).
double sign_test(std::size_t wins, std::size_t losses) {
  if (wins + losses == 0) return 1.0;
  if (wins == 0) return 1.0;
  boost::math::binomial_distribution<double> d(double(wins + losses), 0.5);
  return boost::math::cdf(boost::math::complement(d, double(wins - 1)));
}

ExperimentConfig desk_table(double dof, const Context& ctx) {
  ExperimentConfig cfg;
  cfg.scenario = "sigma-I";
  cfg.model = PopulationModel(400, {12.0, 6.0});
  cfg.law = RadiusLaw::multivariate_t(dof);
  cfg.n = 400;
  cfg.reps = 200;
  cfg.magnification = ExperimentConfig::desk_magnification();
  cfg.seed = ctx.seed;
  cfg.threads = ctx.threads;
  return cfg;
}

fs::path table_records(const Context& ctx, double dof) {
  return ctx.work / fmt::format("records_t{}.csv", dof);
}
fs::path table_seconds(const Context& ctx, double dof) {
  return ctx.work / fmt::format("seconds_t{}.txt", dof);
}

// Runs a desk table, or reads it back when a setup step already produced it.
std::pair<std::vector<RepRecord>, double> desk_records(const Context& ctx, double dof) {
  const auto rec = table_records(ctx, dof), sec = table_seconds(ctx, dof);
  if (fs::exists(rec) && fs::exists(sec)) {
    std::ifstream r(rec), s(sec);
    std::stringstream buf;
    buf << r.rdbuf();
    double seconds = 0.0;
    s >> seconds;
    return {parse_records_csv(buf.str()), seconds};
  }
  const auto table = run_experiment(desk_table(dof, ctx));
  fs::create_directories(ctx.work);
  write_text_file(rec, records_csv(table.records));
  write_text_file(sec, fmt::format("{}\n", table.seconds));
  return {table.records, table.seconds};
}

// Random spiked model with well separated spikes.
PopulationModel random_model(std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t p = 5 + std::size_t(u(g) * 400);
  const std::size_t m = 1 + std::size_t(u(g) * 4);
  std::vector<double> tail(p - m);
  for (auto& s : tail) s = 0.1 + 2.0 * u(g);
  std::vector<double> spikes;
  double top = 30.0 + 500.0 * u(g);
  for (std::size_t i = 0; i < m; ++i, top /= 1.2 + u(g)) spikes.push_back(std::max(top, 10.0 + double(m - i)));
  return PopulationModel(p, spikes, tail);
}

Outcome criterion1(const Context&) {
  std::mt19937_64 g(11);
  std::exponential_distribution<double> ex(1.0);
  std::size_t theta_bad = 0, zeta_bad = 0, errors = 0, rejected = 0;
  double worst_theta = 0.0, worst_zeta = 0.0;
  for (int trial = 0; trial < 1000;) {
    const auto model = random_model(g);
    std::vector<double> xi(static_cast<std::size_t>(std::max<double>(4, double(model.p()) * (0.5 + ex(g)))));
    for (auto& x : xi) x = ex(g);
    double lo = 0.0;
    for (double x : xi) lo += x;
    lo /= double(model.p());
    // Valid: the second-order denominators stay positive across the bracket.
    if (model.spikes().back() < 4.0 * model.max_tail() * lo) {
      ++rejected;
      continue;
    }
    ++trial;
    try {
      for (std::size_t i = 1; i <= model.m(); ++i) {
        const double s = model.spikes()[i - 1];
        const double theta = theta_fixed_point(model, i);
        const double rt = std::abs(theta_residual(model, i, theta));
        worst_theta = std::max(worst_theta, rt);
        if (!(rt < 1e-12) || theta < s || theta > 2.0 * s) ++theta_bad;
        const double zeta = zeta_fixed_point(model, xi, theta);
        const double rz = std::abs(zeta_residual(model, xi, theta, zeta));
        worst_zeta = std::max(worst_zeta, rz);
        if (!(rz < 1e-10) || zeta < lo || zeta > 2.0 * lo) ++zeta_bad;
      }
    } catch (const Error& e) {
      std::cerr << e.what() << "\n";
      ++errors;
    }
  }
  return {theta_bad == 0 && zeta_bad == 0 && errors == 0,
          fmt::format("1000 instances ({} draws outside the assumptions skipped); theta failures {}, max residual "
                      "{:.2e}; zeta failures {}, max residual {:.2e}; errors {}",
                      rejected, theta_bad, worst_theta, zeta_bad, worst_zeta, errors)};
}

Outcome criterion2(const Context&) {
  std::mt19937_64 g(12);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index p = 3 + Eigen::Index(u(g) * 58), n = 3 + Eigen::Index(u(g) * 88);
    Eigen::MatrixXd y(p, n);
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index r = 0; r < p; ++r) y(r, c) = z(g) * (1.0 + 3.0 * double(r == 0));
    std::vector<double> w(static_cast<std::size_t>(n));
    for (auto& x : w) x = 0.05 + 3.0 * u(g);
    const Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(w.data(), n);
    const Eigen::MatrixXd primal = y * wv.asDiagonal() * y.transpose() / double(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(primal, Eigen::EigenvaluesOnly);
    std::vector<double> ref(es.eigenvalues().data(), es.eigenvalues().data() + p);
    std::sort(ref.begin(), ref.end(), std::greater<>());
    const auto dual = magnified_spectrum(gram_matrix(y), w, EigenMode::Dense, 0);
    const std::size_t k = std::size_t(std::min(p, n));
    for (std::size_t i = 0; i < k; ++i) {
      const double scale = std::max(std::abs(ref[i]), 1e-6 * ref[0]);
      worst = std::max(worst, std::abs(dual[i] - ref[i]) / scale);
    }
  }
  return {worst < 1e-8, fmt::format("100 panels up to 60x90; max relative deviation {:.2e} (limit 1e-8)", worst)};
}

Outcome criterion3(const Context& ctx) {
  double worst = 0.0;
  std::size_t flagged = 0;
  const RadiusLaw laws[] = {RadiusLaw::multivariate_t(3.0), RadiusLaw::pareto_tail(1.5),
                            RadiusLaw::constant()};
  int idx = 0;
  for (const auto& law : laws) {
    for (EigenMode mode : {EigenMode::Dense, EigenMode::TopK}) {
      const auto panel = generate_panel(PopulationModel(120, {20.0, 8.0}), law, 150,
                                        child_seed(ctx.seed, {3, std::uint64_t(idx++)}));
      MagnificationConfig cfg;
      cfg.fixed_a = cfg.fixed_b = 1.0;
      cfg.K = 40;
      cfg.o = 10;
      cfg.eigen_mode = mode;
      cfg.threads = ctx.threads;
      const auto report = detect_spurious(panel, cfg);
      for (const auto& r : report.records) worst = std::max(worst, r.stat);
      flagged += report.f_hat;
    }
  }
  return {worst < 1e-14 && flagged == 0,
          fmt::format("max T over 6 panels {:.2e} (limit 1e-14); flagged {}", worst, flagged)};
}

Outcome criterion4(const Context& ctx) {
  const std::size_t p = 2000, n = 2000, reps = 50;
  const PopulationModel model(p, {});
  std::vector<double> ratio(reps);
  parallel_for(reps, ctx.threads, [&](std::size_t rep) {
    const auto panel = generate_panel(model, RadiusLaw::pareto_tail(1.5), n, child_seed(ctx.seed, {4, rep}));
    const auto& xi = std::get<SimulatedProvenance>(panel.provenance).radius_sample;
    const auto top = symmetric_top_eigenvalues(gram_matrix(panel).gram, 1, EigenMode::TopK);
    ratio[rep] = top[0] / spurious_location(model, xi, 1);
  });
  const auto inside = std::count_if(ratio.begin(), ratio.end(), [](double r) { return r >= 0.9 && r <= 1.1; });
  const double frac = double(inside) / double(reps);
  return {frac >= 0.9, fmt::format("lambda_1 / (sigma-bar xi^2_(1)) in [0.9, 1.1] in {}/{} reps ({:.0f}%, need 90%); "
                                   "median ratio {:.4f}",
                                   inside, reps, 100 * frac, median(ratio))};
}

Outcome criterion5(const Context& ctx) {
  const std::size_t p = 1000, n = 1000, reps = 30;
  const PopulationModel model(p, {240.0, 120.0});
  std::vector<std::vector<double>> stats(3, std::vector<double>(reps));
  for (std::size_t rep = 0; rep < reps; ++rep) {
    const auto panel = generate_panel(model, RadiusLaw::multivariate_t(2.5), n, child_seed(ctx.seed, {5, rep}));
    MagnificationConfig cfg;
    cfg.K = 1000;
    cfg.o = 3;
    cfg.fixed_a = 0.1;
    cfg.fixed_b = 1.9;
    cfg.threads = ctx.threads;
    cfg.seed = child_seed(ctx.seed, {5, rep, 1});
    const auto report = detect_spurious(panel, cfg);
    for (std::size_t k = 0; k < 3; ++k) stats[k][rep] = report.records[k].stat;
  }
  const double t1 = median(stats[0]), t2 = median(stats[1]), t3 = median(stats[2]);
  return {t3 >= 0.15 && t3 <= 0.40 && t1 <= 0.05 && t2 <= 0.05,
          fmt::format("median T_1 {:.4f}, T_2 {:.4f} (limit 0.05); median T_3 {:.4f} (range [0.15, 0.40], "
                      "reference {:.4f})",
                      t1, t2, t3, magnifier_constant(0.1, 1.9))};
}

struct PairedRates {
  double on = 0.0, ma = 0.0;
  std::size_t on_only = 0, ma_only = 0, completed = 0;
  std::optional<double> fp;
};

PairedRates paired(const std::vector<RepRecord>& records) {
  PairedRates out;
  const auto s = compute_metrics(records);
  out.on = s.over_on;
  out.ma = s.over_ma;
  out.fp = s.false_positive;
  out.completed = s.completed;
  for (const auto& r : records) {
    if (!r.ok) continue;
    const bool on = r.r_on > r.m, ma = r.r_ma > r.m;
    out.on_only += on && !ma;
    out.ma_only += ma && !on;
  }
  return out;
}

Outcome setup_tables(const Context& ctx) {
  fs::create_directories(ctx.work);
  for (double dof : {4.3}) {
    fs::remove(table_records(ctx, dof));
    fs::remove(table_seconds(ctx, dof));
  }
  const auto [records, seconds] = desk_records(ctx, 4.3);
  const auto s = compute_metrics(records);
  return {s.failed == 0, fmt::format("t(4.3) desk table: {} reps, {} failed, {:.1f} s", s.reps, s.failed, seconds)};
}

Outcome criterion6(const Context& ctx) {
  const auto [records, seconds] = desk_records(ctx, 4.3);
  const auto r = paired(records);
  const double pval = sign_test(r.on_only, r.ma_only);
  const bool a = r.on >= 0.03 && r.on <= 0.45;
  const bool b = r.ma < r.on && pval < 0.05;
  const bool c = r.fp.has_value() && *r.fp <= 0.05;
  return {a && b && c && r.completed == records.size(),
          fmt::format("On over {:.3f} (range [0.03, 0.45]) {}; Ma over {:.3f}, discordant On-only {} vs Ma-only {}, "
                      "one-sided p = {:.3g} {}; Ma false positive {} (limit 0.05) {}",
                      r.on, a ? "ok" : "FAIL", r.ma, r.on_only, r.ma_only, pval, b ? "ok" : "FAIL",
                      r.fp ? fmt::format("{:.3f}", *r.fp) : "undefined", c ? "ok" : "FAIL"),
          seconds};
}

Outcome criterion7(const Context& ctx) {
  const double dofs[] = {4.3, 4.8, 5.3};
  std::vector<PairedRates> rates;
  std::vector<std::size_t> reps;
  double seconds = 0.0;
  for (double dof : dofs) {
    const auto [records, s] = desk_records(ctx, dof);
    rates.push_back(paired(records));
    reps.push_back(records.size());
    seconds += s;
  }
  bool monotone = true, dominated = true;
  std::string detail;
  for (std::size_t k = 0; k < 3; ++k) {
    dominated = dominated && rates[k].ma <= rates[k].on;
    detail += fmt::format("{}t({}) On {:.3f} Ma {:.3f}", k ? "; " : "", dofs[k], rates[k].on, rates[k].ma);
    if (k > 0) {
      const double se = std::hypot(rate_se(rates[k - 1].on, reps[k - 1]), rate_se(rates[k].on, reps[k]));
      monotone = monotone && rates[k].on - rates[k - 1].on <= 2.0 * se;
    }
  }
  detail += fmt::format(" | On non-increasing within 2 SE: {}; Ma <= On at every dof: {}", monotone ? "yes" : "no",
                        dominated ? "yes" : "no");
  return {monotone && dominated, detail, seconds};
}

Outcome criterion8(const Context& ctx) {
  const std::size_t p = 800, n = 800, reps = 500;
  const PopulationModel model(p, {200.0});
  const auto law = RadiusLaw::exponential_tail(1.0);
  const double theta = theta_fixed_point(model, 1);
  std::vector<double> ratio(reps);
  parallel_for(reps, ctx.threads, [&](std::size_t rep) {
    const auto panel = generate_panel(model, law, n, child_seed(ctx.seed, {8, rep}));
    ratio[rep] = symmetric_top_eigenvalues(gram_matrix(panel).gram, 1, EigenMode::TopK)[0] / theta;
  });
  double mean = 0.0;
  for (double r : ratio) mean += r;
  mean /= double(reps);
  double var = 0.0;
  for (double r : ratio) var += double(n) * (r - mean) * (r - mean);
  var /= double(reps - 1);

  // E xi^4 for xi^2 ~ Weibull(1, 1) rescaled to unit mean, by Monte Carlo.
  std::mt19937_64 g(ctx.seed);
  std::weibull_distribution<double> wb(1.0, 1.0);
  double m1 = 0.0, m2 = 0.0;
  const int draws = 1000000;
  for (int k = 0; k < draws; ++k) {
    const double x = wb(g);
    m1 += x;
    m2 += x * x;
  }
  m1 /= draws;
  m2 /= draws;
  const double target = 3.0 * m2 / (m1 * m1) - 1.0;
  const double rel = std::abs(var - target) / target;
  return {rel <= 0.25, fmt::format("variance {:.4f} vs 3E[xi^4]-1 = {:.4f} (relative deviation {:.3f}, limit 0.25); "
                                   "mean ratio {:.5f}",
                                   var, target, rel, mean)};
}

Outcome criterion9(const Context& ctx) {
  ExperimentConfig cfg;
  cfg.scenario = "sigma-I-constant";
  cfg.model = PopulationModel(600, {12.0, 6.0});
  cfg.law = RadiusLaw::constant();
  cfg.n = 600;
  cfg.reps = 100;
  cfg.magnification = ExperimentConfig::desk_magnification();
  cfg.seed = ctx.seed;
  cfg.threads = ctx.threads;
  const auto table = run_experiment(cfg);
  std::size_t exact = 0, none = 0;
  for (const auto& r : table.records) {
    exact += r.ok && r.r_ma == 2;
    none += r.ok && !r.r_star;
  }
  const double frac = double(exact) / double(cfg.reps);
  return {frac >= 0.95, fmt::format("Ma = 2 in {}/{} reps ({:.0f}%, need 95%); nothing flagged in {} reps, "
                                    "resolved by the {} rule",
                                    exact, cfg.reps, 100 * frac, none, to_string(cfg.none_flagged)),
          table.seconds};
}

Outcome criterion10(const Context& ctx) {
  ExperimentConfig cfg;
  cfg.scenario = "determinism";
  cfg.model = PopulationModel(200, {10.0, 5.0});
  cfg.law = RadiusLaw::multivariate_t(4.3);
  cfg.n = 220;
  cfg.reps = 24;
  cfg.magnification = ExperimentConfig::desk_magnification();
  cfg.magnification.K = 120;
  cfg.seed = ctx.seed;
  std::vector<std::string> csv;
  for (std::size_t t : {1u, 8u}) {
    cfg.threads = t;
    csv.push_back(records_csv(run_experiment(cfg).records));
  }
  cfg.magnification.mode = MagnifierMode::AdaptivePerIndex;
  cfg.reps = 6;
  for (std::size_t t : {1u, 8u}) {
    cfg.threads = t;
    csv.push_back(records_csv(run_experiment(cfg).records));
  }
  const bool same = csv[0] == csv[1] && csv[2] == csv[3];
  return {same, fmt::format("records.csv at 1 and 8 threads: fixed magnifier {}, adaptive magnifier {}",
                            csv[0] == csv[1] ? "identical" : "DIFFERENT", csv[2] == csv[3] ? "identical" : "DIFFERENT")};
}

Outcome criterion11(const Context& ctx) {
  const std::size_t p = 1000, n = 1000, reps = 20;
  const PopulationModel model(p, {7.0});
  std::vector<std::array<double, 3>> top(reps);
  parallel_for(reps, ctx.threads, [&](std::size_t rep) {
    const auto panel = generate_panel(model, RadiusLaw::multivariate_t(4.0), n, child_seed(ctx.seed, {11, rep}));
    const auto v = symmetric_top_eigenvalues(gram_matrix(panel).gram, 3, EigenMode::TopK);
    top[rep] = {v[0], v[1], v[2]};
  });
  std::size_t hits = 0, detached = 0, located = 0;
  std::vector<double> l1, l2, l3;
  for (const auto& t : top) {
    const bool d = t[1] > 1.5 * t[2], l = t[0] >= 5.5 && t[0] <= 8.5;
    detached += d;
    located += l;
    hits += d && l;
    l1.push_back(t[0]);
    l2.push_back(t[1]);
    l3.push_back(t[2]);
  }
  const double frac = double(hits) / double(reps);
  return {frac >= 0.7, fmt::format("both conditions in {}/{} reps ({:.0f}%, need 70%); lambda_2 > 1.5 lambda_3 in {}, "
                                   "lambda_1 in [5.5, 8.5] in {}; medians {:.3f} {:.3f} {:.3f}",
                                   hits, reps, 100 * frac, detached, located, median(l1), median(l2), median(l3))};
}

struct Criterion {
  std::function<Outcome(const Context&)> run;
  double limit; ///< seconds
};

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance runs"};
  Context ctx;
  std::vector<std::string> items;
  std::string work = ctx.work.string();
  app.add_option("--work", work, "directory for shared run records");
  app.add_option("--threads", ctx.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", ctx.seed, "master seed");
  app.add_option("items", items, "criterion numbers 1..11, \"setup\" or \"all\"")->required();
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;

  std::size_t warnings = 0;
  set_warning_handler([&](const std::string&) { ++warnings; });

  const std::map<std::string, Criterion> table{
      {"setup", {setup_tables, 900}},  {"1", {criterion1, 5}},      {"2", {criterion2, 10}},
      {"3", {criterion3, 5}},          {"4", {criterion4, 180}},    {"5", {criterion5, 600}},
      {"6", {criterion6, 900}},        {"7", {criterion7, 2700}},   {"8", {criterion8, 600}},
      {"9", {criterion9, 300}},        {"10", {criterion10, 0}},    {"11", {criterion11, 180}},
  };
  if (items.size() == 1 && items[0] == "all") {
    items.clear();
    for (int k = 1; k <= 11; ++k) items.push_back(std::to_string(k));
  }

  bool all_pass = true;
  for (const auto& item : items) {
    const auto it = table.find(item);
    if (it == table.end()) {
      std::cerr << "unknown item " << item << "\n";
      return 1;
    }
    const auto t0 = Clock::now();
    Outcome out;
    try {
      out = it->second.run(ctx);
    } catch (const std::exception& e) {
      out = {false, fmt::format("error: {}", e.what())};
    }
    const double elapsed = out.seconds > 0.0 ? out.seconds : since(t0);
    const double limit = it->second.limit;
    const bool in_time = limit <= 0.0 || elapsed <= limit;
    const bool pass = out.pass && in_time;
    all_pass = all_pass && pass;
    const std::string label = item == "setup" ? "setup" : "criterion " + item;
    std::cout << fmt::format("[{}] {}: {} (elapsed {:.1f} s{}{})\n", pass ? "PASS" : "FAIL", label, out.detail,
                             elapsed, limit > 0.0 ? fmt::format(", limit {:.0f} s", limit) : "",
                             in_time ? "" : ", OVER TIME")
              << std::flush;
  }
  if (warnings) std::cout << fmt::format("({} library warnings suppressed)\n", warnings);
  return all_pass ? 0 : 1;
}
