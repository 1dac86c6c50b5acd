#include "efm/magnify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>
#include <fmt/format.h>

#include "efm/error.hpp"
#include "efm/parallel.hpp"
#include "efm/rng.hpp"

namespace efm {

namespace {

constexpr double kShrink = 1e-3;

double log_sq_over_n(std::size_t n) {
  const double ln = std::log(static_cast<double>(n));
  return ln * ln / static_cast<double>(n);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

void check_fixed(double a, double b) {
  if (!(a > 0.0) || !(a <= b) || std::abs(0.5 * (a + b) - 1.0) > 1e-12)
    throw ConfigError(fmt::format("magnifier [{}, {}] needs 0 < a <= b and (a + b)/2 = 1", a, b));
}

std::vector<double> draw_weights(std::size_t n, double a, double b, WeightLaw law,
                                 std::uint64_t seed) {
  std::vector<double> w(n, a);
  if (a == b) return w;
  Rng rng(seed);
  if (law == WeightLaw::Uniform) {
    boost::random::uniform_real_distribution<double> u(a, b);
    for (auto& x : w) x = u(rng);
  } else {
    boost::random::bernoulli_distribution<double> coin(0.5);
    for (auto& x : w) x = coin(rng) ? b : a;
  }
  return w;
}

struct IndexPlan {
  double a, b;
  bool fell_back = false;
  std::string reason;
};

// Bounds used for every index. Fixed and SharedAdaptive share one plan.
std::vector<IndexPlan> plan_bounds(const Spectrum& spec, std::size_t n,
                                   const MagnificationConfig& cfg) {
  std::vector<IndexPlan> plans(cfg.o, IndexPlan{cfg.fixed_a, cfg.fixed_b});
  if (cfg.mode == MagnifierMode::Fixed) return plans;

  std::vector<std::string> reasons(cfg.o);
  std::vector<std::optional<MagnifierBounds>> found(cfg.o);
  for (std::size_t i = 1; i <= cfg.o; ++i) {
    try {
      found[i - 1] = magnifier_bounds(spec, i, n, MagnifierMode::AdaptivePerIndex);
    } catch (const InfeasibleMagnifier& e) {
      reasons[i - 1] = e.what();
    }
  }

  if (cfg.mode == MagnifierMode::AdaptivePerIndex) {
    for (std::size_t k = 0; k < cfg.o; ++k) {
      if (found[k]) {
        plans[k] = {found[k]->a, found[k]->b};
      } else {
        plans[k].fell_back = true;
        plans[k].reason = reasons[k];
      }
    }
    return plans;
  }

  // SharedAdaptive: the narrowest feasible magnifier satisfies the ratio and
  // order constraints of every feasible index at once.
  std::optional<double> b_min;
  for (const auto& f : found)
    if (f) b_min = b_min ? std::min(*b_min, f->b) : f->b;
  if (!b_min) {
    for (auto& pl : plans) {
      pl.fell_back = true;
      pl.reason = "no index admits an adaptive magnifier";
    }
    return plans;
  }
  for (std::size_t k = 0; k < cfg.o; ++k) {
    plans[k] = {2.0 - *b_min, *b_min};
    if (!found[k]) plans[k].reason = reasons[k];
  }
  return plans;
}

DetectionReport assemble(const Spectrum& spec, const MagnificationConfig& cfg,
                         const std::vector<std::vector<double>>& samples,
                         const std::vector<IndexPlan>& plans, std::size_t eigensolves) {
  DetectionReport rep;
  rep.K = samples.empty() ? 0 : samples.front().size();
  rep.n = spec.n;
  rep.p = spec.p;
  rep.eigensolves = eigensolves;
  std::vector<double> stats;
  for (std::size_t k = 0; k < cfg.o; ++k) {
    IndexRecord r;
    r.i = k + 1;
    r.stat = fluctuation_statistic(samples[k]);
    double sum = 0.0;
    for (double x : samples[k]) sum += x;
    r.magnified_mean = sum / static_cast<double>(samples[k].size());
    r.eigenvalue = spec[k];
    r.threshold = threshold_value(cfg.eigen_scale * spec[k], spec.n, cfg.threshold, stats, r.stat);
    r.flagged = r.stat > r.threshold;
    r.a = plans[k].a;
    r.b = plans[k].b;
    r.fell_back = plans[k].fell_back;
    r.fallback_reason = plans[k].reason;
    stats.push_back(r.stat);
    if (r.flagged) {
      ++rep.f_hat;
      if (!rep.r_star) rep.r_star = r.i;
    }
    rep.records.push_back(std::move(r));
  }
  return rep;
}

void check_shape(const Spectrum& spec, const MagnificationConfig& cfg) {
  cfg.validate();
  const std::size_t full = std::min(spec.p, spec.n);
  if (cfg.o + 2 > full)
    throw BoundsError(fmt::format("o = {} needs o + 2 <= min(p, n) = {}", cfg.o, full));
  if (spec.size() < cfg.o + 1)
    throw BoundsError(fmt::format("spectrum holds {} values, detection needs {}", spec.size(), cfg.o + 1));
  if (spec.n < 8) throw BoundsError(fmt::format("detection needs n >= 8 (got {})", spec.n));
}

} // namespace

void MagnificationConfig::validate() const {
  if (K < 2) throw ConfigError(fmt::format("K must be at least 2 (got {})", K));
  if (o < 1) throw ConfigError("o must be at least 1");
  check_fixed(fixed_a, fixed_b);
  if (!(eigen_scale > 0.0) || !std::isfinite(eigen_scale))
    throw ConfigError(fmt::format("eigen_scale must be positive (got {})", eigen_scale));
  if (auto* f = std::get_if<ThresholdFixedSmall>(&threshold); f && !(f->kappa > 0.0))
    throw ConfigError(fmt::format("kappa must be positive (got {})", f->kappa));
  if (auto* j = std::get_if<ThresholdJump>(&threshold); j && !(j->rho > 1.0))
    throw ConfigError(fmt::format("rho must exceed 1 (got {})", j->rho));
}

MagnifierBounds magnifier_bounds(const Spectrum& spec, std::size_t i, std::size_t n,
                                 MagnifierMode mode, double fixed_a, double fixed_b) {
  MagnifierBounds out;
  out.index = i;
  out.mode = mode;
  if (mode == MagnifierMode::Fixed) {
    check_fixed(fixed_a, fixed_b);
    out.a = fixed_a;
    out.b = fixed_b;
    return out;
  }
  if (i < 1 || spec.size() < i + 1)
    throw BoundsError(fmt::format("magnifier_bounds: index {} needs {} eigenvalues, have {}",
                                  i, i + 1, spec.size()));
  if (n < 8) throw BoundsError(fmt::format("magnifier_bounds needs n >= 8 (got {})", n));

  const double ln = std::log(static_cast<double>(n));
  const double li = spec[i - 1];
  const double next = spec[i];
  const double prev = i == 1 ? ln * ln * spec[0] : spec[i - 2];
  if (!(li > 0.0))
    throw InfeasibleMagnifier(fmt::format("index {}: eigenvalue {} is not positive", i, li));
  const double r = next > 0.0 ? li / next : std::numeric_limits<double>::infinity();
  const double b_ratio = std::isinf(r) ? 2.0 : 2.0 * r / (1.0 + r);
  const double b_order = prev / (li * ln);
  const double b = std::min(b_ratio, b_order) * (1.0 - kShrink);
  if (!(b > 1.0)) {
    const bool ratio_binds = b_ratio <= b_order;
    throw InfeasibleMagnifier(fmt::format(
        "index {}: condition {} leaves no room (b = {:.6g}; l_i/l_(i+1) = {:.6g}, l_(i-1)/(l_i log n) = {:.6g})",
        i, ratio_binds ? "b/a <= l_i/l_(i+1)" : "b log(n) l_i/l_(i-1) < 1", b, r, b_order));
  }
  out.b = b;
  out.a = 2.0 - b;
  out.slack_ratio = r - out.b / out.a;
  out.slack_order = 1.0 - out.b * ln * li / prev;
  return out;
}

double fluctuation_statistic(std::span<const double> samples) {
  if (samples.size() < 2)
    throw DomainError(fmt::format("fluctuation statistic needs at least 2 samples (got {})", samples.size()));
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(samples.size());
  if (!(mean > 0.0)) throw DomainError(fmt::format("fluctuation statistic: sample mean {} is not positive", mean));
  double acc = 0.0;
  for (double x : samples) {
    const double d = x / mean - 1.0;
    acc += d * d;
  }
  return acc / static_cast<double>(samples.size());
}

double threshold_value(double lambda, std::size_t n, const ThresholdPolicy& policy,
                       std::span<const double> previous_stats, std::optional<double> current_stat) {
  const double base = log_sq_over_n(n);
  const double nd = static_cast<double>(n);
  const double ln = std::log(nd);
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ThresholdFixedSmall>) {
          return p.kappa * base;
        } else if constexpr (std::is_same_v<P, ThresholdJump>) {
          if (!previous_stats.empty())
            return p.rho * median({previous_stats.begin(), previous_stats.end()});
          const double floor = p.rho * base;
          return current_stat && *current_stat > floor ? floor
                                                       : std::numeric_limits<double>::infinity();
        } else {
          if (lambda <= std::sqrt(nd)) return base;
          double tau = std::log(lambda) / ln;
          if constexpr (std::is_same_v<P, ThresholdPaperCeil>)
            tau = std::ceil(tau);
          else
            tau = std::clamp(tau, 0.0, 1.0);
          return ln * ln / std::pow(nd, 1.0 - tau);
        }
      },
      policy);
}

// Solves for replications 0..count-1 in fixed blocks so that results do not
// depend on the thread count.
constexpr std::size_t kSolveBatch = 64;

template <class MakeWeights, class Store>
void batched_solves(const GramCache& cache, std::size_t count, std::size_t threads, EigenMode mode,
                    std::size_t top_k, MakeWeights make_weights, Store store) {
  const std::size_t blocks = (count + kSolveBatch - 1) / kSolveBatch;
  parallel_for(blocks, threads, [&](std::size_t blk) {
    const std::size_t lo = blk * kSolveBatch, hi = std::min(count, lo + kSolveBatch);
    std::vector<std::vector<double>> ws;
    for (std::size_t j = lo; j < hi; ++j) ws.push_back(make_weights(j));
    const auto specs = magnified_spectra(cache, ws, mode, top_k);
    for (std::size_t j = lo; j < hi; ++j) store(j, specs[j - lo]);
  });
}

DetectionReport detect_with_weights(const GramCache& cache, const Spectrum& spec,
                                    const std::vector<std::vector<double>>& weights,
                                    const MagnificationConfig& config) {
  MagnificationConfig cfg = config;
  cfg.K = weights.size();
  check_shape(spec, cfg);
  std::vector<std::vector<double>> samples(cfg.o, std::vector<double>(cfg.K));
  batched_solves(
      cache, cfg.K, cfg.threads, cfg.eigen_mode, cfg.o, [&](std::size_t j) { return weights[j]; },
      [&](std::size_t j, const Spectrum& s) {
        for (std::size_t k = 0; k < cfg.o; ++k) samples[k][j] = s[k];
      });
  std::vector<IndexPlan> plans(cfg.o, IndexPlan{std::numeric_limits<double>::quiet_NaN(),
                                                std::numeric_limits<double>::quiet_NaN()});
  return assemble(spec, cfg, samples, plans, cfg.K);
}

DetectionReport detect_spurious(const GramCache& cache, const Spectrum& spec,
                                const MagnificationConfig& cfg) {
  check_shape(spec, cfg);
  const std::size_t n = cache.n;
  const auto plans = plan_bounds(spec, n, cfg);
  std::vector<std::vector<double>> samples(cfg.o, std::vector<double>(cfg.K));

  if (cfg.mode == MagnifierMode::AdaptivePerIndex) {
    for (std::size_t k = 0; k < cfg.o; ++k)
      batched_solves(
          cache, cfg.K, cfg.threads, cfg.eigen_mode, k + 1,
          [&](std::size_t j) {
            return draw_weights(n, plans[k].a, plans[k].b, cfg.weight_law,
                                child_seed(cfg.seed, {k + 1, j}));
          },
          [&](std::size_t j, const Spectrum& s) { samples[k][j] = s[k]; });
    return assemble(spec, cfg, samples, plans, cfg.o * cfg.K);
  }

  const double a = plans.front().a, b = plans.front().b;
  batched_solves(
      cache, cfg.K, cfg.threads, cfg.eigen_mode, cfg.o,
      [&](std::size_t j) { return draw_weights(n, a, b, cfg.weight_law, child_seed(cfg.seed, {0, j})); },
      [&](std::size_t j, const Spectrum& s) {
        for (std::size_t k = 0; k < cfg.o; ++k) samples[k][j] = s[k];
      });
  return assemble(spec, cfg, samples, plans, cfg.K);
}

DetectionReport detect_spurious(const GramCache& cache, const MagnificationConfig& config) {
  return detect_spurious(cache, spectrum(cache), config);
}

DetectionReport detect_spurious(const PanelMatrix& panel, const MagnificationConfig& config) {
  validate_panel(panel);
  return detect_spurious(gram_matrix(panel), config);
}

nlohmann::json to_json(const DetectionReport& report) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : report.records) {
    nlohmann::json j{{"i", r.i},
                     {"T", r.stat},
                     {"L", std::isinf(r.threshold) ? nlohmann::json(nullptr) : nlohmann::json(r.threshold)},
                     {"flagged", r.flagged},
                     {"magnified_mean", r.magnified_mean},
                     {"eigenvalue", r.eigenvalue}};
    if (std::isfinite(r.a)) {
      j["a"] = r.a;
      j["b"] = r.b;
    }
    if (r.fell_back) j["fell_back"] = true;
    if (!r.fallback_reason.empty()) j["fallback_reason"] = r.fallback_reason;
    recs.push_back(std::move(j));
  }
  return {{"schema_version", 1},
          {"records", recs},
          {"summary",
           {{"f_hat", report.f_hat},
            {"r_star", report.r_star ? nlohmann::json(*report.r_star) : nlohmann::json(nullptr)},
            {"K", report.K},
            {"n", report.n},
            {"p", report.p},
            {"eigensolves", report.eigensolves}}}};
}

std::string fluctuation_csv(const DetectionReport& report) {
  std::ostringstream os;
  os << "i,T,L,flagged\n";
  for (const auto& r : report.records)
    os << fmt::format("{},{:.17g},{:.17g},{}\n", r.i, r.stat, r.threshold, r.flagged ? 1 : 0);
  return os.str();
}

std::string to_string(MagnifierMode mode) {
  switch (mode) {
  case MagnifierMode::Fixed: return "fixed";
  case MagnifierMode::AdaptivePerIndex: return "adaptive";
  case MagnifierMode::SharedAdaptive: return "shared-adaptive";
  }
  return "fixed";
}

MagnifierMode magnifier_mode_from_string(const std::string& s) {
  if (s == "fixed") return MagnifierMode::Fixed;
  if (s == "adaptive" || s == "adaptive-per-index") return MagnifierMode::AdaptivePerIndex;
  if (s == "shared-adaptive" || s == "shared") return MagnifierMode::SharedAdaptive;
  throw ConfigError(fmt::format("unknown magnifier mode '{}' (fixed, adaptive, shared-adaptive)", s));
}

std::string threshold_name(const ThresholdPolicy& policy) {
  return std::visit(
      [](const auto& p) -> std::string {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ThresholdPaperCeil>) return "paper-ceil";
        else if constexpr (std::is_same_v<P, ThresholdPaperFrac>) return "paper-frac";
        else if constexpr (std::is_same_v<P, ThresholdFixedSmall>) return "fixed-small";
        else return "jump";
      },
      policy);
}

ThresholdPolicy threshold_from_string(const std::string& s, double param) {
  if (s == "paper-ceil") return ThresholdPaperCeil{};
  if (s == "paper-frac") return ThresholdPaperFrac{};
  if (s == "fixed-small") return ThresholdFixedSmall{param > 0.0 ? param : 1.0};
  if (s == "jump") return ThresholdJump{param > 0.0 ? param : 4.0};
  throw ConfigError(fmt::format("unknown threshold policy '{}' (paper-ceil, paper-frac, fixed-small, jump)", s));
}

nlohmann::json to_json(const MagnificationConfig& c) {
  nlohmann::json thr{{"policy", threshold_name(c.threshold)}};
  if (auto* f = std::get_if<ThresholdFixedSmall>(&c.threshold)) thr["kappa"] = f->kappa;
  if (auto* j = std::get_if<ThresholdJump>(&c.threshold)) thr["rho"] = j->rho;
  return {{"K", c.K},
          {"o", c.o},
          {"mode", to_string(c.mode)},
          {"magnifier", {c.fixed_a, c.fixed_b}},
          {"weight_law", c.weight_law == WeightLaw::Uniform ? "uniform" : "binomial"},
          {"threshold", thr},
          {"eigen_scale", c.eigen_scale},
          {"eigen_mode", c.eigen_mode == EigenMode::TopK ? "topk" : "dense"},
          {"seed", c.seed}};
}

MagnificationConfig magnification_config_from_json(const nlohmann::json& j, MagnificationConfig c) {
  try {
    if (j.contains("K")) c.K = j.at("K").get<std::size_t>();
    if (j.contains("o")) c.o = j.at("o").get<std::size_t>();
    if (j.contains("mode")) c.mode = magnifier_mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("magnifier")) {
      const auto& m = j.at("magnifier");
      c.fixed_a = m.at(0).get<double>();
      c.fixed_b = m.at(1).get<double>();
    }
    if (j.contains("weight_law")) {
      const auto s = j.at("weight_law").get<std::string>();
      if (s == "uniform") c.weight_law = WeightLaw::Uniform;
      else if (s == "binomial") c.weight_law = WeightLaw::Binomial;
      else throw ConfigError(fmt::format("unknown weight law '{}'", s));
    }
    if (j.contains("threshold")) {
      const auto& t = j.at("threshold");
      const auto name = t.at("policy").get<std::string>();
      double param = 0.0;
      if (t.contains("kappa")) param = t.at("kappa").get<double>();
      if (t.contains("rho")) param = t.at("rho").get<double>();
      c.threshold = threshold_from_string(name, param);
    }
    if (j.contains("eigen_scale")) c.eigen_scale = j.at("eigen_scale").get<double>();
    if (j.contains("eigen_mode")) {
      const auto s = j.at("eigen_mode").get<std::string>();
      if (s == "topk") c.eigen_mode = EigenMode::TopK;
      else if (s == "dense") c.eigen_mode = EigenMode::Dense;
      else throw ConfigError(fmt::format("unknown eigen mode '{}'", s));
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("magnification config: {}", e.what()));
  }
  c.validate();
  return c;
}

} // namespace efm
