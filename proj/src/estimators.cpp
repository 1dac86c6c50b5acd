#include "efm/estimators.hpp"

#include <cmath>

#include <fmt/format.h>

#include "efm/error.hpp"

namespace efm {

namespace {

nlohmann::json finite_or_null(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

} // namespace

double default_onatski_nu(std::size_t n) { return std::ceil(std::log(static_cast<double>(n))); }

std::size_t onatski_rule(const std::vector<double>& gaps, double nu) {
  for (std::size_t i = 0; i < gaps.size(); ++i)
    if (gaps[i] > nu) return i + 1;
  return 0;
}

FactorEstimate onatski_estimate(const Spectrum& spec, std::size_t o, std::size_t n,
                                std::optional<double> nu) {
  FactorEstimate est;
  est.method = EstimateMethod::On;
  est.diagnostics.gaps = gap_ratios(spec, o);
  est.diagnostics.nu = nu.value_or(default_onatski_nu(n));
  est.r_hat = onatski_rule(est.diagnostics.gaps, *est.diagnostics.nu);
  est.diagnostics.no_signal = est.r_hat == 0;
  return est;
}

FactorEstimate second_round_estimate(const Spectrum& spec, std::size_t r_star) {
  if (r_star < 2)
    throw BoundsError(fmt::format("second round needs r* >= 2 (got {})", r_star));
  FactorEstimate est;
  est.method = EstimateMethod::SecondRoundOnly;
  est.diagnostics.r_star = r_star;
  const auto g = gap_ratios(spec, r_star);
  est.diagnostics.gaps = g;

  std::optional<std::size_t> best;
  for (std::size_t i = 1; i + 1 <= r_star; ++i) {
    double sum = 0.0;
    std::size_t finite = 0;
    for (std::size_t j = 1; j <= r_star; ++j) {
      if (j == i || std::isinf(g[j - 1])) continue;
      sum += g[j - 1];
      ++finite;
    }
    const double delta = finite ? sum / static_cast<double>(finite) : 0.0;
    est.diagnostics.deltas.push_back(delta);
    if (g[i - 1] >= delta) best = i;
  }
  if (best) {
    est.r_hat = *best;
  } else {
    est.r_hat = r_star - 1;
    est.diagnostics.fallback = true;
  }
  return est;
}

FactorEstimate combine_detection(const Spectrum& spec, DetectionReport report, std::size_t o,
                                 const EstimateOptions& options) {
  FactorEstimate est;
  if (!report.r_star && options.none_flagged == NoneFlaggedRule::Onatski) {
    est = onatski_estimate(spec, o, spec.n, options.nu);
    est.diagnostics.none_flagged = true;
  } else {
    const std::size_t r_star = report.r_star.value_or(o + 1);
    if (r_star == 1) {
      est.diagnostics.r_star = 1;
      est.diagnostics.all_spurious = true;
      est.r_hat = 0;
    } else {
      est = second_round_estimate(spec, r_star);
    }
    est.diagnostics.none_flagged = !report.r_star;
  }
  est.method = EstimateMethod::Ma;
  est.detection = std::move(report);
  return est;
}

FactorEstimate estimate_factors(const GramCache& cache, const Spectrum& spec,
                                const MagnificationConfig& config, const EstimateOptions& options) {
  const std::size_t full = std::min(spec.p, spec.n);
  if (config.o + 3 > full)
    throw BoundsError(fmt::format("o = {} needs o + 3 <= min(p, n) = {} for the second round",
                                  config.o, full));
  return combine_detection(spec, detect_spurious(cache, spec, config), config.o, options);
}

FactorEstimate estimate_factors(const PanelMatrix& panel, const MagnificationConfig& config,
                                const EstimateOptions& options) {
  validate_panel(panel);
  const auto cache = gram_matrix(panel);
  return estimate_factors(cache, spectrum(cache), config, options);
}

std::string to_string(NoneFlaggedRule r) {
  return r == NoneFlaggedRule::Onatski ? "onatski" : "scan-all";
}

NoneFlaggedRule none_flagged_rule_from_string(const std::string& s) {
  if (s == "onatski") return NoneFlaggedRule::Onatski;
  if (s == "scan-all") return NoneFlaggedRule::ScanAll;
  throw ConfigError(fmt::format("unknown none-flagged rule '{}' (onatski, scan-all)", s));
}

std::string to_string(EstimateMethod m) {
  switch (m) {
  case EstimateMethod::On: return "On";
  case EstimateMethod::Ma: return "Ma";
  case EstimateMethod::SecondRoundOnly: return "SecondRoundOnly";
  }
  return "On";
}

nlohmann::json to_json(const FactorEstimate& est) {
  const auto& d = est.diagnostics;
  nlohmann::json gaps = nlohmann::json::array(), deltas = nlohmann::json::array();
  for (double g : d.gaps) gaps.push_back(finite_or_null(g));
  for (double x : d.deltas) deltas.push_back(finite_or_null(x));
  nlohmann::json diag{{"gaps", gaps}, {"deltas", deltas}};
  if (d.nu) diag["nu"] = *d.nu;
  diag["r_star"] = d.r_star ? nlohmann::json(*d.r_star) : nlohmann::json(nullptr);
  diag["none_flagged"] = d.none_flagged;
  diag["all_spurious"] = d.all_spurious;
  diag["no_signal"] = d.no_signal;
  diag["fallback"] = d.fallback;
  nlohmann::json j{{"schema_version", 1},
                   {"r_hat", est.r_hat},
                   {"method", to_string(est.method)},
                   {"diagnostics", diag}};
  if (est.detection) j["detection"] = to_json(*est.detection);
  return j;
}

} // namespace efm
