#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efm/magnify.hpp"
#include "efm/spectral.hpp"

namespace efm {

enum class EstimateMethod { On, Ma, SecondRoundOnly };

struct EstimateDiagnostics {
  std::vector<double> gaps;   ///< G_1.. used by the rule
  std::vector<double> deltas; ///< second-round averaged thresholds, one per i < r*
  std::optional<double> nu;   ///< Onatski threshold
  std::optional<std::size_t> r_star;
  bool none_flagged = false;  ///< detection flagged nothing, r* := o + 1
  bool all_spurious = false;  ///< r* = 1
  bool no_signal = false;     ///< Onatski: no gap above nu
  bool fallback = false;      ///< second round: empty set, r_hat = r* - 1
};

struct FactorEstimate {
  std::size_t r_hat = 0;
  EstimateMethod method = EstimateMethod::On;
  EstimateDiagnostics diagnostics;
  std::optional<DetectionReport> detection;
};

/// ceil(log n).
double default_onatski_nu(std::size_t n);

/// r_hat = min{i <= o : G_i > nu}, 0 when no index qualifies.
FactorEstimate onatski_estimate(const Spectrum& spec, std::size_t o, std::size_t n,
                                std::optional<double> nu = std::nullopt);

/// The same rule applied to precomputed gap ratios.
std::size_t onatski_rule(const std::vector<double>& gaps, double nu);

/// Second round for r_star >= 2: r_hat = max{i <= r*-1 : G_i >= delta_i}
/// with delta_i the average of G_j, j <= r*, j != i (infinite gaps excluded),
/// or r* - 1 when no index qualifies.
FactorEstimate second_round_estimate(const Spectrum& spec, std::size_t r_star);

/// What the combined pipeline does when detection flags no index.
enum class NoneFlaggedRule {
  Onatski, ///< return the Onatski estimate over the first o gaps
  ScanAll, ///< r* := o + 1 and run the second round over all o gaps
};

struct EstimateOptions {
  NoneFlaggedRule none_flagged = NoneFlaggedRule::Onatski;
  std::optional<double> nu; ///< Onatski threshold, ceil(log n) when unset
};

/// Detection followed by the second round. r* = 1 gives r_hat = 0; an empty
/// flag set is handled per `options.none_flagged`.
FactorEstimate estimate_factors(const GramCache& cache, const Spectrum& spec,
                                const MagnificationConfig& config,
                                const EstimateOptions& options = {});
FactorEstimate estimate_factors(const PanelMatrix& panel, const MagnificationConfig& config,
                                const EstimateOptions& options = {});

/// Second-round step given an existing detection report.
FactorEstimate combine_detection(const Spectrum& spec, DetectionReport report, std::size_t o,
                                 const EstimateOptions& options = {});

std::string to_string(NoneFlaggedRule r);
NoneFlaggedRule none_flagged_rule_from_string(const std::string& s);

std::string to_string(EstimateMethod m);
nlohmann::json to_json(const FactorEstimate& est);

} // namespace efm
