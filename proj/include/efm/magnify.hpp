#pragma once

// Fluctuation-magnification detector for spurious leading eigenvalues.
//
// Each replication j re-weights the observations with i.i.d. magnifiers
// w_t ~ U[a, b], (a + b)/2 = 1, and records the i-th eigenvalue of
// (1/n) Y diag(w) Y'. Real spikes barely move relative to their mean;
// eigenvalues produced by one extreme radius move with that observation's
// weight, so their relative variance T_i settles near Var(w).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "efm/spectral.hpp"

namespace efm {

enum class MagnifierMode { Fixed, AdaptivePerIndex, SharedAdaptive };

struct MagnifierBounds {
  double a = 0.1;
  double b = 1.9;
  std::size_t index = 0;
  MagnifierMode mode = MagnifierMode::Fixed;
  /// Adaptive only: lambda_i/lambda_{i+1} - b/a.
  double slack_ratio = 0.0;
  /// Adaptive only: 1 - b log(n) lambda_i / lambda_{i-1}.
  double slack_order = 0.0;
};

enum class WeightLaw { Uniform, Binomial };

struct ThresholdPaperCeil {};
struct ThresholdPaperFrac {};
struct ThresholdFixedSmall {
  double kappa = 1.0;
};
struct ThresholdJump {
  double rho = 4.0;
};
using ThresholdPolicy =
    std::variant<ThresholdPaperCeil, ThresholdPaperFrac, ThresholdFixedSmall, ThresholdJump>;

struct MagnificationConfig {
  std::size_t K = 1000;
  std::size_t o = 15;
  MagnifierMode mode = MagnifierMode::Fixed;
  double fixed_a = 0.1;
  double fixed_b = 1.9;
  WeightLaw weight_law = WeightLaw::Uniform;
  ThresholdPolicy threshold = ThresholdFixedSmall{1.0};
  /// Multiplies eigenvalues before the lambda-dependent threshold branches;
  /// set to n to evaluate them on the unnormalized YY' scale.
  double eigen_scale = 1.0;
  EigenMode eigen_mode = EigenMode::TopK;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  /// Throws ConfigError when K < 2, o < 1, kappa <= 0, rho <= 1 or the fixed
  /// magnifier violates 0 < a <= b, (a + b)/2 = 1.
  void validate() const;
};

/// Adaptive bounds from the plug-in constraints b/a <= l_i/l_{i+1} and
/// b log(n) l_i/l_{i-1} < 1 with l_0 = log^2(n) l_1. `i` is 1-based.
/// Fixed mode returns (fixed_a, fixed_b).
MagnifierBounds magnifier_bounds(const Spectrum& spec, std::size_t i, std::size_t n,
                                 MagnifierMode mode, double fixed_a = 0.1,
                                 double fixed_b = 1.9);

/// K^{-1} sum_j (x_j - mean)^2 / mean^2.
double fluctuation_statistic(std::span<const double> samples);

/// Threshold L_i for eigenvalue `lambda` (already on the policy's scale).
/// `previous_stats` holds T_1..T_{i-1}; for i = 1 Jump also reads
/// `current_stat`.
double threshold_value(double lambda, std::size_t n, const ThresholdPolicy& policy,
                       std::span<const double> previous_stats = {},
                       std::optional<double> current_stat = std::nullopt);

struct IndexRecord {
  std::size_t i = 0;
  double stat = 0.0;      ///< T_i
  double threshold = 0.0; ///< L_i
  bool flagged = false;
  double magnified_mean = 0.0;
  double eigenvalue = 0.0; ///< lambda_i of the unmagnified spectrum
  double a = 0.0;
  double b = 0.0;
  bool fell_back = false;  ///< adaptive bounds infeasible, fixed used instead
  std::string fallback_reason;
};

struct DetectionReport {
  std::vector<IndexRecord> records;
  std::size_t f_hat = 0;
  std::optional<std::size_t> r_star; ///< nullopt = NoneFlagged
  std::size_t K = 0;
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t eigensolves = 0;
};

DetectionReport detect_spurious(const GramCache& cache, const Spectrum& spec,
                                const MagnificationConfig& config);
DetectionReport detect_spurious(const GramCache& cache, const MagnificationConfig& config);
DetectionReport detect_spurious(const PanelMatrix& panel, const MagnificationConfig& config);

/// Detection with caller-supplied weight draws (one vector of length n per
/// replication); used to exercise degenerate magnifiers.
DetectionReport detect_with_weights(const GramCache& cache, const Spectrum& spec,
                                    const std::vector<std::vector<double>>& weights,
                                    const MagnificationConfig& config);

nlohmann::json to_json(const DetectionReport& report);
/// Plot CSV with header "i,T,L,flagged".
std::string fluctuation_csv(const DetectionReport& report);

std::string to_string(MagnifierMode mode);
MagnifierMode magnifier_mode_from_string(const std::string& s);
std::string threshold_name(const ThresholdPolicy& policy);
ThresholdPolicy threshold_from_string(const std::string& s, double param = 0.0);

nlohmann::json to_json(const MagnificationConfig& config);
MagnificationConfig magnification_config_from_json(const nlohmann::json& j,
                                                   MagnificationConfig base = {});

} // namespace efm
