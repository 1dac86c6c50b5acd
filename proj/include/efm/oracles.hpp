#pragma once

// Deterministic quantities from the first- and second-order theory of spiked
// elliptical covariances, used as test oracles and as a predictor for the
// location of noise-induced outliers.
//
// Scale: the consistent-equation system and the outlier root live on the
// scale S = sum_t xi_t^2 Sigma^{1/2} u_t u_t' Sigma^{1/2} with unit-sphere u_t.
// Spectrum values produced by this library are (p/n) times that scale.

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "efm/model.hpp"

namespace efm {

/// theta_i = sigma_i + p^{-1} sum_k s_k / (1 - s_k/sigma_i), validated against
/// the defining fixed point. `i` is 1-based.
double theta_fixed_point(const PopulationModel& model, std::size_t i);

/// Relative residual of theta in theta/sigma_i = (1 - A/theta)^{-1}.
double theta_residual(const PopulationModel& model, std::size_t i, double theta);

/// Root of the second-order equation on [tr D^2/p, 2 tr D^2/p].
double zeta_fixed_point(const PopulationModel& model, std::span<const double> xi_squared,
                        double theta_i);

/// zeta - RHS(zeta), relative to zeta.
double zeta_residual(const PopulationModel& model, std::span<const double> xi_squared,
                     double theta_i, double zeta);

struct OraclePoint {
  double theta = 0.0;
  double zeta = 0.0;
  double theta_residual = 0.0;
  double zeta_residual = 0.0;
};

OraclePoint oracle_point(const PopulationModel& model, std::span<const double> xi_squared,
                         std::size_t i);

/// 3 E[xi^4] E[w^2] - 1 with E[w^2] = (a^2 + ab + b^2)/3, or 3 E[xi^4] - 1
/// without a magnifier. A t law uses its attached dimension (the limit when
/// none is attached). Throws DivergentMoment when E[xi^4] is infinite.
double clt_variance(const RadiusLaw& law, std::optional<std::pair<double, double>> magnifier = {});

/// (a^2 + ab + b^2)/3 - 1, the variance of U[a, b] with mean one.
double magnifier_constant(double a, double b);

/// Order bound 3 T(n)/n for the spike ratio variance when E[xi^4] diverges.
double serious_tail_variance_bound(std::size_t n, const RadiusLaw& law);

/// sigma-bar * xi^2_(k) converted to the library's spectrum scale (times p/n).
double spurious_location(const PopulationModel& model, std::span<const double> xi_squared,
                         std::size_t k);

/// q = n^{1/alpha - eps} for polynomial tails, 1 otherwise.
double default_q(std::size_t n, const RadiusLaw& law, double eps = 0.05);

struct ConsistentSystem {
  std::size_t p = 0;               ///< full dimension (spikes included)
  std::vector<double> sigma_tail;  ///< the p - m bulk variances
  std::vector<double> xi_squared;  ///< n radius values
  double q = 1.0;
};

template <class T>
struct ConsistentSolution {
  T m1{}, m2{}, m{};
  std::size_t iterations = 0;
  double residual = 0.0;
};

/// Damped fixed point on m1 at a real z right of the support.
/// Throws DomainError when no admissible real solution exists at z and
/// IterationDiverged when the iteration stalls.
ConsistentSolution<double> solve_consistent_system(const ConsistentSystem& sys, double z,
                                                   std::optional<double> m1_start = {});

/// Complex mode, Im z > 0.
ConsistentSolution<std::complex<double>> solve_consistent_system(
    const ConsistentSystem& sys, std::complex<double> z);

/// Largest residual of the three defining equations at a candidate triple.
double consistent_residual(const ConsistentSystem& sys, double z, double m1, double m2, double m);
double consistent_residual(const ConsistentSystem& sys, std::complex<double> z,
                           std::complex<double> m1, std::complex<double> m2,
                           std::complex<double> m);

struct OutlierPrediction {
  double mu = 0.0;            ///< root of 1 + (xi^2_(1) + q) m1(mu) = 0
  double sample_value = 0.0;  ///< mu on the library's spectrum scale
  double ratio = 0.0;         ///< mu / (xi^2_(1) + q), close to sigma-bar
  double window = 0.0;        ///< n^{-1/2 + 2 eps} q, reported only
  double residual = 0.0;
};

/// Largest root of 1 + (xi^2_(1) + q) m1(mu) = 0. With m1 pinned at its root
/// value the system reduces to one monotone scalar equation, bisected and then
/// checked against the full system. Throws NoOutlierPredicted without a root.
OutlierPrediction predict_outlier(const ConsistentSystem& sys, double eps = 0.05);

} // namespace efm
