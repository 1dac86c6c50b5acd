#pragma once

// Elliptical factor model: radius laws, diagonal spiked covariances and the
// stochastic representation y_t = xi_t * Sigma^{1/2} * (sqrt(p) u_t).

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "efm/rng.hpp"

namespace efm {

enum class RadiusKind { MultivariateT, ParetoTail, ExponentialTail, Constant };

/// Law of the squared radius xi^2, always normalized to E[xi^2] = 1.
///
/// The slowly varying factor of a polynomial tail is fixed to a constant, so
/// ParetoTail is a pure Pareto and MultivariateT a pure t radius. The t law
/// needs the ambient dimension to normalize; it is attached with
/// `with_dimension` (generate_panel does this automatically).
class RadiusLaw {
public:
  static RadiusLaw multivariate_t(double nu);
  static RadiusLaw pareto_tail(double alpha);
  static RadiusLaw exponential_tail(double beta);
  static RadiusLaw constant();

  RadiusKind kind() const noexcept { return kind_; }
  /// nu, alpha or beta; 0 for Constant.
  double parameter() const noexcept { return parameter_; }
  /// Ambient dimension context (0 when unset).
  std::size_t dimension() const noexcept { return dimension_; }
  RadiusLaw with_dimension(std::size_t p) const;

  /// Multiplier applied to the raw draw so that E[xi^2] = 1.
  double scale_normalization() const;

  /// Polynomial tail index of xi^2: nu/2 for t, alpha for Pareto, +inf otherwise.
  double tail_index() const noexcept;
  bool polynomial_tail() const noexcept {
    return kind_ == RadiusKind::MultivariateT || kind_ == RadiusKind::ParetoTail;
  }

  /// Short label such as "t(4.3)" or "pareto(1.5)".
  std::string label() const;

  bool operator==(const RadiusLaw&) const = default;

private:
  RadiusLaw(RadiusKind kind, double parameter) : kind_(kind), parameter_(parameter) {}

  RadiusKind kind_ = RadiusKind::Constant;
  double parameter_ = 0.0;
  std::size_t dimension_ = 0;
};

/// Diagonal spiked covariance diag(spikes..., tail_values...).
class PopulationModel {
public:
  /// tail_values defaults to p - m ones when empty.
  PopulationModel(std::size_t p, std::vector<double> spikes,
                  std::vector<double> tail_values = {});

  std::size_t p() const noexcept { return p_; }
  std::size_t m() const noexcept { return spikes_.size(); }
  const std::vector<double>& spikes() const noexcept { return spikes_; }
  const std::vector<double>& tail_values() const noexcept { return tail_; }

  /// k-th diagonal entry, k in [0, p).
  double sigma(std::size_t k) const { return k < m() ? spikes_[k] : tail_[k - m()]; }

  /// sigma-bar = tr(Sigma_2) / p.
  double sigma_bar() const noexcept;
  double max_tail() const noexcept;

  /// Soft checks of the spike-ratio bounds 1 + c2 <= s_i/s_{i+1} <= c3;
  /// returns one message per violation.
  std::vector<std::string> ratio_warnings(double c2 = 0.05, double c3 = 100.0) const;

  bool operator==(const PopulationModel&) const = default;

private:
  std::size_t p_;
  std::vector<double> spikes_;
  std::vector<double> tail_;
};

struct SimulatedProvenance {
  std::vector<double> radius_sample;
  std::uint64_t seed = 0;
};

struct LoadedProvenance {
  std::string source;
};

/// p x n data matrix (variables x observations).
struct PanelMatrix {
  Eigen::MatrixXd values;
  std::variant<SimulatedProvenance, LoadedProvenance> provenance;

  std::size_t p() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t n() const noexcept { return static_cast<std::size_t>(values.cols()); }
};

/// Checks finiteness and the p >= 2, n >= 4 shape guard.
void validate_panel(const PanelMatrix& panel);

Eigen::VectorXd sample_unit_sphere(std::size_t p, Rng& rng);

std::vector<double> sample_radius_squared(const RadiusLaw& law, std::size_t n, Rng& rng);

/// Draw order: the radius substream (child_seed(seed, {kRadiusStream})) yields
/// xi_1^2..xi_n^2 in order; the direction substream (child_seed(seed,
/// {kDirectionStream})) yields p standard normals per column, column by column.
PanelMatrix generate_panel(const PopulationModel& model, const RadiusLaw& law,
                           std::size_t n, std::uint64_t seed);

/// E[xi^order] for order 2 (always 1) or 4; +inf when divergent.
double radius_moment(const RadiusLaw& law, int order, std::size_t p);

/// Limit of the fourth moment as the dimension grows (only differs for t).
double radius_moment4_limit(const RadiusLaw& law);

/// Typical maximal order T(n) of xi_t^2: n^{1/alpha} log n for polynomial
/// tails, (log n)^{1/beta} for exponential tails, 1 for the constant law.
double tail_order(std::size_t n, const RadiusLaw& law);

} // namespace efm
