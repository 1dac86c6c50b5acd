#include "efm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include <boost/random/chi_squared_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/weibull_distribution.hpp>

#include "efm/error.hpp"
#include "efm/log.hpp"

namespace efm {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

RadiusLaw RadiusLaw::multivariate_t(double nu) {
  if (!(nu > 2.0) || !std::isfinite(nu))
    throw ConstructionError(fmt::format("multivariate t radius needs nu > 2 (got {})", nu));
  return {RadiusKind::MultivariateT, nu};
}

RadiusLaw RadiusLaw::pareto_tail(double alpha) {
  if (!(alpha > 1.0) || !std::isfinite(alpha))
    throw ConstructionError(fmt::format("Pareto radius needs alpha > 1 (got {})", alpha));
  return {RadiusKind::ParetoTail, alpha};
}

RadiusLaw RadiusLaw::exponential_tail(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw ConstructionError(fmt::format("exponential-tail radius needs beta > 0 (got {})", beta));
  return {RadiusKind::ExponentialTail, beta};
}

RadiusLaw RadiusLaw::constant() { return {RadiusKind::Constant, 0.0}; }

RadiusLaw RadiusLaw::with_dimension(std::size_t p) const {
  RadiusLaw copy = *this;
  copy.dimension_ = p;
  return copy;
}

double RadiusLaw::scale_normalization() const {
  switch (kind_) {
  case RadiusKind::MultivariateT:
    if (dimension_ == 0)
      throw ConstructionError("multivariate t radius used without a dimension context");
    return (parameter_ - 2.0) / static_cast<double>(dimension_);
  case RadiusKind::ParetoTail:
    return (parameter_ - 1.0) / parameter_;
  case RadiusKind::ExponentialTail:
    return 1.0 / std::tgamma(1.0 + 1.0 / parameter_);
  case RadiusKind::Constant:
    return 1.0;
  }
  return 1.0;
}

double RadiusLaw::tail_index() const noexcept {
  switch (kind_) {
  case RadiusKind::MultivariateT: return parameter_ / 2.0;
  case RadiusKind::ParetoTail: return parameter_;
  default: return kInf;
  }
}

std::string RadiusLaw::label() const {
  switch (kind_) {
  case RadiusKind::MultivariateT: return fmt::format("t({})", parameter_);
  case RadiusKind::ParetoTail: return fmt::format("pareto({})", parameter_);
  case RadiusKind::ExponentialTail: return fmt::format("exponential({})", parameter_);
  case RadiusKind::Constant: return "constant";
  }
  return "?";
}

PopulationModel::PopulationModel(std::size_t p, std::vector<double> spikes,
                                 std::vector<double> tail_values)
    : p_(p), spikes_(std::move(spikes)), tail_(std::move(tail_values)) {
  if (p_ == 0) throw DimensionError("population model needs p >= 1");
  if (spikes_.size() > p_)
    throw ConstructionError(fmt::format("{} spikes exceed dimension {}", spikes_.size(), p_));
  if (tail_.empty()) tail_.assign(p_ - spikes_.size(), 1.0);
  if (tail_.size() != p_ - spikes_.size())
    throw ConstructionError(fmt::format("expected {} tail values, got {}",
                                        p_ - spikes_.size(), tail_.size()));
  for (std::size_t i = 0; i < spikes_.size(); ++i) {
    if (!(spikes_[i] > 0.0) || !std::isfinite(spikes_[i]))
      throw ConstructionError(fmt::format("spike {} must be positive and finite", i + 1));
    if (i > 0 && !(spikes_[i] < spikes_[i - 1]))
      throw ConstructionError("spikes must be strictly descending");
  }
  for (double v : tail_)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ConstructionError("tail values must be finite and nonnegative");
  if (!spikes_.empty() && !(spikes_.back() > max_tail()))
    throw ConstructionError("smallest spike must exceed every tail value");
}

double PopulationModel::sigma_bar() const noexcept {
  return std::accumulate(tail_.begin(), tail_.end(), 0.0) / static_cast<double>(p_);
}

double PopulationModel::max_tail() const noexcept {
  return tail_.empty() ? 0.0 : *std::max_element(tail_.begin(), tail_.end());
}

std::vector<std::string> PopulationModel::ratio_warnings(double c2, double c3) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 1 < spikes_.size(); ++i) {
    const double r = spikes_[i] / spikes_[i + 1];
    if (r < 1.0 + c2 || r > c3)
      out.push_back(fmt::format("spike ratio sigma_{}/sigma_{} = {:.4g} outside [{}, {}]",
                                i + 1, i + 2, r, 1.0 + c2, c3));
  }
  return out;
}

void validate_panel(const PanelMatrix& panel) {
  if (panel.p() < 2 || panel.n() < 4)
    throw DimensionError(fmt::format("panel must be at least 2 x 4 (got {} x {})",
                                     panel.p(), panel.n()));
  if (!panel.values.allFinite()) throw DataError("panel contains non-finite entries");
}

Eigen::VectorXd sample_unit_sphere(std::size_t p, Rng& rng) {
  if (p == 0) throw DimensionError("unit sphere needs dimension p >= 1");
  boost::random::normal_distribution<double> normal;
  Eigen::VectorXd v(static_cast<Eigen::Index>(p));
  double norm = 0.0;
  // A zero norm has probability zero but is cheap to exclude.
  while (!(norm > 0.0)) {
    for (auto& x : v) x = normal(rng);
    norm = v.norm();
  }
  return v / norm;
}

std::vector<double> sample_radius_squared(const RadiusLaw& law, std::size_t n, Rng& rng) {
  if (n == 0) throw DimensionError("radius sample needs n >= 1");
  const double scale = law.scale_normalization();
  std::vector<double> out(n);
  switch (law.kind()) {
  case RadiusKind::MultivariateT: {
    boost::random::chi_squared_distribution<double> norm_sq(static_cast<double>(law.dimension()));
    boost::random::chi_squared_distribution<double> mixing(law.parameter());
    for (auto& x : out) {
      const double num = norm_sq(rng);
      const double den = mixing(rng);
      x = scale * num / den;
    }
    break;
  }
  case RadiusKind::ParetoTail: {
    boost::random::uniform_01<double> unif;
    const double inv_alpha = 1.0 / law.parameter();
    for (auto& x : out) x = scale * std::pow(1.0 - unif(rng), -inv_alpha);
    break;
  }
  case RadiusKind::ExponentialTail: {
    boost::random::weibull_distribution<double> weibull(law.parameter(), 1.0);
    for (auto& x : out) x = scale * weibull(rng);
    break;
  }
  case RadiusKind::Constant:
    std::fill(out.begin(), out.end(), 1.0);
    break;
  }
  return out;
}

PanelMatrix generate_panel(const PopulationModel& model, const RadiusLaw& law,
                           std::size_t n, std::uint64_t seed) {
  if (n < 4) throw DimensionError(fmt::format("generate_panel needs n >= 4 (got {})", n));
  const std::size_t p = model.p();
  const RadiusLaw bound = law.with_dimension(p);

  if (model.m() > 0) {
    const double t_order = tail_order(n, bound);
    if (model.spikes().back() < 3.0 * t_order)
      warn_once("spike-below-tail-order",
                fmt::format("smallest spike {:.4g} is below 3 T(n) = {:.4g}; spikes may not "
                       "dominate the heavy-tail order at this n",
                       model.spikes().back(), 3.0 * t_order));
  }
  for (const auto& msg : model.ratio_warnings()) warn_once(msg, msg);

  Rng radius_rng(child_seed(seed, {kRadiusStream}));
  Rng direction_rng(child_seed(seed, {kDirectionStream}));

  auto radius = sample_radius_squared(bound, n, radius_rng);

  Eigen::VectorXd root_sigma(static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < p; ++k) root_sigma[static_cast<Eigen::Index>(k)] = std::sqrt(model.sigma(k));

  const double sqrt_p = std::sqrt(static_cast<double>(p));
  PanelMatrix panel;
  panel.values.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < n; ++t) {
    const Eigen::VectorXd u = sample_unit_sphere(p, direction_rng);
    const double xi = std::sqrt(radius[t]);
    panel.values.col(static_cast<Eigen::Index>(t)) = (xi * sqrt_p) * root_sigma.cwiseProduct(u);
  }
  panel.provenance = SimulatedProvenance{std::move(radius), seed};
  return panel;
}

double radius_moment(const RadiusLaw& law, int order, std::size_t p) {
  if (order == 2) return 1.0;
  if (order != 4) throw DomainError(fmt::format("radius_moment supports order 2 or 4 (got {})", order));
  const double a = law.parameter();
  switch (law.kind()) {
  case RadiusKind::MultivariateT: {
    if (a <= 4.0) return kInf;
    const double pd = static_cast<double>(p);
    if (p == 0) return (a - 2.0) / (a - 4.0);
    return pd * (pd + 2.0) * (a - 2.0) / (pd * pd * (a - 4.0));
  }
  case RadiusKind::ParetoTail:
    if (a <= 2.0) return kInf;
    return (a - 1.0) * (a - 1.0) / (a * (a - 2.0));
  case RadiusKind::ExponentialTail: {
    const double g1 = std::tgamma(1.0 + 1.0 / a);
    return std::tgamma(1.0 + 2.0 / a) / (g1 * g1);
  }
  case RadiusKind::Constant:
    return 1.0;
  }
  return kInf;
}

double radius_moment4_limit(const RadiusLaw& law) { return radius_moment(law, 4, 0); }

double tail_order(std::size_t n, const RadiusLaw& law) {
  const double nd = static_cast<double>(n);
  const double logn = std::log(nd);
  switch (law.kind()) {
  case RadiusKind::MultivariateT:
  case RadiusKind::ParetoTail:
    return std::pow(nd, 1.0 / law.tail_index()) * logn;
  case RadiusKind::ExponentialTail:
    return std::pow(logn, 1.0 / law.parameter());
  case RadiusKind::Constant:
    return 1.0;
  }
  return 1.0;
}

} // namespace efm
