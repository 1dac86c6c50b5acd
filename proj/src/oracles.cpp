#include "efm/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>

#include "efm/error.hpp"
#include "efm/log.hpp"

namespace efm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double spike_correction(const PopulationModel& model, double sigma_i) {
  double acc = 0.0;
  for (double s : model.tail_values()) acc += s / (1.0 - s / sigma_i);
  return acc / static_cast<double>(model.p());
}

double trace_over_p(std::span<const double> xi, std::size_t p) {
  return std::accumulate(xi.begin(), xi.end(), 0.0) / static_cast<double>(p);
}

// Right-hand side of the second-order equation; NaN where a denominator is
// not positive.
double zeta_rhs(const PopulationModel& model, std::span<const double> xi, double theta, double zeta) {
  const double pd = static_cast<double>(model.p());
  double inner = 0.0;
  for (double s : model.tail_values()) {
    const double d = 1.0 - s * zeta / theta;
    if (!(d > 0.0)) return kNaN;
    inner += s / d;
  }
  double acc = 0.0;
  for (double x : xi) {
    const double d = 1.0 - x / (pd * theta) * inner;
    if (!(d > 0.0)) return kNaN;
    acc += x / d;
  }
  return acc / pd;
}

template <class T>
struct Maps {
  const ConsistentSystem& sys;
  T z;

  T m2_of(T m1) const {
    T acc{};
    for (double x : sys.xi_squared) acc += x / (-z * (1.0 + x * m1));
    return acc / static_cast<double>(sys.p);
  }
  T m1_of(T m2) const {
    T acc{};
    for (double s : sys.sigma_tail) acc += s / (-z * (1.0 + s * m2));
    return acc / static_cast<double>(sys.p);
  }
  T m_of(T m2) const {
    T acc{};
    for (double s : sys.sigma_tail) acc += 1.0 / (-z * (1.0 + s * m2));
    return acc / static_cast<double>(sys.p);
  }
};

bool admissible(const ConsistentSystem& sys, double m1, double m2) {
  for (double x : sys.xi_squared)
    if (!(1.0 + x * m1 > 0.0)) return false;
  for (double s : sys.sigma_tail)
    if (!(1.0 + s * m2 > 0.0)) return false;
  return true;
}

template <class T>
double rel_diff(T a, T b) {
  return std::abs(a - b) / std::max(std::abs(b), std::numeric_limits<double>::min());
}

void check_system(const ConsistentSystem& sys) {
  if (sys.p == 0 || sys.sigma_tail.size() > sys.p)
    throw DimensionError(fmt::format("consistent system: {} tail values for p = {}", sys.sigma_tail.size(), sys.p));
  if (sys.xi_squared.empty()) throw DimensionError("consistent system needs radius values");
  if (!(sys.q > 0.0)) throw DomainError(fmt::format("consistent system needs q > 0 (got {})", sys.q));
  for (double s : sys.sigma_tail)
    if (!(s > 0.0)) throw DomainError("consistent system needs positive tail values");
}

template <class T>
ConsistentSolution<T> iterate(const ConsistentSystem& sys, T z, T start) {
  const Maps<T> f{sys, z};
  constexpr std::size_t kMaxIter = 10000;
  T m1 = start;
  double omega = 1.0;
  double last_step = std::numeric_limits<double>::infinity();
  int rejections = 0;
  for (std::size_t it = 1; it <= kMaxIter; ++it) {
    const T m2 = f.m2_of(m1);
    const T target = f.m1_of(m2);
    const T next = (1.0 - omega) * m1 + omega * target;
    const T next_m2 = f.m2_of(next);
    bool ok = std::isfinite(std::abs(next));
    if constexpr (std::is_same_v<T, double>) ok = ok && admissible(sys, next, next_m2);
    if (!ok) {
      omega *= 0.5;
      if (++rejections > 60)
        throw DomainError(fmt::format("no admissible real solution at z = {:.6g}; z lies inside the support", std::real(z)));
      continue;
    }
    const double step = std::abs(next - m1);
    if (step > last_step && omega > 1e-3) omega *= 0.5;
    last_step = step;
    m1 = next;
    if (step <= 1e-12 * std::abs(m1)) {
      ConsistentSolution<T> sol;
      sol.m1 = m1;
      sol.m2 = f.m2_of(m1);
      sol.m = f.m_of(sol.m2);
      sol.iterations = it;
      sol.residual = consistent_residual(sys, z, sol.m1, sol.m2, sol.m);
      if (!(sol.residual < 1e-10))
        throw IterationDiverged(fmt::format("consistent system converged to residual {:.3g} at z = {}",
                                            sol.residual, std::abs(z)));
      return sol;
    }
  }
  throw IterationDiverged(fmt::format(
      "consistent system did not converge in {} iterations at |z| = {:.6g} (last step {:.3g}, m1 = {:.6g})",
      kMaxIter, std::abs(z), last_step, std::abs(m1)));
}

template <class T>
double residual_impl(const ConsistentSystem& sys, T z, T m1, T m2, T m) {
  const Maps<T> f{sys, z};
  return std::max({rel_diff(m1, f.m1_of(m2)), rel_diff(m2, f.m2_of(m1)), rel_diff(m, f.m_of(m2))});
}

} // namespace

double theta_residual(const PopulationModel& model, std::size_t i, double theta) {
  const double sigma = model.sigma(i - 1);
  const double a = spike_correction(model, sigma);
  const double rhs = 1.0 / (1.0 - a / theta);
  return std::abs(theta / sigma - rhs) / rhs;
}

double theta_fixed_point(const PopulationModel& model, std::size_t i) {
  if (i < 1 || i > model.m())
    throw BoundsError(fmt::format("theta: index {} outside 1..{}", i, model.m()));
  const double sigma = model.sigma(i - 1);
  if (!(sigma > model.max_tail()))
    throw DomainError(fmt::format("theta: spike {} = {} does not exceed the largest tail value {}; "
                                  "the fixed point is singular", i, sigma, model.max_tail()));
  const double theta = sigma + spike_correction(model, sigma);
  if (!(theta >= sigma && theta <= 2.0 * sigma))
    throw AssumptionViolation(fmt::format("theta_{} = {} outside [{}, {}]", i, theta, sigma, 2.0 * sigma));
  const double res = theta_residual(model, i, theta);
  if (!(res < 1e-12)) throw NumericError(fmt::format("theta_{} residual {:.3g} above 1e-12", i, res));
  return theta;
}

double zeta_residual(const PopulationModel& model, std::span<const double> xi, double theta, double zeta) {
  return std::abs(zeta - zeta_rhs(model, xi, theta, zeta)) / zeta;
}

double zeta_fixed_point(const PopulationModel& model, std::span<const double> xi, double theta) {
  if (xi.empty()) throw DimensionError("zeta needs radius values");
  for (double x : xi)
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("zeta needs positive finite radius values");
  if (!(theta > 0.0)) throw DomainError(fmt::format("zeta needs theta > 0 (got {})", theta));

  const double lo = trace_over_p(xi, model.p());
  const double hi = 2.0 * lo;
  auto h = [&](double z) { return zeta_rhs(model, xi, theta, z) - z; };
  const double h_lo = h(lo), h_hi = h(hi);
  if (h_lo == 0.0) return lo;
  if (!std::isfinite(h_lo) || !std::isfinite(h_hi) || h_lo * h_hi > 0.0)
    throw NoBracketedRoot(fmt::format(
        "zeta: no sign change on [{:.6g}, {:.6g}] (residuals {:.6g}, {:.6g})", lo, hi, h_lo, h_hi));

  // h is finite on the bracket when it is finite at the upper end, since the
  // denominators shrink monotonically in zeta.
  auto [a, b] = boost::math::tools::bisect(h, lo, hi, boost::math::tools::eps_tolerance<double>(52));
  double zeta = 0.5 * (a + b);
  double res = zeta_residual(model, xi, theta, zeta);
  for (int k = 0; k < 5 && res > 0.0; ++k) {
    const double next = 0.5 * zeta + 0.5 * zeta_rhs(model, xi, theta, zeta);
    const double next_res = zeta_residual(model, xi, theta, next);
    if (!(next_res < res)) break;
    zeta = next;
    res = next_res;
  }
  if (!(res < 1e-10)) throw NumericError(fmt::format("zeta residual {:.3g} above 1e-10", res));
  return zeta;
}

OraclePoint oracle_point(const PopulationModel& model, std::span<const double> xi, std::size_t i) {
  OraclePoint pt;
  pt.theta = theta_fixed_point(model, i);
  pt.theta_residual = theta_residual(model, i, pt.theta);
  pt.zeta = zeta_fixed_point(model, xi, pt.theta);
  pt.zeta_residual = zeta_residual(model, xi, pt.theta, pt.zeta);
  return pt;
}

double magnifier_constant(double a, double b) {
  if (!(a > 0.0) || !(a <= b))
    throw DomainError(fmt::format("magnifier needs 0 < a <= b (got [{}, {}])", a, b));
  if (std::abs(0.5 * (a + b) - 1.0) > 1e-12)
    throw DomainError(fmt::format("magnifier mean (a + b)/2 = {} is not 1", 0.5 * (a + b)));
  return (a * a + a * b + b * b) / 3.0 - 1.0;
}

double clt_variance(const RadiusLaw& law, std::optional<std::pair<double, double>> magnifier) {
  const double m4 = radius_moment(law, 4, law.dimension());
  if (!std::isfinite(m4))
    throw DivergentMoment(fmt::format("{} has an infinite fourth moment; use the 3T(n)/n bound instead",
                                      law.label()));
  double w2 = 1.0;
  if (magnifier) w2 = magnifier_constant(magnifier->first, magnifier->second) + 1.0;
  return 3.0 * m4 * w2 - 1.0;
}

double serious_tail_variance_bound(std::size_t n, const RadiusLaw& law) {
  return 3.0 * tail_order(n, law) / static_cast<double>(n);
}

double spurious_location(const PopulationModel& model, std::span<const double> xi, std::size_t k) {
  if (k < 1 || k > xi.size())
    throw BoundsError(fmt::format("spurious_location: k = {} outside 1..{}", k, xi.size()));
  std::vector<double> sorted(xi.begin(), xi.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(),
                   std::greater<>());
  const double scale = static_cast<double>(model.p()) / static_cast<double>(xi.size());
  return model.sigma_bar() * sorted[k - 1] * scale;
}

double default_q(std::size_t n, const RadiusLaw& law, double eps) {
  if (!law.polynomial_tail()) return 1.0;
  return std::pow(static_cast<double>(n), 1.0 / law.tail_index() - eps);
}

double consistent_residual(const ConsistentSystem& sys, double z, double m1, double m2, double m) {
  return residual_impl<double>(sys, z, m1, m2, m);
}

double consistent_residual(const ConsistentSystem& sys, std::complex<double> z, std::complex<double> m1,
                           std::complex<double> m2, std::complex<double> m) {
  return residual_impl<std::complex<double>>(sys, z, m1, m2, m);
}

ConsistentSolution<double> solve_consistent_system(const ConsistentSystem& sys, double z,
                                                   std::optional<double> m1_start) {
  check_system(sys);
  if (!(z > 0.0) || !std::isfinite(z))
    throw DomainError(fmt::format("real mode needs z > 0 right of the support (got {})", z));
  const double sbar = std::accumulate(sys.sigma_tail.begin(), sys.sigma_tail.end(), 0.0) /
                      static_cast<double>(sys.p);
  return iterate<double>(sys, z, m1_start.value_or(-sbar / z));
}

ConsistentSolution<std::complex<double>> solve_consistent_system(const ConsistentSystem& sys,
                                                                 std::complex<double> z) {
  check_system(sys);
  if (!(z.imag() > 0.0)) throw DomainError(fmt::format("complex mode needs Im z > 0 (got {})", z.imag()));
  const double sbar = std::accumulate(sys.sigma_tail.begin(), sys.sigma_tail.end(), 0.0) /
                      static_cast<double>(sys.p);
  auto sol = iterate<std::complex<double>>(sys, z, -sbar / z);
  if (!(sol.m.imag() > 0.0))
    throw IterationDiverged(fmt::format("complex iteration left the upper half plane (Im m = {:.3g})",
                                        sol.m.imag()));
  return sol;
}

OutlierPrediction predict_outlier(const ConsistentSystem& sys, double eps) {
  check_system(sys);
  const std::size_t n = sys.xi_squared.size();
  if (n < 2) throw DimensionError("outlier prediction needs at least two radius values");
  std::vector<double> top(sys.xi_squared);
  std::partial_sort(top.begin(), top.begin() + 2, top.end(), std::greater<>());
  const double x1 = top[0], x2 = top[1];
  if (!(x1 > x2 * (1.0 + 1e-12)))
    warn(fmt::format("largest radius {:.6g} is not separated from the second {:.6g}", x1, x2));

  // On the root, m1 = -1/c exactly. The first equation then fixes m2 = -(c/mu) B,
  // and the second becomes a scalar equation in mu alone:
  //   F(mu) = p^{-1} sum_k s_k / (mu/c - s_k B) - 1 = 0,
  // strictly decreasing for mu > c B max(s). Its largest root is the outlier.
  const double pd = static_cast<double>(sys.p);
  const double c = x1 + sys.q;
  double big_b = 0.0;
  for (double x : sys.xi_squared) big_b += x / (c - x);
  big_b /= pd;
  const double smax = *std::max_element(sys.sigma_tail.begin(), sys.sigma_tail.end());
  auto f = [&](double mu) {
    double acc = 0.0;
    for (double s : sys.sigma_tail) acc += s / (mu / c - s * big_b);
    return acc / pd - 1.0;
  };
  double lo = c * smax * big_b;
  lo += 1e-12 * std::max(lo, c);
  double hi = std::max(2.0 * lo, c);
  for (int k = 0; f(hi) > 0.0; ++k) {
    if (k > 200) throw NoOutlierPredicted("outlier equation has no root right of its pole");
    hi *= 2.0;
  }
  if (!(f(lo) > 0.0))
    throw NoOutlierPredicted(fmt::format("outlier equation keeps its sign on ({:.6g}, {:.6g}]", lo, hi));
  for (int it = 0; it < 400 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  const double mu = 0.5 * (lo + hi);

  // Check the triple against the full system.
  Maps<double> maps{sys, mu};
  const double m1 = -1.0 / c;
  const double m2 = maps.m2_of(m1);
  const double m = maps.m_of(m2);
  const double res = consistent_residual(sys, mu, m1, m2, m);
  if (!(res < 1e-9)) throw NoOutlierPredicted(fmt::format("outlier root residual {:.3g} above 1e-9", res));
  if (!admissible(sys, m1, m2))
    throw NoOutlierPredicted(fmt::format("outlier root {:.6g} is not admissible", mu));

  OutlierPrediction out;
  out.mu = mu;
  out.residual = res;
  out.ratio = mu / c;
  out.sample_value = mu * pd / static_cast<double>(n);
  out.window = std::pow(static_cast<double>(n), -0.5 + 2.0 * eps) * sys.q;
  return out;
}

} // namespace efm
