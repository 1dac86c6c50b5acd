#include "efm/spectral.hpp"

#include <algorithm>
#include <cmath>

#include <boost/random/normal_distribution.hpp>
#include <fmt/format.h>

#include "efm/error.hpp"
#include "efm/log.hpp"
#include "efm/rng.hpp"

namespace efm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Residual bound relative to the largest Ritz value. Eigenvalue errors are at
// most this residual, far below the relative spread any caller resolves.
constexpr double kLanczosTolerance = 1e-10;

std::vector<double> dense_eigenvalues(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(a, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw NumericError(fmt::format("symmetric eigensolver failed on {}x{} matrix (max |a_ij| = {:.6g})",
                                   a.rows(), a.cols(), a.cwiseAbs().maxCoeff()));
  const VectorXd& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

// One Lanczos recurrence with full (twice-applied) reorthogonalization. The
// caller supplies A q_j for the current vector and feeds it to advance();
// this lets several recurrences share one matrix product per step.
class LanczosRun {
public:
  LanczosRun(Index n, std::size_t k, Index max_steps)
      : n_(n), k_(static_cast<Index>(k)), cap_(std::min(n, max_steps)), q_(n, cap_ + 1),
        rng_(0x6c616e637a6f73ULL) {
    alpha_.reserve(static_cast<std::size_t>(cap_));
    beta_.reserve(static_cast<std::size_t>(cap_));
    q_.col(0) = random_unit(0);
  }

  auto current() const { return q_.col(j_); }
  bool finished() const { return finished_; }
  /// Leading k Ritz values, or empty when the step cap was reached first.
  const std::vector<double>& result() const { return result_; }

  void advance(VectorXd& w) {
    const double a = q_.col(j_).dot(w);
    alpha_.push_back(a);
    w -= a * q_.col(j_);
    if (j_ > 0) w -= beta_.back() * q_.col(j_ - 1);
    // Full reorthogonalization; the second pass only when the first removed
    // most of what was left.
    const double before = w.norm();
    w.noalias() -= q_.leftCols(j_ + 1) * (q_.leftCols(j_ + 1).transpose() * w);
    double b = w.norm();
    if (b <= 0.7071 * before) {
      w.noalias() -= q_.leftCols(j_ + 1) * (q_.leftCols(j_ + 1).transpose() * w);
      b = w.norm();
    }
    scale_ = std::max({scale_, std::abs(a), b});

    const Index m = j_ + 1;
    const bool exhausted = (m == n_);
    if (exhausted || (m >= k_ + 2 && (m % 8 == 0 || m == cap_))) {
      if (converged(m, b, exhausted)) return;
    }
    if (m == cap_) {
      finished_ = true;
      return;
    }
    if (b <= 1e-13 * scale_) {
      // Invariant subspace: continue with a fresh direction, decoupled block.
      q_.col(m) = random_unit(m);
      b = 0.0;
    } else {
      q_.col(m) = w / b;
    }
    beta_.push_back(b);
    ++j_;
  }

private:
  VectorXd random_unit(Index cols_used) {
    VectorXd v(n_);
    for (Index s = 0; s < n_; ++s) v[s] = normal_(rng_);
    for (int pass = 0; pass < 2 && cols_used > 0; ++pass)
      v.noalias() -= q_.leftCols(cols_used) * (q_.leftCols(cols_used).transpose() * v);
    return v / v.norm();
  }

  // Top Ritz values by bisection; the last eigenvector components come from
  // two steps of inverse iteration. The k-th value usually converges last, so
  // it is tested first.
  bool converged(Index m, double b, bool exhausted) {
    const VectorXd diag = Eigen::Map<const VectorXd>(alpha_.data(), m);
    const VectorXd sub = Eigen::Map<const VectorXd>(beta_.data(), m - 1);
    const Index want = std::min(k_, m);
    const double first = tridiagonal_eigenvalue(diag, sub, m - 1);
    const double top = std::max(std::abs(first), std::abs(tridiagonal_eigenvalue(diag, sub, 0)));
    const double tol = kLanczosTolerance * std::abs(first);
    const auto residual = [&](double theta) {
      VectorXd x = VectorXd::Ones(m);
      const double shift = theta + 1e-13 * std::max(top, 1.0);
      for (int it = 0; it < 2; ++it) {
        tridiagonal_solve(diag, sub, shift, x);
        const double norm = x.norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("Lanczos inverse iteration failed");
        x /= norm;
      }
      return std::abs(b * x[m - 1]);
    };
    if (!exhausted && m < k_) return false;

    std::vector<double> theta(static_cast<std::size_t>(want));
    theta.front() = first;
    theta.back() = tridiagonal_eigenvalue(diag, sub, m - want);
    if (!exhausted && residual(theta.back()) > tol) return false;
    for (Index r = 1; r + 1 < want; ++r)
      theta[static_cast<std::size_t>(r)] = tridiagonal_eigenvalue(diag, sub, m - 1 - r);
    for (Index r = 0; !exhausted && r + 1 < want; ++r)
      if (residual(theta[static_cast<std::size_t>(r)]) > tol) return false;
    result_ = std::move(theta);
    finished_ = true;
    return true;
  }

  // Number of eigenvalues of T below x (Sturm sequence).
  static Index count_below(const VectorXd& diag, const VectorXd& sub, double x) {
    Index count = 0;
    double d = 1.0;
    for (Index i = 0; i < diag.size(); ++i) {
      const double off = i > 0 ? sub[i - 1] * sub[i - 1] : 0.0;
      d = diag[i] - x - (i > 0 ? off / d : 0.0);
      if (d == 0.0) d = -1e-300;
      if (d < 0.0) ++count;
    }
    return count;
  }

  // The idx-th smallest eigenvalue of T (0-based) by bisection.
  static double tridiagonal_eigenvalue(const VectorXd& diag, const VectorXd& sub, Index idx) {
    const Index m = diag.size();
    double lo = diag[0], hi = diag[0];
    for (Index i = 0; i < m; ++i) {
      const double r = (i > 0 ? std::abs(sub[i - 1]) : 0.0) + (i + 1 < m ? std::abs(sub[i]) : 0.0);
      lo = std::min(lo, diag[i] - r);
      hi = std::max(hi, diag[i] + r);
    }
    const double span = std::max(std::abs(lo), std::abs(hi));
    for (int it = 0; it < 200 && hi - lo > 4e-16 * span; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (count_below(diag, sub, mid) > idx) hi = mid;
      else lo = mid;
    }
    return 0.5 * (lo + hi);
  }

  // Solves (T - shift I) x = rhs in place; LU with partial pivoting as in LAPACK gttrf.
  static void tridiagonal_solve(const VectorXd& diag, const VectorXd& sub, double shift, VectorXd& x) {
    const Index m = diag.size();
    VectorXd d = diag.array() - shift;
    VectorXd dl = sub, du = sub, du2 = VectorXd::Zero(std::max<Index>(m - 2, 0));
    std::vector<char> swapped(static_cast<std::size_t>(std::max<Index>(m - 1, 0)), 0);
    const double tiny = 1e-300;
    for (Index i = 0; i + 1 < m; ++i) {
      if (std::abs(d[i]) >= std::abs(dl[i])) {
        if (d[i] == 0.0) d[i] = tiny;
        const double f = dl[i] / d[i];
        dl[i] = f;
        d[i + 1] -= f * du[i];
      } else {
        const double f = d[i] / dl[i];
        d[i] = dl[i];
        dl[i] = f;
        const double t = du[i];
        du[i] = d[i + 1];
        d[i + 1] = t - f * d[i + 1];
        if (i + 2 < m) {
          du2[i] = du[i + 1];
          du[i + 1] = -f * du[i + 1];
        }
        swapped[static_cast<std::size_t>(i)] = 1;
      }
    }
    if (d[m - 1] == 0.0) d[m - 1] = tiny;
    for (Index i = 0; i + 1 < m; ++i) {
      if (swapped[static_cast<std::size_t>(i)]) std::swap(x[i], x[i + 1]);
      x[i + 1] -= dl[i] * x[i];
    }
    x[m - 1] /= d[m - 1];
    if (m > 1) x[m - 2] = (x[m - 2] - du[m - 2] * x[m - 1]) / d[m - 2];
    for (Index i = m - 3; i >= 0; --i) x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
  }

  Index n_, k_, cap_;
  MatrixXd q_;
  Rng rng_;
  boost::random::normal_distribution<double> normal_;
  std::vector<double> alpha_, beta_;
  double scale_ = 0.0;
  Index j_ = 0;
  bool finished_ = false;
  std::vector<double> result_;
};

bool use_lanczos(Index n, std::size_t k) { return k > 0 && n > 48 && static_cast<Index>(k) * 4 < n; }

Index lanczos_cap(Index n, std::size_t k) { return std::max<Index>(n / 2, static_cast<Index>(3 * k + 20)); }

std::vector<double> top_eigenvalues_impl(const MatrixXd& a, std::size_t k, EigenMode mode) {
  const Index n = a.rows();
  if (mode == EigenMode::TopK && use_lanczos(n, k)) {
    LanczosRun run(n, k, lanczos_cap(n, k));
    VectorXd w(n);
    while (!run.finished()) {
      w.noalias() = a * run.current();
      run.advance(w);
    }
    if (!run.result().empty()) return run.result();
  }
  auto raw = dense_eigenvalues(a);
  std::sort(raw.begin(), raw.end(), std::greater<>());
  if (k > 0 && k < raw.size()) raw.resize(k);
  return raw;
}

VectorXd root_weights(std::span<const double> weights, Index n) {
  if (static_cast<Index>(weights.size()) != n)
    throw DimensionError(fmt::format("magnified_spectrum: {} weights for n = {}", weights.size(), n));
  VectorXd root(n);
  for (Index t = 0; t < n; ++t) {
    const double w = weights[static_cast<std::size_t>(t)];
    if (!(w > 0.0) || !std::isfinite(w))
      throw DomainError(fmt::format("magnifier weight {} at position {} is not positive", w, t));
    root[t] = std::sqrt(w);
  }
  return root;
}

} // namespace

std::vector<double> finalize_eigenvalues(std::vector<double> raw, std::size_t keep) {
  std::sort(raw.begin(), raw.end(), std::greater<>());
  if (raw.empty()) return raw;
  double max_abs = 0.0;
  for (double v : raw) max_abs = std::max(max_abs, std::abs(v));
  const double floor = -1e-10 * max_abs;
  if (raw.back() < floor)
    throw NumericError(fmt::format(
        "negative eigenvalue {:.6g} below tolerance {:.3g} (largest {:.6g}, count {})",
        raw.back(), floor, raw.front(), raw.size()));
  if (keep < raw.size()) raw.resize(keep);
  for (double& v : raw) {
    if (v < 0.0) {
      if (v < -1e-10) warn_once("clamped-negative-eigenvalue",
                                fmt::format("clamped negative eigenvalue {:.3g} to zero", v));
      v = 0.0;
    }
  }
  return raw;
}

GramCache gram_matrix(const Eigen::MatrixXd& values) {
  if (!values.allFinite()) throw DataError("gram_matrix: panel contains non-finite entries");
  const Index n = values.cols();
  GramCache cache;
  cache.p = static_cast<std::size_t>(values.rows());
  cache.n = static_cast<std::size_t>(n);
  MatrixXd lower = MatrixXd::Zero(n, n);
  lower.selfadjointView<Eigen::Lower>().rankUpdate(values.transpose(), 1.0 / static_cast<double>(n));
  // Mirror the computed triangle so the matrix is exactly symmetric.
  cache.gram = lower.selfadjointView<Eigen::Lower>();
  return cache;
}

GramCache gram_matrix(const PanelMatrix& panel) { return gram_matrix(panel.values); }

Spectrum spectrum(const GramCache& cache) {
  Spectrum s;
  s.p = cache.p;
  s.n = cache.n;
  s.values = finalize_eigenvalues(dense_eigenvalues(cache.gram), std::min(cache.p, cache.n));
  return s;
}

Spectrum magnified_spectrum(const GramCache& cache, std::span<const double> weights,
                            EigenMode mode, std::size_t top_k) {
  const Index n = cache.gram.rows();
  const VectorXd root = root_weights(weights, n);
  const std::size_t full = std::min(cache.p, cache.n);

  Spectrum s;
  s.p = cache.p;
  s.n = cache.n;
  MatrixXd scaled = root.asDiagonal() * cache.gram * root.asDiagonal();
  if (mode == EigenMode::TopK && top_k > 0 && top_k < full) {
    s.values = finalize_eigenvalues(top_eigenvalues_impl(scaled, top_k, mode), top_k);
    s.complete = false;
    return s;
  }
  s.values = finalize_eigenvalues(dense_eigenvalues(scaled), full);
  return s;
}

std::vector<Spectrum> magnified_spectra(const GramCache& cache,
                                        const std::vector<std::vector<double>>& weights,
                                        EigenMode mode, std::size_t top_k) {
  const Index n = cache.gram.rows();
  const std::size_t full = std::min(cache.p, cache.n);
  if (!(mode == EigenMode::TopK && top_k > 0 && top_k < full && use_lanczos(n, top_k))) {
    std::vector<Spectrum> out;
    for (const auto& w : weights) out.push_back(magnified_spectrum(cache, w, mode, top_k));
    return out;
  }

  const Index batch = static_cast<Index>(weights.size());
  MatrixXd roots(n, batch);
  for (Index c = 0; c < batch; ++c) roots.col(c) = root_weights(weights[static_cast<std::size_t>(c)], n);

  std::vector<LanczosRun> runs;
  runs.reserve(weights.size());
  for (Index c = 0; c < batch; ++c) runs.emplace_back(n, top_k, lanczos_cap(n, top_k));

  // Each step: X = roots .* [q_c], Y = G X, w_c = roots_c .* Y_c.
  std::vector<Index> active(static_cast<std::size_t>(batch));
  for (Index c = 0; c < batch; ++c) active[static_cast<std::size_t>(c)] = c;
  MatrixXd x, y;
  VectorXd w(n);
  while (!active.empty()) {
    const Index width = static_cast<Index>(active.size());
    x.resize(n, width);
    for (Index a = 0; a < width; ++a) {
      const Index c = active[static_cast<std::size_t>(a)];
      x.col(a) = roots.col(c).cwiseProduct(runs[static_cast<std::size_t>(c)].current());
    }
    y.noalias() = cache.gram * x;
    std::vector<Index> still;
    for (Index a = 0; a < width; ++a) {
      const Index c = active[static_cast<std::size_t>(a)];
      auto& run = runs[static_cast<std::size_t>(c)];
      w = roots.col(c).cwiseProduct(y.col(a));
      run.advance(w);
      if (!run.finished()) still.push_back(c);
    }
    active.swap(still);
  }

  std::vector<Spectrum> out(weights.size());
  for (std::size_t c = 0; c < weights.size(); ++c) {
    out[c].p = cache.p;
    out[c].n = cache.n;
    if (runs[c].result().empty()) {
      out[c] = magnified_spectrum(cache, weights[c], EigenMode::Dense, top_k);
      out[c].values.resize(top_k);
    } else {
      out[c].values = finalize_eigenvalues(runs[c].result(), top_k);
    }
    out[c].complete = false;
  }
  return out;
}

std::vector<double> symmetric_top_eigenvalues(const Eigen::MatrixXd& a, std::size_t k,
                                              EigenMode mode) {
  if (a.rows() != a.cols()) throw DimensionError("symmetric_top_eigenvalues needs a square matrix");
  return top_eigenvalues_impl(a, k, mode);
}

std::vector<double> gap_ratios(const Spectrum& spec, std::size_t o) {
  if (spec.size() < o + 2)
    throw BoundsError(fmt::format("gap_ratios: o = {} needs {} eigenvalues, spectrum has {}",
                                  o, o + 2, spec.size()));
  const double eps = 1e-12 * spec[0];
  std::vector<double> g(o);
  for (std::size_t i = 0; i < o; ++i) {
    const double num = spec[i] - spec[i + 1];
    const double den = spec[i + 1] - spec[i + 2];
    g[i] = (den < eps || den <= 0.0) ? kGapInfinity : num / den;
  }
  return g;
}

} // namespace efm
