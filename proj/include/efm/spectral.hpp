#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "efm/model.hpp"

namespace efm {

/// Descending eigenvalues of a sample covariance on the 1/n scale.
///
/// A complete spectrum holds min(p, n) values. Top-k solves produce a
/// truncated spectrum (`complete == false`) holding only the leading values.
struct Spectrum {
  std::vector<double> values;
  std::size_t p = 0;
  std::size_t n = 0;
  bool complete = true;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

/// Companion Gram matrix (1/n) Y'Y, n x n.
struct GramCache {
  Eigen::MatrixXd gram;
  std::size_t p = 0;
  std::size_t n = 0;
};

enum class EigenMode {
  Dense, ///< full symmetric tridiagonal QR solve
  TopK,  ///< Lanczos with full reorthogonalization for the leading k values
};

GramCache gram_matrix(const PanelMatrix& panel);
GramCache gram_matrix(const Eigen::MatrixXd& values);

Spectrum spectrum(const GramCache& cache);

/// Eigenvalues of D_w^{1/2} G D_w^{1/2}; equal to the nonzero eigenvalues of
/// (1/n) Y diag(w) Y'. `top_k` is honored only in TopK mode (0 = all).
Spectrum magnified_spectrum(const GramCache& cache, std::span<const double> weights,
                            EigenMode mode = EigenMode::Dense, std::size_t top_k = 0);

/// magnified_spectrum for several weight vectors. In TopK mode the Lanczos
/// recurrences advance in lockstep and share one Gram product per step, which
/// turns matrix-vector products into a matrix-matrix product.
std::vector<Spectrum> magnified_spectra(const GramCache& cache,
                                        const std::vector<std::vector<double>>& weights,
                                        EigenMode mode = EigenMode::TopK, std::size_t top_k = 0);

/// Marker returned for gap ratios whose denominator is numerically zero.
inline constexpr double kGapInfinity = std::numeric_limits<double>::infinity();

/// G_i = (l_i - l_{i+1}) / (l_{i+1} - l_{i+2}) for i = 1..o. Denominators
/// below 1e-12 * l_1 yield kGapInfinity.
std::vector<double> gap_ratios(const Spectrum& spec, std::size_t o);

/// Leading `k` eigenvalues (descending) of a symmetric matrix.
std::vector<double> symmetric_top_eigenvalues(const Eigen::MatrixXd& a, std::size_t k,
                                              EigenMode mode);

/// Converts raw ascending or unordered eigenvalues into a validated descending
/// list of length `keep`: values below -1e-10 * max abort, tiny negatives are
/// clamped to zero.
std::vector<double> finalize_eigenvalues(std::vector<double> raw, std::size_t keep);

} // namespace efm
