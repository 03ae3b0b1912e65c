#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstddef>
#include <vector>

#include "proxex/errors.hpp"

namespace proxex {

// Dense symmetric solvers for the small normal-equation systems produced by
// the attribution fits. Matrices are row-major n*n.

// LDL^T solve for symmetric positive (semi-)definite A. Returns false when a
// pivot falls below tolerance, i.e. the system is numerically rank deficient.
inline bool ldlt_solve(std::vector<double> a, std::vector<double> b, std::size_t n,
                       std::vector<double>& x) {
  if (n == 0) {
    x.clear();
    return true;
  }
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a[i * n + i]));
  const double tol = 1e-12 * std::max(max_diag, 1e-300);

  std::vector<double> d(n, 0.0);
  // a's strict lower triangle is overwritten with L.
  for (std::size_t j = 0; j < n; ++j) {
    double dj = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) dj -= a[j * n + k] * a[j * n + k] * d[k];
    if (!(std::abs(dj) > tol)) return false;
    d[j] = dj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double lij = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) lij -= a[i * n + k] * a[j * n + k] * d[k];
      a[i * n + j] = lij / dj;
    }
  }
  // Forward, diagonal, backward substitution.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < i; ++k) b[i] -= a[i * n + k] * b[k];
  for (std::size_t i = 0; i < n; ++i) b[i] /= d[i];
  for (std::size_t ii = n; ii-- > 0;)
    for (std::size_t k = ii + 1; k < n; ++k) b[ii] -= a[k * n + ii] * b[k];
  x = std::move(b);
  return true;
}

// Cyclic Jacobi eigendecomposition for symmetric A. Eigenvectors are the
// columns of `vecs` (row-major).
inline void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& vals,
                         std::vector<double>& vecs) {
  vecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;
  if (n == 0) {
    vals.clear();
    return;
  }
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-28) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs[k * n + p], vkq = vecs[k * n + q];
          vecs[k * n + p] = c * vkp - s * vkq;
          vecs[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  vals.resize(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = a[i * n + i];
}

// Minimum-norm least-squares solution of A x = b through the eigen
// pseudo-inverse; the fallback path when LDL^T rejects the system.
inline std::vector<double> pinv_solve(const std::vector<double>& a, const std::vector<double>& b,
                                      std::size_t n, double rcond = 1e-12) {
  std::vector<double> vals, vecs;
  jacobi_eigen(a, n, vals, vecs);
  double max_abs = 0.0;
  for (double v : vals) max_abs = std::max(max_abs, std::abs(v));
  const double cutoff = rcond * std::max(max_abs, 1e-300);
  std::vector<double> x(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (std::abs(vals[j]) <= cutoff) continue;
    double proj = 0.0;
    for (std::size_t i = 0; i < n; ++i) proj += vecs[i * n + j] * b[i];
    proj /= vals[j];
    for (std::size_t i = 0; i < n; ++i) x[i] += vecs[i * n + j] * proj;
  }
  return x;
}

}  // namespace proxex
