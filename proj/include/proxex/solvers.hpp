#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "proxex/errors.hpp"
#include "proxex/linalg.hpp"
#include "proxex/mask.hpp"

namespace proxex {

enum class AttributionMethod { lime, kernel_shap };

inline std::string_view to_string(AttributionMethod m) {
  return m == AttributionMethod::lime ? "lime" : "kernel-shap";
}

inline AttributionMethod attribution_method_from_string(std::string_view s) {
  if (s == "lime") return AttributionMethod::lime;
  if (s == "kernel-shap" || s == "kernel_shap" || s == "shap") return AttributionMethod::kernel_shap;
  raise(Errc::config, "unknown attribution method '" + std::string(s) + "'");
}

// Per-feature importance vector plus intercept: the local surrogate
// g(z) = intercept + sum_i values[i] * z_i.
struct Attribution {
  std::vector<double> values;
  double intercept = 0.0;
  AttributionMethod method = AttributionMethod::lime;
  std::string proxy_model_id;
  std::string target_model_id;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  bool condition_warning = false;  // set when the normal equations needed the pseudo-inverse
};

// One (coalition, response, weight) observation for the fits.
struct RegressionSample {
  Mask mask;
  double response = 0.0;
  double weight = 1.0;
};

inline double predict_surrogate(const Attribution& attr, const Mask& mask) {
  if (mask.size() != attr.values.size())
    raise(Errc::mask_shape, "mask length does not match attribution length");
  double out = attr.intercept;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.test(i)) out += attr.values[i];
  return out;
}

namespace detail {

inline void validate_samples(const std::vector<RegressionSample>& samples, std::size_t n) {
  for (const auto& s : samples) {
    if (s.mask.size() != n) raise(Errc::mask_shape, "inconsistent mask lengths in sample set");
    if (!std::isfinite(s.response)) raise(Errc::invalid_argument, "sample response must be finite");
    if (!(s.weight >= 0.0)) raise(Errc::invalid_argument, "sample weight must be >= 0");
  }
}

}  // namespace detail

// Weighted ridge regression min sum_i w_i (y_i - a.z_i - a0)^2 + lambda |a|^2.
// Weights are normalized to unit mass, so scaling or duplicating the sample
// set leaves the fit unchanged for every lambda. The intercept is not
// penalized.
inline Attribution fit_lime(const std::vector<RegressionSample>& samples, double ridge_lambda) {
  if (samples.empty()) raise(Errc::insufficient_samples, "no regression samples");
  if (!(ridge_lambda >= 0.0)) raise(Errc::invalid_argument, "ridge lambda must be >= 0");
  const std::size_t n = samples[0].mask.size();
  detail::validate_samples(samples, n);

  double total_weight = 0.0;
  for (const auto& s : samples) total_weight += s.weight;
  if (!(total_weight > 0.0))
    raise(Errc::insufficient_samples, "total sample weight must be positive");
  if (ridge_lambda == 0.0 && samples.size() < n + 1)
    raise(Errc::singular_system, "fewer samples than coefficients with lambda = 0");

  const std::size_t dim = n + 1;  // coefficients then intercept
  std::vector<double> gram(dim * dim, 0.0);
  std::vector<double> rhs(dim, 0.0);
  std::vector<double> phi(dim, 0.0);
  for (const auto& s : samples) {
    const double w = s.weight / total_weight;
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) phi[i] = s.mask.test(i) ? 1.0 : 0.0;
    phi[n] = 1.0;
    for (std::size_t i = 0; i < dim; ++i) {
      if (phi[i] == 0.0) continue;
      const double wp = w * phi[i];
      for (std::size_t j = 0; j <= i; ++j) gram[i * dim + j] += wp * phi[j];
      rhs[i] += wp * s.response;
    }
  }
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i + 1; j < dim; ++j) gram[i * dim + j] = gram[j * dim + i];
  for (std::size_t i = 0; i < n; ++i) gram[i * dim + i] += ridge_lambda;

  Attribution attr;
  attr.method = AttributionMethod::lime;
  attr.n_samples = samples.size();
  std::vector<double> sol;
  if (!ldlt_solve(gram, rhs, dim, sol)) {
    if (ridge_lambda == 0.0)
      raise(Errc::singular_system, "rank-deficient design with lambda = 0");
    sol = pinv_solve(gram, rhs, dim);
    attr.condition_warning = true;
  }
  attr.values.assign(sol.begin(), sol.begin() + static_cast<std::ptrdiff_t>(n));
  attr.intercept = sol[n];
  return attr;
}

// Shapley-kernel weighted least squares with the intercept pinned to
// f(empty) and the efficiency constraint sum values = f(full) - f(empty)
// enforced by eliminating the last coefficient. With exhaustive proper
// coalitions and Shapley-kernel weights the result equals the exact Shapley
// values.
inline Attribution fit_kernel_shap(const std::vector<RegressionSample>& samples, std::size_t n,
                                   double f_full, double f_empty) {
  if (n < 1) raise(Errc::invalid_argument, "need at least one feature");
  const double delta = f_full - f_empty;

  Attribution attr;
  attr.method = AttributionMethod::kernel_shap;
  attr.intercept = f_empty;
  attr.n_samples = samples.size();

  if (n == 1) {
    attr.values = {delta};
    return attr;
  }
  if (samples.empty()) raise(Errc::insufficient_samples, "no proper-coalition samples");
  detail::validate_samples(samples, n);
  for (const auto& s : samples)
    if (!s.mask.is_proper())
      raise(Errc::invalid_argument, "full/empty coalitions enter via constraints, not samples");

  double total_weight = 0.0;
  for (const auto& s : samples) total_weight += s.weight;
  if (!(total_weight > 0.0))
    raise(Errc::insufficient_samples, "total sample weight must be positive");

  const std::size_t m = n - 1;
  std::vector<double> gram(m * m, 0.0);
  std::vector<double> rhs(m, 0.0);
  std::vector<double> d(m, 0.0);
  for (const auto& s : samples) {
    const double w = s.weight / total_weight;
    if (w == 0.0) continue;
    const double zn = s.mask.test(n - 1) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < m; ++i) d[i] = (s.mask.test(i) ? 1.0 : 0.0) - zn;
    const double r = s.response - f_empty - zn * delta;
    for (std::size_t i = 0; i < m; ++i) {
      if (d[i] == 0.0) continue;
      const double wd = w * d[i];
      for (std::size_t j = 0; j <= i; ++j) gram[i * m + j] += wd * d[j];
      rhs[i] += wd * r;
    }
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) gram[i * m + j] = gram[j * m + i];

  std::vector<double> sol;
  if (!ldlt_solve(gram, rhs, m, sol)) {
    sol = pinv_solve(gram, rhs, m);
    attr.condition_warning = true;
  }
  attr.values.assign(sol.begin(), sol.end());
  double partial = 0.0;
  for (double v : attr.values) partial += v;
  attr.values.push_back(delta - partial);
  return attr;
}

// Exact Shapley values by full enumeration; the verification oracle for
// fit_kernel_shap. 2^n coalition evaluations, so n is capped at 12.
inline std::vector<double> brute_force_shapley(const std::function<double(const Mask&)>& value_fn,
                                               std::size_t n) {
  if (n < 1) raise(Errc::invalid_argument, "need at least one feature");
  if (n > 12) raise(Errc::size_limit, "brute force limited to 12 features");

  const std::uint64_t total = std::uint64_t{1} << n;
  std::vector<double> value(total);
  for (std::uint64_t w = 0; w < total; ++w) value[w] = value_fn(Mask::from_uint(w, n));

  // weight(s) = s! (n-s-1)! / n! for |S| = s, exact in double for n <= 12.
  std::vector<double> factorial(n + 1, 1.0);
  for (std::size_t i = 1; i <= n; ++i) factorial[i] = factorial[i - 1] * static_cast<double>(i);
  std::vector<double> weight(n, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    weight[s] = factorial[s] * factorial[n - s - 1] / factorial[n];

  std::vector<double> phi(n, 0.0);
  for (std::uint64_t sub = 0; sub < total; ++sub) {
    const int card = std::popcount(sub);
    for (std::size_t i = 0; i < n; ++i) {
      if (sub & (std::uint64_t{1} << i)) continue;
      phi[i] += weight[static_cast<std::size_t>(card)] *
                (value[sub | (std::uint64_t{1} << i)] - value[sub]);
    }
  }
  return phi;
}

}  // namespace proxex
