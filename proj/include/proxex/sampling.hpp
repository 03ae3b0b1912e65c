#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "proxex/errors.hpp"
#include "proxex/mask.hpp"
#include "proxex/rng.hpp"

namespace proxex {

enum class MaskStrategy { lime_uniform_size, shap_kernel, exhaustive };

inline std::string_view to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::lime_uniform_size: return "lime-uniform-size";
    case MaskStrategy::shap_kernel: return "shap-kernel";
    case MaskStrategy::exhaustive: return "exhaustive";
  }
  return "lime-uniform-size";
}

struct WeightedSample {
  Mask mask;
  double weight = 1.0;
  std::string perturbed_text;
};

namespace detail {

// Exact for n <= 50 (products stay below 2^53), lgamma beyond that.
inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  if (k > n - k) k = n - k;
  if (n <= 50) {
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i)
      c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
    return c;
  }
  return std::exp(std::lgamma(static_cast<double>(n) + 1.0) -
                  std::lgamma(static_cast<double>(k) + 1.0) -
                  std::lgamma(static_cast<double>(n - k) + 1.0));
}

inline std::vector<Mask> exhaustive_masks(std::size_t n) {
  if (n > 20) raise(Errc::size_limit, "exhaustive enumeration limited to 20 features");
  const std::uint64_t total = std::uint64_t{1} << n;
  std::vector<Mask> out;
  out.reserve(total);
  for (std::uint64_t w = 0; w < total; ++w) out.push_back(Mask::from_uint(w, n));
  return out;
}

}  // namespace detail

// LIME proximity kernel: exp(-d^2 / width^2) with d = 100 x cosine distance
// between the mask and the all-ones vector. The all-zeros mask is assigned
// distance 1, i.e. the minimal positive weight.
inline double lime_weight(const Mask& mask, double kernel_width = 25.0) {
  if (mask.size() == 0) raise(Errc::mask_shape, "mask must have at least one feature");
  if (!(kernel_width > 0)) raise(Errc::invalid_argument, "kernel width must be positive");
  const double n = static_cast<double>(mask.size());
  const double ones = static_cast<double>(mask.ones());
  const double cos_dist = mask.ones() == 0 ? 1.0 : 1.0 - ones / std::sqrt(n * ones);
  const double d = 100.0 * cos_dist;
  return std::exp(-(d * d) / (kernel_width * kernel_width));
}

// Shapley kernel (n-1) / (C(n,|z|) * |z| * (n-|z|)). Full and empty
// coalitions carry infinite weight and must be handled as constraints.
inline double shap_weight(const Mask& mask) {
  const std::size_t n = mask.size();
  const std::size_t s = mask.ones();
  if (n == 0) raise(Errc::mask_shape, "mask must have at least one feature");
  if (s == 0 || s == n)
    raise(Errc::infinite_weight, "full/empty coalition weight is infinite; use constraints");
  return static_cast<double>(n - 1) /
         (detail::binomial(n, s) * static_cast<double>(s) * static_cast<double>(n - s));
}

// Draws the perturbation neighborhood. lime-uniform-size picks a removal
// count uniformly in 1..n, then a uniform subset of that size to clear;
// the all-ones mask is appended once. shap-kernel enumerates all proper
// coalitions when they fit in the budget and otherwise draws coalition
// sizes proportional to the Shapley kernel mass per size; the all-ones and
// all-zeros masks are appended once. Deterministic for a given seed.
inline std::vector<Mask> sample_masks(std::size_t n, std::size_t budget, MaskStrategy strategy,
                                      std::uint64_t seed) {
  if (n < 1) raise(Errc::invalid_argument, "need at least one feature");
  if (budget < 1) raise(Errc::invalid_argument, "budget must be at least 1");

  if (strategy == MaskStrategy::exhaustive) return detail::exhaustive_masks(n);

  Rng rng(seed);
  std::vector<Mask> out;

  if (strategy == MaskStrategy::lime_uniform_size) {
    out.reserve(budget + 1);
    for (std::size_t i = 0; i < budget; ++i) {
      const std::size_t removed = 1 + static_cast<std::size_t>(rng.below(n));
      Mask m = Mask::all_ones(n);
      for (std::size_t idx : rng.distinct(n, removed)) m.set(idx, false);
      out.push_back(std::move(m));
    }
    out.push_back(Mask::all_ones(n));
    return out;
  }

  // shap-kernel
  if (budget < 2) raise(Errc::insufficient_budget, "shap-kernel needs a budget of at least 2");
  const bool enumerable = n <= 20 && ((std::uint64_t{1} << n) - 2) <= budget;
  if (enumerable) {
    const std::uint64_t full = (std::uint64_t{1} << n) - 1;
    out.reserve(static_cast<std::size_t>(full) + 1);
    for (std::uint64_t w = 1; w < full; ++w) out.push_back(Mask::from_uint(w, n));
  } else {
    // P(size = s) proportional to (n-1) / (s * (n-s)), the kernel mass per size.
    std::vector<double> cumulative(n - 1, 0.0);
    double total = 0.0;
    for (std::size_t s = 1; s < n; ++s) {
      total += 1.0 / (static_cast<double>(s) * static_cast<double>(n - s));
      cumulative[s - 1] = total;
    }
    out.reserve(budget + 2);
    for (std::size_t i = 0; i < budget; ++i) {
      const double u = rng.unit() * total;
      std::size_t s = 1;
      while (s < n - 1 && cumulative[s - 1] <= u) ++s;
      Mask m = Mask::all_zeros(n);
      for (std::size_t idx : rng.distinct(n, s)) m.set(idx, true);
      out.push_back(std::move(m));
    }
  }
  out.push_back(Mask::all_ones(n));
  out.push_back(Mask::all_zeros(n));
  return out;
}

}  // namespace proxex
