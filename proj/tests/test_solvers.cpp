// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "proxex/rng.hpp"
#include "proxex/sampling.hpp"
#include "proxex/solvers.hpp"

using namespace proxex;

namespace {

// Random set function v : 2^n -> R backed by a lookup table.
struct RandomGame {
  std::vector<double> table;
  std::size_t n;

  RandomGame(std::size_t n_features, std::uint64_t seed) : n(n_features) {
    Rng rng(seed);
    table.resize(std::size_t{1} << n);
    for (auto& v : table) v = rng.unit() * 4.0 - 2.0;
  }

  double operator()(const Mask& m) const {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (m.test(i)) idx |= std::size_t{1} << i;
    return table[idx];
  }
};

// Kernel SHAP over all proper coalitions with exact Shapley-kernel weights.
Attribution exhaustive_kernel_shap(const std::function<double(const Mask&)>& v, std::size_t n) {
  std::vector<RegressionSample> samples;
  for (const auto& m : sample_masks(n, 1, MaskStrategy::exhaustive, 0)) {
    if (!m.is_proper()) continue;
    samples.push_back({m, v(m), shap_weight(m)});
  }
  return fit_kernel_shap(samples, n, v(Mask::all_ones(n)), v(Mask::all_zeros(n)));
}

}  // namespace

TEST_CASE("brute force Shapley: additive game recovers its coefficients") {
  const std::vector<double> c = {1.0, 2.0, 3.0};
  auto v = [&](const Mask& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      if (m.test(i)) s += c[i];
    return s;
  };
  const auto phi = brute_force_shapley(v, 3);
  REQUIRE(phi.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(phi[i] == doctest::Approx(c[i]).epsilon(1e-12));
}

TEST_CASE("brute force Shapley: null player gets zero") {
  auto v = [](const Mask& m) { return m.test(0) ? 2.5 : 0.0; };  // ignores features 1, 2
  const auto phi = brute_force_shapley(v, 3);
  CHECK(phi[0] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(phi[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(phi[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("brute force Shapley: efficiency holds on random games") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 2 + seed % 7;
    RandomGame game(n, seed);
    const auto phi = brute_force_shapley(game, n);
    double total = 0.0;
    for (double p : phi) total += p;
    const double expected = game(Mask::all_ones(n)) - game(Mask::all_zeros(n));
    CHECK(total == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("brute force Shapley rejects oversized games") {
  try {
    brute_force_shapley([](const Mask&) { return 0.0; }, 13);
    FAIL("expected SizeLimit");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::size_limit);
  }
}

TEST_CASE("kernel SHAP with exhaustive coalitions equals exact Shapley values") {
  // The conjunction game: v(S) = 1 iff {0,1} subset of S.
  auto v = [](const Mask& m) { return m.test(0) && m.test(1) ? 1.0 : 0.0; };
  const auto attr = exhaustive_kernel_shap(v, 3);
  CHECK(attr.values[0] == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(attr.values[1] == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(attr.values[2] == doctest::Approx(0.0).epsilon(1e-10));

  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t n = 2 + seed % 7;
    RandomGame game(n, 1000 + seed);
    const auto fitted = exhaustive_kernel_shap(game, n);
    const auto exact = brute_force_shapley(game, n);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(std::abs(fitted.values[i] - exact[i]) < 1e-6);
  }
}

TEST_CASE("kernel SHAP efficiency holds to constraint-elimination arithmetic") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t n = 2 + seed % 8;
    RandomGame game(n, 2000 + seed);
    const auto attr = exhaustive_kernel_shap(game, n);
    double total = attr.intercept;
    for (double a : attr.values) total += a;
    CHECK(std::abs(total - game(Mask::all_ones(n))) < 1e-9);
  }
}

TEST_CASE("kernel SHAP: symmetric games attribute equally") {
  auto v = [](const Mask& m) { return std::sqrt(static_cast<double>(m.ones())); };
  const auto attr = exhaustive_kernel_shap(v, 5);
  for (std::size_t i = 1; i < 5; ++i)
    CHECK(attr.values[i] == doctest::Approx(attr.values[0]).epsilon(1e-10));
}

TEST_CASE("kernel SHAP closed form and error contracts") {
  const auto one = fit_kernel_shap({}, 1, 3.5, 1.0);
  REQUIRE(one.values.size() == 1);
  CHECK(one.values[0] == doctest::Approx(2.5));
  CHECK(one.intercept == doctest::Approx(1.0));

  try {
    fit_kernel_shap({}, 3, 1.0, 0.0);
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::insufficient_samples);
  }

  // Full/empty coalitions are constraint inputs, not samples.
  std::vector<RegressionSample> bad = {{Mask::all_ones(3), 1.0, 1.0}};
  CHECK_THROWS_AS(fit_kernel_shap(bad, 3, 1.0, 0.0), Error);
}

TEST_CASE("LIME recovers an exact linear response with lambda = 0") {
  std::vector<RegressionSample> samples;
  for (const auto& m : sample_masks(2, 1, MaskStrategy::exhaustive, 0)) {
    const double y = 3.0 * (m.test(0) ? 1 : 0) - 2.0 * (m.test(1) ? 1 : 0) + 1.0;
    samples.push_back({m, y, 1.0});
  }
  const auto attr = fit_lime(samples, 0.0);
  CHECK(attr.values[0] == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(attr.values[1] == doctest::Approx(-2.0).epsilon(1e-10));
  CHECK(attr.intercept == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("LIME recovery on random linear responses") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<double> w(n);
    for (auto& x : w) x = rng.unit() * 6.0 - 3.0;
    const double b = rng.unit() * 2.0 - 1.0;
    std::vector<RegressionSample> samples;
    for (const auto& m : sample_masks(n, 1, MaskStrategy::exhaustive, 0)) {
      double y = b;
      for (std::size_t i = 0; i < n; ++i)
        if (m.test(i)) y += w[i];
      samples.push_back({m, y, lime_weight(m)});
    }
    const auto attr = fit_lime(samples, 0.0);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(attr.values[i] - w[i]) < 1e-8);
    CHECK(std::abs(attr.intercept - b) < 1e-8);
  }
}

TEST_CASE("LIME: constant response attributes nothing") {
  std::vector<RegressionSample> samples;
  for (const auto& m : sample_masks(3, 1, MaskStrategy::exhaustive, 0))
    samples.push_back({m, 4.25, 1.0});
  const auto attr = fit_lime(samples, 1.0);
  for (double v : attr.values) CHECK(std::abs(v) < 1e-12);
  CHECK(attr.intercept == doctest::Approx(4.25).epsilon(1e-12));
}

TEST_CASE("LIME is invariant to duplicating the sample set") {
  std::vector<RegressionSample> samples;
  Rng rng(21);
  for (const auto& m : sample_masks(4, 1, MaskStrategy::exhaustive, 0))
    samples.push_back({m, rng.unit(), lime_weight(m)});
  const auto base = fit_lime(samples, 1.0);
  std::vector<RegressionSample> doubled = samples;
  doubled.insert(doubled.end(), samples.begin(), samples.end());
  const auto dup = fit_lime(doubled, 1.0);
  for (std::size_t i = 0; i < base.values.size(); ++i)
    CHECK(std::abs(base.values[i] - dup.values[i]) < 1e-12);
  CHECK(std::abs(base.intercept - dup.intercept) < 1e-12);
}

TEST_CASE("LIME rejects rank-deficient designs with lambda = 0") {
  // Two samples for two features: fewer samples than coefficients.
  std::vector<RegressionSample> few = {{Mask::from_bits_string("10"), 1.0, 1.0},
                                       {Mask::from_bits_string("01"), 0.0, 1.0}};
  try {
    fit_lime(few, 0.0);
    FAIL("expected SingularSystem");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::singular_system);
  }

  // Enough samples but a degenerate design (identical rows).
  std::vector<RegressionSample> flat(5, RegressionSample{Mask::from_bits_string("10"), 1.0, 1.0});
  try {
    fit_lime(flat, 0.0);
    FAIL("expected SingularSystem");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::singular_system);
  }

  // With ridge the same design is solvable, flag-free or degraded gracefully.
  const auto ridge = fit_lime(flat, 1.0);
  CHECK(ridge.values.size() == 2);
}

TEST_CASE("solvers are equivariant under feature permutation") {
  const std::size_t n = 5;
  RandomGame game(n, 77);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  auto permuted_game = [&](const Mask& m) {
    Mask orig = Mask::all_zeros(n);
    for (std::size_t i = 0; i < n; ++i)
      if (m.test(i)) orig.set(perm[i], true);
    return game(orig);
  };

  const auto base_shap = exhaustive_kernel_shap(game, n);
  const auto perm_shap = exhaustive_kernel_shap(permuted_game, n);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(perm_shap.values[i] == doctest::Approx(base_shap.values[perm[i]]).epsilon(1e-9));

  auto lime_of = [&](const std::function<double(const Mask&)>& v) {
    std::vector<RegressionSample> samples;
    for (const auto& m : sample_masks(n, 1, MaskStrategy::exhaustive, 0))
      samples.push_back({m, v(m), lime_weight(m)});
    return fit_lime(samples, 1.0);
  };
  const auto base_lime = lime_of(game);
  const auto perm_lime = lime_of(permuted_game);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(perm_lime.values[i] == doctest::Approx(base_lime.values[perm[i]]).epsilon(1e-9));
}

TEST_CASE("identical inputs produce bit-identical attributions") {
  RandomGame game(6, 31);
  const auto a = exhaustive_kernel_shap(game, 6);
  const auto b = exhaustive_kernel_shap(game, 6);
  CHECK(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0);
  CHECK(a.intercept == b.intercept);
}

TEST_CASE("predict_surrogate evaluates the linear surrogate") {
  Attribution attr;
  attr.values = {3.0, -2.0};
  attr.intercept = 1.0;
  CHECK(predict_surrogate(attr, Mask::all_zeros(2)) == doctest::Approx(1.0));
  CHECK(predict_surrogate(attr, Mask::from_bits_string("10")) == doctest::Approx(4.0));
  CHECK(predict_surrogate(attr, Mask::all_ones(2)) == doctest::Approx(2.0));

  try {
    predict_surrogate(attr, Mask::all_ones(3));
    FAIL("expected MaskShapeError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::mask_shape);
  }

  // Efficiency: the all-ones prediction of a kernel SHAP fit is f(full).
  RandomGame game(5, 13);
  const auto shap = exhaustive_kernel_shap(game, 5);
  CHECK(predict_surrogate(shap, Mask::all_ones(5)) ==
        doctest::Approx(game(Mask::all_ones(5))).epsilon(1e-10));
}
