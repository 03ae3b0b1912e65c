// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "proxex/sampling.hpp"
#include "proxex/segmentation.hpp"

using namespace proxex;

TEST_CASE("word segmentation splits on whitespace runs") {
  const auto seg = segment("great movie", SegmentationMode::word);
  REQUIRE(seg.size() == 2);
  CHECK(seg.segment_text(0) == "great");
  CHECK(seg.segment_text(1) == "movie");

  const auto single = segment("a", SegmentationMode::word);
  CHECK(single.size() == 1);
  CHECK(single.segment_text(0) == "a");
}

TEST_CASE("sentence segmentation splits on sentence-final punctuation") {
  const auto seg = segment("Good start. Bad end! Right?", SegmentationMode::sentence);
  REQUIRE(seg.size() == 3);
  CHECK(seg.segment_text(0) == "Good start.");
  CHECK(seg.segment_text(1) == "Bad end!");
  CHECK(seg.segment_text(2) == "Right?");

  CHECK(segment("no punctuation at all", SegmentationMode::sentence).size() == 1);
  CHECK(segment("Wait... what?! Ok.", SegmentationMode::sentence).size() == 3);
}

TEST_CASE("example-block segmentation splits on the delimiter") {
  std::string prompt;
  for (int i = 0; i < 5; ++i) {
    if (i) prompt += "\n\n";
    prompt += "Q" + std::to_string(i) + ": question body\nAnswer: A";
  }
  const auto seg = segment(prompt, SegmentationMode::example_block, "\n\n");
  CHECK(seg.size() == 5);

  // No delimiter occurrence degenerates to a single feature.
  const auto degenerate = segment("one block only", SegmentationMode::example_block, "\n\n");
  CHECK(degenerate.size() == 1);

  // Consecutive delimiters collapse into one separator.
  const auto gappy = segment("a\n\n\n\nb", SegmentationMode::example_block, "\n\n");
  CHECK(gappy.size() == 2);
}

TEST_CASE("segmentation rejects empty and featureless text") {
  CHECK_THROWS_AS(segment("", SegmentationMode::word), Error);
  try {
    segment("   \t\n ", SegmentationMode::word);
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_input);
  }
}

TEST_CASE("apply_mask keeps selected segments with original separators") {
  const auto seg = segment("great movie", SegmentationMode::word);
  CHECK(seg.apply(Mask::from_bits_string("10")) == "great");
  CHECK(seg.apply(Mask::from_bits_string("01")) == "movie");
  CHECK(seg.apply(Mask::all_ones(2)) == "great movie");
  CHECK(seg.apply(Mask::all_zeros(2)) == "");

  const auto wide = segment("a b  c", SegmentationMode::word);
  CHECK(wide.apply(Mask::from_bits_string("101")) == "a  c");
  CHECK(wide.apply(Mask::from_bits_string("011")) == "b  c");
  CHECK(wide.apply(Mask::from_bits_string("110")) == "a b");
}

TEST_CASE("all-ones mask is the identity for every mode") {
  const std::string texts[] = {
      "  leading and trailing  ",
      "One sentence. Another one!  Third?",
      "block one\n\nblock two\n\nblock three\n\n",
      "word",
  };
  for (const auto& text : texts) {
    for (auto mode :
         {SegmentationMode::word, SegmentationMode::sentence, SegmentationMode::example_block}) {
      const auto seg = segment(text, mode);
      CHECK(seg.apply(Mask::all_ones(seg.size())) == text);
    }
  }
}

TEST_CASE("apply_mask rejects shape mismatches") {
  const auto seg = segment("one two three", SegmentationMode::word);
  try {
    seg.apply(Mask::all_ones(2));
    FAIL("expected MaskShapeError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::mask_shape);
  }
}

TEST_CASE("exhaustive strategy emits exactly 2^n distinct masks") {
  const auto masks = sample_masks(3, 1, MaskStrategy::exhaustive, 0);
  REQUIRE(masks.size() == 8);
  std::set<std::string> distinct;
  bool has_full = false, has_empty = false;
  for (const auto& m : masks) {
    distinct.insert(m.to_bits_string());
    has_full |= m.is_full();
    has_empty |= m.is_empty();
  }
  CHECK(distinct.size() == 8);
  CHECK(has_full);
  CHECK(has_empty);
}

TEST_CASE("mask sampling is deterministic per seed") {
  const auto a = sample_masks(10, 1000, MaskStrategy::lime_uniform_size, 7);
  const auto b = sample_masks(10, 1000, MaskStrategy::lime_uniform_size, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  const auto c = sample_masks(10, 1000, MaskStrategy::lime_uniform_size, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= !(a[i] == c[i]);
  CHECK(any_diff);

  const auto s1 = sample_masks(24, 500, MaskStrategy::shap_kernel, 11);
  const auto s2 = sample_masks(24, 500, MaskStrategy::shap_kernel, 11);
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
}

TEST_CASE("lime-uniform-size draws the removal count uniformly") {
  // Monte-Carlo check: for n = 2 the removal count is 1 or 2 with equal
  // probability, so P(removed = 1) should be 0.5 within 0.02.
  const std::size_t budget = 10000;
  const auto masks = sample_masks(2, budget, MaskStrategy::lime_uniform_size, 42);
  REQUIRE(masks.size() == budget + 1);  // + appended all-ones
  CHECK(masks.back().is_full());
  std::size_t removed_one = 0;
  for (std::size_t i = 0; i < budget; ++i)
    if (masks[i].ones() == 1) ++removed_one;
  const double freq = static_cast<double>(removed_one) / static_cast<double>(budget);
  CHECK(freq == doctest::Approx(0.5).epsilon(0.04));
  CHECK(std::abs(freq - 0.5) < 0.02);
}

TEST_CASE("shap-kernel strategy enumerates when the budget allows") {
  const auto masks = sample_masks(3, 10, MaskStrategy::shap_kernel, 3);
  REQUIRE(masks.size() == 8);  // 6 proper + appended full + empty
  for (std::size_t i = 0; i < 6; ++i) CHECK(masks[i].is_proper());
  CHECK(masks[6].is_full());
  CHECK(masks[7].is_empty());
}

TEST_CASE("shap-kernel strategy samples proper coalitions beyond the budget") {
  const auto masks = sample_masks(30, 200, MaskStrategy::shap_kernel, 5);
  REQUIRE(masks.size() == 202);
  for (std::size_t i = 0; i < 200; ++i) CHECK(masks[i].is_proper());
  CHECK(masks[200].is_full());
  CHECK(masks[201].is_empty());

  try {
    sample_masks(4, 1, MaskStrategy::shap_kernel, 0);
    FAIL("expected InsufficientBudget");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::insufficient_budget);
  }
}

TEST_CASE("lime weight matches the kernel definition") {
  CHECK(lime_weight(Mask::all_ones(6)) == doctest::Approx(1.0).epsilon(1e-12));
  // d = 100 * (1 - ones / sqrt(n * ones)), width 25, evaluated by hand.
  CHECK(lime_weight(Mask::from_bits_string("1000")) ==
        doctest::Approx(0.018315638888734179).epsilon(1e-12));
  CHECK(lime_weight(Mask::from_bits_string("1100")) ==
        doctest::Approx(0.25345144771897432).epsilon(1e-12));
  // all-zeros yields the minimal positive weight
  const double w0 = lime_weight(Mask::all_zeros(4));
  CHECK(w0 > 0.0);
  CHECK(w0 == doctest::Approx(std::exp(-16.0)).epsilon(1e-12));
}

TEST_CASE("lime weight is monotone non-increasing in removed features") {
  const std::size_t n = 10;
  double prev = lime_weight(Mask::all_ones(n));
  for (std::size_t ones = n; ones-- > 0;) {
    Mask m = Mask::all_zeros(n);
    for (std::size_t i = 0; i < ones; ++i) m.set(i, true);
    const double w = lime_weight(m);
    CHECK(w <= prev + 1e-15);
    prev = w;
  }
}

TEST_CASE("shap weight matches the Shapley kernel") {
  CHECK(shap_weight(Mask::from_bits_string("10")) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(shap_weight(Mask::from_bits_string("1100")) == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(shap_weight(Mask::from_bits_string("100")) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(shap_weight(Mask::from_bits_string("110")) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("shap weight is symmetric under complement") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(12);
    Mask m = Mask::all_zeros(n);
    const std::size_t ones = 1 + rng.below(n - 1);
    for (std::size_t idx : rng.distinct(n, ones)) m.set(idx, true);
    CHECK(shap_weight(m) == doctest::Approx(shap_weight(m.complement())).epsilon(1e-12));
  }
}

TEST_CASE("full and empty coalitions have no finite shap weight") {
  for (const auto& m : {Mask::all_ones(4), Mask::all_zeros(4)}) {
    try {
      shap_weight(m);
      FAIL("expected InfiniteWeight");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::infinite_weight);
    }
  }
}
