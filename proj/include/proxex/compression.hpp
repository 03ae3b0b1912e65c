#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxex/client.hpp"
#include "proxex/errors.hpp"
#include "proxex/explain.hpp"
#include "proxex/rng.hpp"
#include "proxex/segmentation.hpp"
#include "proxex/solvers.hpp"
#include "proxex/tasks.hpp"

namespace proxex {

enum class DeletionStrategy { attribution_ascending, random };

inline std::string_view to_string(DeletionStrategy s) {
  return s == DeletionStrategy::attribution_ascending ? "attribution-asc" : "random";
}

// The displayed MDTA definition is a max over every k whose accuracy holds
// the bound; first_drop stops at the first violation instead. Both scan the
// same curve.
enum class MdtaMode { max_k, first_drop };

inline std::string_view to_string(MdtaMode m) {
  return m == MdtaMode::max_k ? "max-k" : "first-drop";
}

// Largest deletable prefix keeping Acc_k >= threshold_factor * Acc_0.
inline double mdta_from_curve(const std::vector<double>& acc_curve, double threshold_factor,
                              MdtaMode mode = MdtaMode::max_k) {
  if (acc_curve.empty()) raise(Errc::no_examples, "empty accuracy curve");
  const double bound = threshold_factor * acc_curve[0];
  std::size_t best = 0;
  for (std::size_t k = 0; k < acc_curve.size(); ++k) {
    if (acc_curve[k] >= bound) {
      best = k;
    } else if (mode == MdtaMode::first_drop) {
      break;
    }
  }
  return static_cast<double>(best);
}

// R_strategy = MDTA_strategy / MDTA_oracle x 100%.
inline double removal_ratio(double mdta_strategy, double mdta_oracle) {
  if (!(mdta_oracle > 0.0))
    raise(Errc::undefined_ratio, "oracle MDTA must be positive");
  return mdta_strategy / mdta_oracle * 100.0;
}

struct CompressionRun {
  std::string subject_id;
  std::size_t example_count = 0;
  double acc0 = 0.0;
  std::vector<double> acc_curve;  // k = 0..m; mean curve for random runs
  double mdta = 0.0;              // mean over repeats for random runs
  DeletionStrategy strategy = DeletionStrategy::attribution_ascending;
  int repeats = 1;
  double threshold_factor = 0.9;
  MdtaMode mode = MdtaMode::max_k;
  long unparseable = 0;

  json to_json() const {
    json j;
    j["subject_id"] = subject_id;
    j["example_count"] = example_count;
    j["acc0"] = acc0;
    j["acc_curve"] = acc_curve;
    j["mdta"] = mdta;
    j["strategy"] = std::string(to_string(strategy));
    j["repeats"] = repeats;
    j["threshold_factor"] = threshold_factor;
    j["mdta_mode"] = std::string(to_string(mode));
    j["unparseable"] = unparseable;
    return j;
  }
};

struct CompressionOptions {
  double threshold_factor = 0.9;
  MdtaMode mode = MdtaMode::max_k;
  DecodingParams decoding;
  std::string dataset_id;
  std::string subject_id;
};

namespace detail {

// Accuracy of `target` on the eval set with the given in-context region.
inline std::pair<double, long> icl_accuracy(const std::string& region_text,
                                            const std::vector<Instance>& eval_set,
                                            const ModelSpec& target, ModelClient& client,
                                            const CompressionOptions& opts,
                                            const std::string& region_mask_bits) {
  long correct = 0;
  long unparseable = 0;
  for (const auto& inst : eval_set) {
    const std::string prompt = build_prompt(inst.task, region_text);
    QueryMeta meta;
    meta.dataset_id = opts.dataset_id;
    meta.instance_id = inst.id;
    meta.segmentation_mode = std::string(to_string(SegmentationMode::example_block));
    meta.mask_bits = region_mask_bits;
    const ModelOutput out = client.cached_query(target, prompt, opts.decoding, meta);
    const ParsedOutput parsed = try_parse_output(inst.task, out);
    if (parsed.unparseable()) {
      ++unparseable;  // counted wrong, never guessed
      continue;
    }
    if (*parsed.label == inst.gold) ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(eval_set.size()), unparseable};
}

// Accuracy curve for one deletion order: Acc_k after removing the first k
// entries of `order`. Every point is evaluated on the identical eval set.
inline std::pair<std::vector<double>, long> deletion_curve(
    const TaskSpec& icl_task, const std::vector<std::size_t>& order,
    const std::vector<Instance>& eval_set, const ModelSpec& target, ModelClient& client,
    const CompressionOptions& opts) {
  const std::size_t m = icl_task.icl_examples.size();
  const std::string region = icl_region(icl_task);
  const FeatureSegmentation seg =
      segment(region, SegmentationMode::example_block, icl_task.icl_delimiter);
  if (seg.size() != m)
    raise(Errc::config,
          "in-context examples must not contain the delimiter; expected " + std::to_string(m) +
              " blocks, found " + std::to_string(seg.size()));
  std::vector<double> curve(m + 1, 0.0);
  long unparseable = 0;
  Mask mask = Mask::all_ones(m);
  for (std::size_t k = 0; k <= m; ++k) {
    if (k > 0) mask.set(order[k - 1], false);
    const auto [acc, bad] =
        icl_accuracy(seg.apply(mask), eval_set, target, client, opts, mask.to_bits_string());
    curve[k] = acc;
    unparseable += bad;
  }
  return {curve, unparseable};
}

}  // namespace detail

// Attribution-guided prompt compression: deletes in-context examples in
// ascending attribution order (ties by original index), evaluates the
// accuracy curve, and reports the maximal deletion keeping the target
// accuracy bound.
inline CompressionRun compress(const TaskSpec& icl_task, const Attribution& attr,
                               const std::vector<Instance>& eval_set, const ModelSpec& target,
                               ModelClient& client, const CompressionOptions& opts = {}) {
  const std::size_t m = icl_task.icl_examples.size();
  if (m == 0) raise(Errc::no_examples, "task has no in-context examples");
  if (attr.values.size() != m)
    raise(Errc::mask_shape, "attribution must have one value per example");
  if (eval_set.empty()) raise(Errc::no_samples, "empty eval set");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return attr.values[a] < attr.values[b]; });

  CompressionRun run;
  run.subject_id = opts.subject_id;
  run.example_count = m;
  run.strategy = DeletionStrategy::attribution_ascending;
  run.repeats = 1;
  run.threshold_factor = opts.threshold_factor;
  run.mode = opts.mode;
  auto [curve, unparseable] =
      detail::deletion_curve(icl_task, order, eval_set, target, client, opts);
  run.acc_curve = std::move(curve);
  run.acc0 = run.acc_curve[0];
  run.unparseable = unparseable;
  run.mdta = mdta_from_curve(run.acc_curve, opts.threshold_factor, opts.mode);
  return run;
}

// Random-deletion baseline: per repeat a uniformly random deletion order;
// reports the per-k mean accuracy and the mean MDTA. Deterministic per
// seed. With exhaustive_orderings = true the repeats walk all m! orders in
// lexicographic sequence, which makes the mean an exact expectation.
inline CompressionRun random_baseline(const TaskSpec& icl_task,
                                      const std::vector<Instance>& eval_set,
                                      const ModelSpec& target, ModelClient& client, int repeats,
                                      std::uint64_t seed, const CompressionOptions& opts = {},
                                      bool exhaustive_orderings = false) {
  const std::size_t m = icl_task.icl_examples.size();
  if (m == 0) raise(Errc::no_examples, "task has no in-context examples");
  if (eval_set.empty()) raise(Errc::no_samples, "empty eval set");
  if (repeats < 1) raise(Errc::invalid_argument, "repeats must be >= 1");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);

  CompressionRun run;
  run.subject_id = opts.subject_id;
  run.example_count = m;
  run.strategy = DeletionStrategy::random;
  run.repeats = repeats;
  run.threshold_factor = opts.threshold_factor;
  run.mode = opts.mode;
  run.acc_curve.assign(m + 1, 0.0);

  double mdta_sum = 0.0;
  for (int rep = 0; rep < repeats; ++rep) {
    if (exhaustive_orderings) {
      if (rep > 0 && !std::next_permutation(order.begin(), order.end()))
        raise(Errc::invalid_argument,
              "repeats exceed the number of distinct orderings");
    } else {
      Rng rng(derive_seed(seed, "random-baseline", static_cast<std::uint64_t>(rep)));
      order = rng.permutation(m);
    }
    auto [curve, unparseable] =
        detail::deletion_curve(icl_task, order, eval_set, target, client, opts);
    for (std::size_t k = 0; k <= m; ++k) run.acc_curve[k] += curve[k];
    run.unparseable += unparseable;
    mdta_sum += mdta_from_curve(curve, opts.threshold_factor, opts.mode);
  }
  for (auto& v : run.acc_curve) v /= static_cast<double>(repeats);
  run.acc0 = run.acc_curve[0];
  run.mdta = mdta_sum / static_cast<double>(repeats);
  return run;
}

}  // namespace proxex
