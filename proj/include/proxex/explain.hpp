#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "proxex/client.hpp"
#include "proxex/errors.hpp"
#include "proxex/rng.hpp"
#include "proxex/sampling.hpp"
#include "proxex/segmentation.hpp"
#include "proxex/solvers.hpp"
#include "proxex/tasks.hpp"

namespace proxex {

// Knobs of one explanation run. Everything that influences the result is
// here, so a (config, seed, store) triple replays bit for bit.
struct ExplainOptions {
  AttributionMethod method = AttributionMethod::lime;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  SegmentationMode segmentation = SegmentationMode::word;
  std::string icl_delimiter = "\n\n";
  std::optional<MaskStrategy> strategy;  // defaults per method
  double ridge_lambda = 1.0;
  double kernel_width = 25.0;
  GenerationScorer scorer = GenerationScorer::token_f1;
  std::optional<ModelSpec> embed_model;
  DecodingParams decoding;
  std::string dataset_id;
  bool choice_one_vs_rest = false;  // additionally fit one surrogate per choice label

  MaskStrategy effective_strategy() const {
    if (strategy) return *strategy;
    return method == AttributionMethod::lime ? MaskStrategy::lime_uniform_size
                                             : MaskStrategy::shap_kernel;
  }

  std::uint64_t mask_seed(const std::string& instance_id) const {
    return derive_seed(seed, "masks", fnv1a64(instance_id));
  }
};

// One model's outputs over a mask set, reduced to solver responses.
// Classification responses are canonical label probabilities (sentiment:
// P(positive); choice: P(the model's own unperturbed answer)); generation
// responses are the configured score against the reference output, which
// defaults to the model's own unperturbed output.
struct ResponseSet {
  std::vector<double> y;
  std::vector<std::string> labels;           // parsed label per mask, "" if unparseable
  std::vector<std::optional<double>> probs;  // reported label probability per mask
  std::vector<char> ok;                      // parseable flag per mask
  std::string anchor_label;                  // prediction on the unperturbed input
  std::string reference;                     // generation scoring reference
  double f_full = 0.0;
  int unparseable = 0;

  double mean() const {
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (ok[i]) s += y[i], ++c;
    return c ? s / static_cast<double>(c) : 0.0;
  }

  double variance() const {
    const double m = mean();
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (ok[i]) s += (y[i] - m) * (y[i] - m), ++c;
    return c ? s / static_cast<double>(c) : 0.0;
  }
};

// P(label == anchor) from a parsed output. Binary tasks reuse the reported
// probability of the other label; with more labels the remainder is not
// attributable to a single label, so the indicator convention applies.
inline double label_probability(const TaskSpec& task, const std::string& parsed_label,
                                const std::optional<double>& parsed_prob,
                                const std::string& anchor) {
  const double p = parsed_prob.value_or(1.0);
  if (parsed_label == anchor) return p;
  if (task.label_set.size() == 2) return 1.0 - p;
  return 0.0;
}

inline QueryMeta make_query_meta(const ExplainOptions& opts, const std::string& instance_id,
                                 const Mask& mask) {
  QueryMeta m;
  m.dataset_id = opts.dataset_id;
  m.instance_id = instance_id;
  m.segmentation_mode = std::string(to_string(opts.segmentation));
  m.mask_bits = mask.to_bits_string();
  return m;
}

inline ModelOutput query_masked(const Instance& instance, const ModelSpec& model,
                                const FeatureSegmentation& seg, const Mask& mask,
                                ModelClient& client, const ExplainOptions& opts) {
  const std::string prompt = build_prompt(instance.task, seg.apply(mask));
  return client.cached_query(model, prompt, opts.decoding,
                             make_query_meta(opts, instance.id, mask));
}

// Queries `model` on every mask and computes the per-mask responses.
inline ResponseSet collect_responses(const Instance& instance, const ModelSpec& model,
                                     const FeatureSegmentation& seg,
                                     const std::vector<Mask>& masks, ModelClient& client,
                                     const ExplainOptions& opts) {
  const TaskSpec& task = instance.task;
  ResponseSet rs;

  const Mask full = Mask::all_ones(seg.size());
  const ModelOutput full_out = query_masked(instance, model, seg, full, client, opts);
  if (task.kind == TaskKind::generation) {
    rs.reference = task.reference_output.empty() ? full_out.text : task.reference_output;
    rs.anchor_label = full_out.text;
  } else {
    const ParsedOutput parsed = try_parse_output(task, full_out);
    if (parsed.unparseable())
      raise(Errc::unparseable_output,
            "unparseable prediction on the unperturbed input of " + instance.id);
    rs.anchor_label = *parsed.label;
  }

  const ModelSpec* embed = opts.embed_model ? &*opts.embed_model : nullptr;
  rs.y.resize(masks.size(), 0.0);
  rs.labels.assign(masks.size(), std::string());
  rs.probs.assign(masks.size(), std::nullopt);
  rs.ok.assign(masks.size(), 0);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const ModelOutput out = query_masked(instance, model, seg, masks[i], client, opts);
    if (task.kind == TaskKind::generation) {
      rs.ok[i] = 1;
      rs.labels[i] = out.text;
      rs.y[i] = score_generation(out.text, rs.reference, opts.scorer, &client, embed,
                                 make_query_meta(opts, instance.id, masks[i]))
                    .value;
      continue;
    }
    const ParsedOutput parsed = try_parse_output(task, out);
    if (parsed.unparseable()) {
      ++rs.unparseable;
      continue;
    }
    rs.ok[i] = 1;
    rs.labels[i] = *parsed.label;
    rs.probs[i] = parsed.label_prob;
    rs.y[i] = task.kind == TaskKind::sentiment
                  ? sentiment_response(parsed)
                  : label_probability(task, *parsed.label, parsed.label_prob, rs.anchor_label);
  }

  // Response of the unperturbed input on the same scale.
  if (task.kind == TaskKind::generation) {
    rs.f_full = score_generation(full_out.text, rs.reference, opts.scorer, &client, embed,
                                 make_query_meta(opts, instance.id, full))
                    .value;
  } else {
    const ParsedOutput parsed = try_parse_output(task, full_out);
    rs.f_full = task.kind == TaskKind::sentiment
                    ? sentiment_response(parsed)
                    : label_probability(task, *parsed.label, parsed.label_prob, rs.anchor_label);
  }
  return rs;
}

namespace detail {

inline bool kernel_weighted_enumeration(MaskStrategy strategy, std::size_t n, std::size_t budget) {
  if (strategy == MaskStrategy::exhaustive) return true;
  return strategy == MaskStrategy::shap_kernel && n <= 20 &&
         ((std::uint64_t{1} << n) - 2) <= budget;
}

}  // namespace detail

// Fits one attribution from a response vector over the mask set.
// LIME: weighted ridge over every parseable mask. Kernel SHAP: proper
// coalitions only, full/empty entering through the constraints; exact
// Shapley-kernel weights when the coalition set is fully enumerated,
// uniform weights when it was sampled from the kernel distribution.
inline Attribution fit_from_responses(const Instance& instance, const ModelSpec& model,
                                      const FeatureSegmentation& seg,
                                      const std::vector<Mask>& masks,
                                      const std::vector<double>& responses,
                                      const std::vector<char>& ok, double f_full, double f_empty,
                                      const ExplainOptions& opts) {
  const std::size_t n = seg.size();
  Attribution attr;
  if (opts.method == AttributionMethod::lime) {
    std::vector<RegressionSample> samples;
    samples.reserve(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
      if (!ok[i]) continue;
      samples.push_back({masks[i], responses[i], lime_weight(masks[i], opts.kernel_width)});
    }
    attr = fit_lime(samples, opts.ridge_lambda);
  } else {
    const bool kernel_weights =
        detail::kernel_weighted_enumeration(opts.effective_strategy(), n, opts.n_samples);
    std::vector<RegressionSample> samples;
    samples.reserve(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
      if (!ok[i] || !masks[i].is_proper()) continue;
      samples.push_back(
          {masks[i], responses[i], kernel_weights ? shap_weight(masks[i]) : 1.0});
    }
    attr = fit_kernel_shap(samples, n, f_full, f_empty);
  }
  attr.proxy_model_id = model.model_id;
  attr.n_samples = masks.size();
  attr.seed = opts.seed;
  (void)instance;
  return attr;
}

// The fitted explanation plus the neighborhood it was fitted on.
struct ExplainResult {
  std::optional<FeatureSegmentation> seg;
  std::vector<Mask> masks;
  ResponseSet responses;
  Attribution attribution;
  std::vector<Attribution> per_label;  // one-vs-rest fits (choice tasks)
  double f_empty = 0.0;
};

// End-to-end local explanation of one instance against one model:
// segment, sample masks, query (cached), fit.
inline ExplainResult explain_instance(const Instance& instance, const ModelSpec& proxy,
                                      ModelClient& client, const ExplainOptions& opts) {
  ExplainResult result;
  result.seg = segment(instance.text, opts.segmentation, opts.icl_delimiter);
  const FeatureSegmentation& seg = *result.seg;
  const std::size_t n = seg.size();

  result.masks = sample_masks(n, opts.n_samples, opts.effective_strategy(),
                              opts.mask_seed(instance.id));
  result.responses = collect_responses(instance, proxy, seg, result.masks, client, opts);

  if (opts.method == AttributionMethod::kernel_shap) {
    const Mask empty = Mask::all_zeros(n);
    const ModelOutput empty_out = query_masked(instance, proxy, seg, empty, client, opts);
    if (instance.task.kind == TaskKind::generation) {
      result.f_empty = score_generation(empty_out.text, result.responses.reference, opts.scorer,
                                        &client, opts.embed_model ? &*opts.embed_model : nullptr,
                                        make_query_meta(opts, instance.id, empty))
                           .value;
    } else {
      const ParsedOutput parsed = try_parse_output(instance.task, empty_out);
      if (parsed.unparseable()) {
        ++result.responses.unparseable;
        result.f_empty = 0.0;
      } else {
        result.f_empty =
            instance.task.kind == TaskKind::sentiment
                ? sentiment_response(parsed)
                : label_probability(instance.task, *parsed.label, parsed.label_prob,
                                    result.responses.anchor_label);
      }
    }
  }

  result.attribution =
      fit_from_responses(instance, proxy, seg, result.masks, result.responses.y,
                         result.responses.ok, result.responses.f_full, result.f_empty, opts);

  if (opts.choice_one_vs_rest && instance.task.kind == TaskKind::multiple_choice) {
    result.per_label.reserve(instance.task.label_set.size());
    for (const auto& label : instance.task.label_set) {
      std::vector<double> ys(result.masks.size(), 0.0);
      for (std::size_t i = 0; i < result.masks.size(); ++i) {
        if (!result.responses.ok[i]) continue;
        ys[i] = label_probability(instance.task, result.responses.labels[i],
                                  result.responses.probs[i], label);
      }
      const double lf_full = label_probability(
          instance.task, result.responses.anchor_label,
          std::nullopt, label);  // indicator of the anchor being this label
      result.per_label.push_back(fit_from_responses(instance, proxy, seg, result.masks, ys,
                                                    result.responses.ok, lf_full, 0.0, opts));
    }
  }
  return result;
}

}  // namespace proxex
