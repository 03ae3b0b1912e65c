#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxex/explain.hpp"
#include "proxex/io.hpp"

namespace proxex {

enum class FidelityMetricKind { accuracy, mse, aopc };

inline std::string_view to_string(FidelityMetricKind m) {
  switch (m) {
    case FidelityMetricKind::accuracy: return "accuracy";
    case FidelityMetricKind::mse: return "mse";
    case FidelityMetricKind::aopc: return "aopc";
  }
  return "accuracy";
}

inline FidelityMetricKind fidelity_metric_from_string(std::string_view s) {
  if (s == "accuracy") return FidelityMetricKind::accuracy;
  if (s == "mse") return FidelityMetricKind::mse;
  if (s == "aopc") return FidelityMetricKind::aopc;
  raise(Errc::config, "unknown fidelity metric '" + std::string(s) + "'");
}

// How classification responses are thresholded into labels: probabilities
// cut at 0.5, +-1 indicator coding cuts at 0.
enum class ResponseCoding { probability, indicator_pm1 };

struct FidelityReport {
  std::string proxy_model_id;
  std::string target_model_id;
  FidelityMetricKind metric = FidelityMetricKind::accuracy;
  double value = 0.0;
  std::size_t n_instances = 0;
  bool filtered = false;
  bool fresh_draw = false;
};

inline double classification_threshold(ResponseCoding coding) {
  return coding == ResponseCoding::probability ? 0.5 : 0.0;
}

// Expected agreement between the surrogate g and the target responses over
// the perturbation neighborhood of one instance. Classification compares
// thresholded labels (accuracy); generation compares scores (MSE).
inline FidelityReport surrogate_fidelity(const Attribution& attr,
                                         const std::vector<std::pair<Mask, double>>& target_samples,
                                         TaskKind kind,
                                         ResponseCoding coding = ResponseCoding::probability) {
  if (target_samples.empty()) raise(Errc::no_samples, "no evaluation samples");
  FidelityReport report;
  report.proxy_model_id = attr.proxy_model_id;
  report.target_model_id = attr.target_model_id;
  report.n_instances = 1;
  if (kind == TaskKind::generation) {
    double se = 0.0;
    for (const auto& [mask, y] : target_samples) {
      const double diff = predict_surrogate(attr, mask) - y;
      se += diff * diff;
    }
    report.metric = FidelityMetricKind::mse;
    report.value = se / static_cast<double>(target_samples.size());
    return report;
  }
  const double cut = classification_threshold(coding);
  std::size_t agree = 0;
  for (const auto& [mask, y] : target_samples) {
    const bool predicted = predict_surrogate(attr, mask) >= cut;
    const bool actual = y >= cut;
    if (predicted == actual) ++agree;
  }
  report.metric = FidelityMetricKind::accuracy;
  report.value = static_cast<double>(agree) / static_cast<double>(target_samples.size());
  return report;
}

// Argmax agreement for choice tasks: one surrogate per label, predicted
// label = argmax of the per-label surrogate scores. Target masks with no
// parseable label count as disagreements.
inline double surrogate_accuracy_argmax(const std::vector<Attribution>& per_label,
                                        const std::vector<std::string>& label_set,
                                        const std::vector<Mask>& masks,
                                        const std::vector<std::string>& target_labels) {
  if (masks.empty()) raise(Errc::no_samples, "no evaluation samples");
  if (per_label.size() != label_set.size())
    raise(Errc::invalid_argument, "one attribution per label required");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t l = 0; l < per_label.size(); ++l) {
      const double s = predict_surrogate(per_label[l], masks[i]);
      if (s > best_score) {
        best_score = s;
        best = l;
      }
    }
    if (!target_labels[i].empty() && label_set[best] == target_labels[i]) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(masks.size());
}

// Instances on which both models predict the same label for the
// unperturbed input. Order-preserving subset of `ids`.
inline std::vector<std::string> agreement_filter(
    const std::vector<std::string>& ids, const std::map<std::string, std::string>& preds_proxy,
    const std::map<std::string, std::string>& preds_target) {
  std::vector<std::string> kept;
  kept.reserve(ids.size());
  for (const auto& id : ids) {
    const auto a = preds_proxy.find(id);
    const auto b = preds_target.find(id);
    if (a == preds_proxy.end() || b == preds_target.end())
      raise(Errc::incomplete_input, "missing prediction for instance " + id);
    if (a->second == b->second) kept.push_back(id);
  }
  return kept;
}

// Feature order under an attribution: descending value, ties broken by the
// original feature index. Shared by the AOPC deletion loop and tests.
inline std::vector<std::size_t> descending_order(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

// Area Over the Perturbation Curve for one instance: for k = 1..100 mask
// the top floor(k*n/100) features by descending attribution, query the
// target on the masked input, and average the drops in the probability of
// the original prediction (generation: drops of the generation score).
inline double aopc(const Attribution& attr, const FeatureSegmentation& seg,
                   const Instance& instance, const ModelSpec& target, ModelClient& client,
                   const ExplainOptions& opts) {
  const std::size_t n = seg.size();
  if (attr.values.size() != n)
    raise(Errc::mask_shape, "attribution does not match the segmentation");
  const TaskSpec& task = instance.task;
  const std::vector<std::size_t> order = descending_order(attr.values);

  const Mask full = Mask::all_ones(n);
  const ModelOutput full_out = query_masked(instance, target, seg, full, client, opts);
  std::string reference;
  std::string anchor;
  double p0 = 0.0;
  const ModelSpec* embed = opts.embed_model ? &*opts.embed_model : nullptr;
  if (task.kind == TaskKind::generation) {
    reference = task.reference_output.empty() ? full_out.text : task.reference_output;
    p0 = score_generation(full_out.text, reference, opts.scorer, &client, embed,
                          make_query_meta(opts, instance.id, full))
             .value;
  } else {
    const ParsedOutput parsed = try_parse_output(task, full_out);
    if (parsed.unparseable())
      raise(Errc::unparseable_output,
            "unparseable prediction on the unperturbed input of " + instance.id);
    anchor = *parsed.label;
    p0 = parsed.label_prob.value_or(1.0);
  }

  // p_f(anchor | input with the top-m features masked), memoized per m.
  std::map<std::size_t, double> p_at_m{{0, p0}};
  auto p_of = [&](std::size_t m) {
    const auto it = p_at_m.find(m);
    if (it != p_at_m.end()) return it->second;
    Mask mask = Mask::all_ones(n);
    for (std::size_t j = 0; j < m; ++j) mask.set(order[j], false);
    const ModelOutput out = query_masked(instance, target, seg, mask, client, opts);
    double p = 0.0;
    if (task.kind == TaskKind::generation) {
      p = score_generation(out.text, reference, opts.scorer, &client, embed,
                           make_query_meta(opts, instance.id, mask))
              .value;
    } else {
      const ParsedOutput parsed = try_parse_output(task, out);
      if (!parsed.unparseable())
        p = label_probability(task, *parsed.label, parsed.label_prob, anchor);
    }
    p_at_m.emplace(m, p);
    return p;
  };

  double drop_sum = 0.0;
  for (std::size_t k = 1; k <= 100; ++k) {
    const std::size_t m = k * n / 100;
    drop_sum += p0 - p_of(m);
  }
  return drop_sum / 100.0;
}

struct MatrixCell {
  FidelityReport report;
  std::optional<double> relative;         // value / column diagonal
  std::optional<double> target_variance;  // mean neighborhood response variance
  bool absent = false;
  std::string error;
};

struct FidelityMatrix {
  std::vector<std::string> model_ids;
  FidelityMetricKind metric = FidelityMetricKind::accuracy;
  bool filtered = false;
  bool fresh_draw = false;
  std::vector<std::vector<MatrixCell>> cells;  // [proxy][target]

  const MatrixCell& cell(std::size_t proxy, std::size_t target) const {
    return cells[proxy][target];
  }

  json to_json() const {
    json out;
    out["model_ids"] = model_ids;
    out["metric"] = std::string(to_string(metric));
    out["filtered"] = filtered;
    out["fresh_draw"] = fresh_draw;
    json cell_array = json::array();
    for (std::size_t r = 0; r < cells.size(); ++r) {
      for (std::size_t c = 0; c < cells[r].size(); ++c) {
        const MatrixCell& cell = cells[r][c];
        json j{{"proxy", model_ids[r]},
               {"target", model_ids[c]},
               {"absent", cell.absent}};
        if (cell.absent) {
          j["error"] = cell.error;
        } else {
          j["value"] = cell.report.value;
          j["n_instances"] = cell.report.n_instances;
          if (cell.relative) j["relative"] = *cell.relative;
          if (cell.target_variance) j["target_variance"] = *cell.target_variance;
        }
        cell_array.push_back(std::move(j));
      }
    }
    out["cells"] = std::move(cell_array);
    return out;
  }

  // Rows = proxy models, columns = target models.
  std::string to_csv() const {
    std::string out = "proxy\\target";
    for (const auto& id : model_ids) out += "," + csv_escape(id);
    out += "\n";
    for (std::size_t r = 0; r < cells.size(); ++r) {
      out += csv_escape(model_ids[r]);
      for (std::size_t c = 0; c < cells[r].size(); ++c)
        out += "," + (cells[r][c].absent ? std::string() : fmt_double(cells[r][c].report.value));
      out += "\n";
    }
    return out;
  }

  std::string to_svg() const {
    const std::size_t m = model_ids.size();
    const int cell_px = 72, label_px = 120, pad = 10;
    const int width = label_px + static_cast<int>(m) * cell_px + pad;
    const int height = label_px + static_cast<int>(m) * cell_px + pad;
    double lo = 1e300, hi = -1e300;
    for (const auto& row : cells)
      for (const auto& cell : row)
        if (!cell.absent) {
          lo = std::min(lo, cell.report.value);
          hi = std::max(hi, cell.report.value);
        }
    if (lo > hi) {
      lo = 0.0;
      hi = 1.0;
    }
    auto shade = [&](double v) {
      const double t = hi > lo ? (v - lo) / (hi - lo) : 1.0;
      const int rch = static_cast<int>(255 - 185 * t);
      const int gch = static_cast<int>(255 - 120 * t);
      const int bch = 255;
      return "rgb(" + std::to_string(rch) + "," + std::to_string(gch) + "," +
             std::to_string(bch) + ")";
    };
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<style>text{font-family:sans-serif;font-size:12px}</style>\n";
    for (std::size_t c = 0; c < m; ++c) {
      const int x = label_px + static_cast<int>(c) * cell_px + cell_px / 2;
      svg += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(label_px - 8) +
             "\" text-anchor=\"middle\">" + model_ids[c] + "</text>\n";
    }
    for (std::size_t r = 0; r < m; ++r) {
      const int y = label_px + static_cast<int>(r) * cell_px + cell_px / 2 + 4;
      svg += "<text x=\"" + std::to_string(label_px - 8) + "\" y=\"" + std::to_string(y) +
             "\" text-anchor=\"end\">" + model_ids[r] + "</text>\n";
      for (std::size_t c = 0; c < m; ++c) {
        const int x = label_px + static_cast<int>(c) * cell_px;
        const int ytop = label_px + static_cast<int>(r) * cell_px;
        const MatrixCell& cell = cells[r][c];
        const std::string fill = cell.absent ? "rgb(230,230,230)" : shade(cell.report.value);
        svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(ytop) + "\" width=\"" +
               std::to_string(cell_px) + "\" height=\"" + std::to_string(cell_px) + "\" fill=\"" +
               fill + "\" stroke=\"white\"/>\n";
        char value_text[32] = "n/a";
        if (!cell.absent) std::snprintf(value_text, sizeof(value_text), "%.3f", cell.report.value);
        svg += "<text x=\"" + std::to_string(x + cell_px / 2) + "\" y=\"" +
               std::to_string(ytop + cell_px / 2 + 4) + "\" text-anchor=\"middle\">" + value_text +
               "</text>\n";
      }
    }
    svg += "</svg>\n";
    return svg;
  }
};

struct MatrixOptions {
  ExplainOptions explain;
  FidelityMetricKind metric = FidelityMetricKind::accuracy;
  bool filtered = false;
  bool fresh_draw = false;  // evaluate on a fresh mask draw instead of the fitting set
  ResponseCoding coding = ResponseCoding::probability;
};

namespace detail {

struct PerModelView {
  ExplainResult explained;
  ResponseSet eval;  // responses on the evaluation mask set
};

inline bool metric_supported(FidelityMetricKind metric, TaskKind kind) {
  switch (metric) {
    case FidelityMetricKind::accuracy:
      return kind == TaskKind::sentiment || kind == TaskKind::multiple_choice;
    case FidelityMetricKind::mse:
      return kind == TaskKind::sentiment || kind == TaskKind::generation;
    case FidelityMetricKind::aopc: return true;
  }
  return false;
}

}  // namespace detail

// The cross-model fidelity protocol: every model is both a source of proxy
// explanations (rows) and a target to be explained (columns). For each
// instance one shared perturbation set is drawn; each row is fitted from
// its model's outputs on that set and evaluated against every column's
// outputs on the very same masks. Diagonal cells are the oracle
// explanations. Cells also report fidelity relative to their column's
// diagonal and the variance of the target responses over the neighborhood.
inline FidelityMatrix fidelity_matrix(const std::vector<ModelSpec>& models,
                                      const std::vector<Instance>& instances, ModelClient& client,
                                      const MatrixOptions& opts) {
  if (models.empty()) raise(Errc::invalid_argument, "need at least one model");
  if (instances.empty()) raise(Errc::no_samples, "need at least one instance");
  for (const auto& inst : instances)
    if (!detail::metric_supported(opts.metric, inst.task.kind))
      raise(Errc::config, "metric " + std::string(to_string(opts.metric)) +
                              " is not defined for task kind " +
                              std::string(to_string(inst.task.kind)));

  const std::size_t m = models.size();
  FidelityMatrix matrix;
  matrix.metric = opts.metric;
  matrix.filtered = opts.filtered;
  matrix.fresh_draw = opts.fresh_draw;
  for (const auto& spec : models) matrix.model_ids.push_back(spec.model_id);
  matrix.cells.assign(m, std::vector<MatrixCell>(m));

  struct Accum {
    double sum = 0.0;
    double variance_sum = 0.0;
    std::size_t count = 0;
    std::string error;
  };
  std::vector<std::vector<Accum>> accum(m, std::vector<Accum>(m));

  ExplainOptions ex = opts.explain;
  if (opts.metric == FidelityMetricKind::accuracy) ex.choice_one_vs_rest = true;

  for (const auto& instance : instances) {
    // One shared perturbation set per instance; every model consumes it.
    std::vector<detail::PerModelView> views;
    views.reserve(m);
    bool instance_failed = false;
    std::string instance_error;
    std::vector<Mask> eval_masks;
    for (std::size_t r = 0; r < m; ++r) {
      try {
        detail::PerModelView view;
        view.explained = explain_instance(instance, models[r], client, ex);
        if (opts.fresh_draw) {
          if (eval_masks.empty())
            eval_masks = sample_masks(view.explained.seg->size(), ex.n_samples,
                                      ex.effective_strategy(),
                                      derive_seed(ex.seed, "eval-masks", fnv1a64(instance.id)));
          view.eval = collect_responses(instance, models[r], *view.explained.seg, eval_masks,
                                        client, ex);
        } else {
          view.eval = view.explained.responses;
        }
        views.push_back(std::move(view));
      } catch (const Error& e) {
        instance_failed = true;
        instance_error = e.what();
        break;
      }
    }
    if (instance_failed) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < m; ++c)
          if (accum[r][c].error.empty()) accum[r][c].error = instance_error;
      continue;
    }

    const std::vector<Mask>& masks_for_eval =
        opts.fresh_draw ? eval_masks : views[0].explained.masks;

    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < m; ++c) {
        if (opts.filtered &&
            views[r].eval.anchor_label != views[c].eval.anchor_label)
          continue;
        try {
          double value = 0.0;
          const ResponseSet& target = views[c].eval;
          switch (opts.metric) {
            case FidelityMetricKind::accuracy: {
              if (instance.task.kind == TaskKind::multiple_choice) {
                value = surrogate_accuracy_argmax(views[r].explained.per_label,
                                                  instance.task.label_set, masks_for_eval,
                                                  target.labels);
              } else {
                const double cut = classification_threshold(opts.coding);
                std::size_t agree = 0;
                for (std::size_t i = 0; i < masks_for_eval.size(); ++i) {
                  const bool predicted =
                      predict_surrogate(views[r].explained.attribution, masks_for_eval[i]) >= cut;
                  if (!target.ok[i]) continue;  // unparseable target counts as disagreement
                  const bool actual = target.y[i] >= cut;
                  if (predicted == actual) ++agree;
                }
                value = static_cast<double>(agree) /
                        static_cast<double>(masks_for_eval.size());
              }
              break;
            }
            case FidelityMetricKind::mse: {
              double se = 0.0;
              std::size_t cnt = 0;
              for (std::size_t i = 0; i < masks_for_eval.size(); ++i) {
                if (!target.ok[i]) continue;
                const double diff =
                    predict_surrogate(views[r].explained.attribution, masks_for_eval[i]) -
                    target.y[i];
                se += diff * diff;
                ++cnt;
              }
              if (cnt == 0) raise(Errc::no_samples, "no parseable target samples");
              value = se / static_cast<double>(cnt);
              break;
            }
            case FidelityMetricKind::aopc: {
              value = aopc(views[r].explained.attribution, *views[r].explained.seg, instance,
                           models[c], client, ex);
              break;
            }
          }
          accum[r][c].sum += value;
          accum[r][c].variance_sum += target.variance();
          accum[r][c].count += 1;
        } catch (const Error& e) {
          if (accum[r][c].error.empty()) accum[r][c].error = e.what();
        }
      }
    }
  }

  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      MatrixCell& cell = matrix.cells[r][c];
      cell.report.proxy_model_id = models[r].model_id;
      cell.report.target_model_id = models[c].model_id;
      cell.report.metric = opts.metric;
      cell.report.filtered = opts.filtered;
      cell.report.fresh_draw = opts.fresh_draw;
      const Accum& a = accum[r][c];
      if (a.count == 0) {
        cell.absent = true;
        cell.error = a.error.empty() ? "no instances after filtering" : a.error;
        continue;
      }
      cell.report.value = a.sum / static_cast<double>(a.count);
      cell.report.n_instances = a.count;
      cell.target_variance = a.variance_sum / static_cast<double>(a.count);
    }
  }
  for (std::size_t c = 0; c < m; ++c) {
    if (matrix.cells[c][c].absent) continue;
    const double diag = matrix.cells[c][c].report.value;
    if (diag == 0.0) continue;
    for (std::size_t r = 0; r < m; ++r)
      if (!matrix.cells[r][c].absent)
        matrix.cells[r][c].relative = matrix.cells[r][c].report.value / diag;
  }
  return matrix;
}

}  // namespace proxex
