#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxex/errors.hpp"
#include "proxex/explain.hpp"
#include "proxex/fidelity.hpp"
#include "proxex/mocks.hpp"
#include "proxex/model.hpp"
#include "proxex/tasks.hpp"

namespace proxex {

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::config, "cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) raise(Errc::config, "invalid JSON in " + path);
  return j;
}

// Model registry: priced HTTP endpoints and named mock oracles side by side.
// Mock entries carry their oracle definition inline and register themselves.
//
//   {"models": [
//     {"model_id": "gpt-4o", "endpoint": "https://api.openai.com/v1",
//      "price_in": 2.50, "price_out": 10.00, "supports_logprobs": true,
//      "api_key_env": "OPENAI_API_KEY"},
//     {"model_id": "sent-base", "mock": {"type": "linear-sentiment", ...}}
//   ]}
class ModelRegistry {
 public:
  MockRegistry& mocks() { return mocks_; }
  const std::vector<ModelSpec>& models() const { return models_; }

  const ModelSpec& find(const std::string& model_id) const {
    for (const auto& m : models_)
      if (m.model_id == model_id) return m;
    raise(Errc::config, "model '" + model_id + "' is not in the registry");
  }

  void add(ModelSpec spec) { models_.push_back(std::move(spec)); }

  static std::unique_ptr<ModelRegistry> from_file(const std::string& path) {
    const json j = load_json_file(path);
    if (!j.is_object() || !j.contains("models") || !j.at("models").is_array())
      raise(Errc::config, path + ": registry must contain a 'models' array");
    auto reg = std::make_unique<ModelRegistry>();
    for (const auto& entry : j.at("models")) {
      if (!entry.contains("model_id"))
        raise(Errc::config, path + ": every model needs a model_id");
      const std::string id = entry.at("model_id").get<std::string>();
      if (entry.contains("mock")) {
        reg->models_.push_back(reg->mocks_.register_mock(id, entry.at("mock")));
        continue;
      }
      ModelSpec spec;
      spec.model_id = id;
      if (!entry.contains("endpoint"))
        raise(Errc::config, path + ": model " + id + " needs an endpoint or a mock definition");
      spec.endpoint = entry.at("endpoint").get<std::string>();
      if (entry.contains("price_in") && !entry.at("price_in").is_null())
        spec.price_in = entry.at("price_in").get<double>();
      if (entry.contains("price_out") && !entry.at("price_out").is_null())
        spec.price_out = entry.at("price_out").get<double>();
      if (spec.price_in && *spec.price_in < 0)
        raise(Errc::config, path + ": negative price for " + id);
      if (spec.price_out && *spec.price_out < 0)
        raise(Errc::config, path + ": negative price for " + id);
      spec.supports_logprobs = entry.value("supports_logprobs", false);
      spec.api_key_env = entry.value("api_key_env", std::string("OPENAI_API_KEY"));
      reg->models_.push_back(std::move(spec));
    }
    return reg;
  }

 private:
  std::vector<ModelSpec> models_;
  MockRegistry mocks_;
};

// One loaded evaluation task: instances bound to prompts plus, for
// multiple-choice, the shared in-context example block.
struct TaskBundle {
  std::string dataset_id;
  TaskKind kind = TaskKind::sentiment;
  std::vector<Instance> instances;
  TaskSpec icl_task;  // carries the shared examples for compression
  GenerationScorer scorer = GenerationScorer::token_f1;
  std::string embed_model_id;
};

// Task file shapes:
//   {"kind": "sentiment", "format": "sst2-tsv", "path": "data/x.tsv", ...}
//   {"kind": "sentiment", "format": "inline", "instances": [{"id","text","gold"}]}
//   {"kind": "multiple-choice", "format": "mmlu-csv", "path": ..., "icl_count": 5}
//   {"kind": "multiple-choice", "format": "inline", "examples": [...],
//    "questions": [{"question","options","answer"}]}
//   {"kind": "generation", "format": "nq-jsonl", "path": ..., "scorer": "token-f1"}
inline TaskBundle load_task_bundle(const std::string& path) {
  const json j = load_json_file(path);
  TaskBundle bundle;
  bundle.kind = task_kind_from_string(j.value("kind", std::string("sentiment")));
  bundle.dataset_id = j.value("dataset_id", std::string("dataset"));
  const std::string format = j.value("format", std::string("inline"));
  const std::string templ = j.value("prompt_template", std::string());
  const std::string delimiter = j.value("icl_delimiter", std::string("\n\n"));
  const std::size_t limit = j.value("limit", std::size_t{0});
  bundle.scorer = generation_scorer_from_string(j.value("scorer", std::string("token-f1")));
  bundle.embed_model_id = j.value("embed_model", std::string());

  auto truncated = [&](std::size_t total) {
    return limit > 0 ? std::min(limit, total) : total;
  };

  switch (bundle.kind) {
    case TaskKind::sentiment: {
      if (format == "sst2-tsv") {
        const auto rows = read_sst2_tsv(j.at("path").get<std::string>());
        for (std::size_t i = 0; i < truncated(rows.size()); ++i) {
          Instance inst;
          inst.id = bundle.dataset_id + "-" + std::to_string(i);
          inst.text = rows[i].sentence;
          inst.gold = rows[i].label == 1 ? "positive" : "negative";
          inst.task = make_sentiment_task(templ);
          bundle.instances.push_back(std::move(inst));
        }
      } else if (format == "inline") {
        for (const auto& e : j.at("instances")) {
          Instance inst;
          inst.id = e.at("id").get<std::string>();
          inst.text = e.at("text").get<std::string>();
          inst.gold = e.value("gold", std::string());
          inst.task = make_sentiment_task(templ);
          bundle.instances.push_back(std::move(inst));
          if (limit > 0 && bundle.instances.size() >= limit) break;
        }
      } else {
        raise(Errc::config, "unsupported sentiment format '" + format + "'");
      }
      break;
    }
    case TaskKind::multiple_choice: {
      std::vector<std::string> examples;
      std::vector<MmluRow> questions;
      if (format == "mmlu-csv") {
        const auto rows = read_mmlu_csv(j.at("path").get<std::string>());
        const std::size_t icl_count = j.value("icl_count", std::size_t{5});
        if (rows.size() <= icl_count)
          raise(Errc::config, "dataset too small for " + std::to_string(icl_count) +
                                  " in-context examples");
        for (std::size_t i = 0; i < icl_count; ++i)
          examples.push_back(format_choice_example(rows[i]));
        questions.assign(rows.begin() + static_cast<std::ptrdiff_t>(icl_count), rows.end());
      } else if (format == "inline") {
        for (const auto& e : j.at("examples")) examples.push_back(e.get<std::string>());
        for (const auto& q : j.at("questions")) {
          MmluRow row;
          row.question = q.at("question").get<std::string>();
          for (const auto& o : q.at("options")) row.options.push_back(o.get<std::string>());
          row.answer = q.at("answer").get<std::string>();
          questions.push_back(std::move(row));
        }
      } else {
        raise(Errc::config, "unsupported multiple-choice format '" + format + "'");
      }
      bundle.icl_task = make_choice_task(examples, "", {}, delimiter);
      bundle.icl_task.label_set = {"A", "B", "C", "D"};
      for (std::size_t i = 0; i < truncated(questions.size()); ++i) {
        Instance inst;
        inst.id = bundle.dataset_id + "-q" + std::to_string(i);
        inst.task = make_choice_task(examples, questions[i].question, questions[i].options,
                                     delimiter);
        inst.text = icl_region(inst.task);
        inst.gold = questions[i].answer;
        bundle.instances.push_back(std::move(inst));
      }
      break;
    }
    case TaskKind::generation: {
      std::vector<NqRow> rows;
      if (format == "nq-jsonl") {
        rows = read_nq_jsonl(j.at("path").get<std::string>());
      } else if (format == "inline") {
        for (const auto& e : j.at("instances"))
          rows.push_back({e.at("text").get<std::string>(), e.at("gold").get<std::string>()});
      } else {
        raise(Errc::config, "unsupported generation format '" + format + "'");
      }
      for (std::size_t i = 0; i < truncated(rows.size()); ++i) {
        Instance inst;
        inst.id = bundle.dataset_id + "-g" + std::to_string(i);
        inst.text = rows[i].question;
        inst.gold = rows[i].answer;
        inst.task = make_generation_task(rows[i].answer, templ);
        bundle.instances.push_back(std::move(inst));
      }
      break;
    }
  }
  if (bundle.instances.empty()) raise(Errc::config, path + ": task has no instances");
  return bundle;
}

// Batch-run configuration. Loaded from JSON, overridable by CLI flags.
struct RunConfig {
  std::string task_path;
  std::string registry_path;
  AttributionMethod method = AttributionMethod::lime;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  SegmentationMode segmentation = SegmentationMode::word;
  std::string store_path;
  bool replay_only = false;
  int max_inflight = 1;
  std::string out_dir = "out";
  double ridge_lambda = 1.0;
  double kernel_width = 25.0;
  double threshold_factor = 0.9;
  bool store_prompts = false;
  DecodingParams decoding;

  // Command parameters with config-file fallbacks.
  std::string proxy_model;
  std::string target_model;
  std::vector<std::string> matrix_models;
  FidelityMetricKind metric = FidelityMetricKind::accuracy;
  bool filtered = false;
  int repeats = 15;
  std::size_t attr_instances = 5;

  static RunConfig from_file(const std::string& path) {
    const json j = load_json_file(path);
    RunConfig c;
    c.task_path = j.value("task", std::string());
    c.registry_path = j.value("registry", std::string());
    if (j.contains("method"))
      c.method = attribution_method_from_string(j.at("method").get<std::string>());
    c.n_samples = j.value("samples", std::size_t{1000});
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("segmentation"))
      c.segmentation = segmentation_mode_from_string(j.at("segmentation").get<std::string>());
    c.store_path = j.value("store", std::string());
    c.replay_only = j.value("replay_only", false);
    c.max_inflight = j.value("max_inflight", 1);
    c.out_dir = j.value("out", std::string("out"));
    c.ridge_lambda = j.value("ridge_lambda", 1.0);
    c.kernel_width = j.value("kernel_width", 25.0);
    c.threshold_factor = j.value("threshold_factor", 0.9);
    c.store_prompts = j.value("store_prompts", false);
    if (j.contains("decoding")) {
      const json& d = j.at("decoding");
      c.decoding.temperature = d.value("temperature", 0.0);
      c.decoding.max_output_tokens = d.value("max_output_tokens", 16);
      c.decoding.want_logprobs = d.value("logprobs", false);
    }
    c.proxy_model = j.value("proxy", std::string());
    c.target_model = j.value("target", std::string());
    if (j.contains("models"))
      for (const auto& m : j.at("models")) c.matrix_models.push_back(m.get<std::string>());
    if (j.contains("metric"))
      c.metric = fidelity_metric_from_string(j.at("metric").get<std::string>());
    c.filtered = j.value("filtered", false);
    c.repeats = j.value("repeats", 15);
    c.attr_instances = j.value("attr_instances", std::size_t{5});
    if (c.n_samples < 1) raise(Errc::config, "samples must be >= 1");
    return c;
  }

  ExplainOptions explain_options(const TaskBundle& bundle,
                                 const ModelRegistry& registry) const {
    ExplainOptions opts;
    opts.method = method;
    opts.n_samples = n_samples;
    opts.seed = seed;
    opts.segmentation = segmentation;
    opts.ridge_lambda = ridge_lambda;
    opts.kernel_width = kernel_width;
    opts.scorer = bundle.scorer;
    opts.decoding = decoding;
    opts.dataset_id = bundle.dataset_id;
    if (!bundle.embed_model_id.empty()) opts.embed_model = registry.find(bundle.embed_model_id);
    return opts;
  }

  // The provenance block embedded in every report. Runtime and transport
  // fields (store path, replay flag, concurrency, output directory) are
  // excluded so a replay reproduces report files bit for bit.
  json provenance() const {
    json j;
    j["method"] = std::string(to_string(method));
    j["samples"] = n_samples;
    j["seed"] = seed;
    j["segmentation"] = std::string(to_string(segmentation));
    j["ridge_lambda"] = ridge_lambda;
    j["kernel_width"] = kernel_width;
    j["threshold_factor"] = threshold_factor;
    j["decoding"] = json::parse(decoding.canonical());
    return j;
  }
};

}  // namespace proxex
