#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxex/errors.hpp"
#include "proxex/hash.hpp"

namespace proxex {

using json = nlohmann::json;

// Decoding parameters sent with every query. The canonical form is part of
// the cache key, so field order and formatting must be stable.
struct DecodingParams {
  double temperature = 0.0;
  int max_output_tokens = 16;
  bool want_logprobs = false;

  std::string canonical() const {
    json j;
    j["logprobs"] = want_logprobs;
    j["max_output_tokens"] = max_output_tokens;
    j["temperature"] = temperature;
    return j.dump();
  }

  static DecodingParams from_canonical(const std::string& s) {
    const json j = json::parse(s);
    DecodingParams p;
    p.want_logprobs = j.at("logprobs").get<bool>();
    p.max_output_tokens = j.at("max_output_tokens").get<int>();
    p.temperature = j.at("temperature").get<double>();
    return p;
  }

  bool operator==(const DecodingParams&) const = default;
};

// Registry entry for one model. `endpoint` is either an OpenAI-compatible
// base URL or "mock:<oracle-name>". Prices are USD per million tokens;
// absent prices mean the model is free (mock/local) unless a priced
// estimate is explicitly requested.
struct ModelSpec {
  std::string model_id;
  std::string endpoint;
  std::optional<double> price_in;
  std::optional<double> price_out;
  bool supports_logprobs = false;
  std::string api_key_env = "OPENAI_API_KEY";

  bool is_mock() const { return endpoint.rfind("mock:", 0) == 0; }
  std::string mock_name() const { return is_mock() ? endpoint.substr(5) : std::string(); }
};

struct ModelOutput {
  std::string text;
  std::optional<std::string> label;
  std::optional<double> prob;  // probability of the returned label, in [0,1]
  long tokens_in = 0;
  long tokens_out = 0;
};

// Stable key for one (model, prompt, params) query.
inline std::string prompt_key_hash(const std::string& prompt, const DecodingParams& params) {
  const std::string canon = params.canonical();
  std::uint64_t h = fnv1a64(prompt);
  h = fnv1a64(canon, h ^ 0x1f);
  return hex64(h);
}

// Linear API pricing. Mock and price-less models cost 0 unless `strict`
// demands a priced answer.
inline double estimate_cost(long tokens_in, long tokens_out, const ModelSpec& model,
                            bool strict = false) {
  if (tokens_in < 0 || tokens_out < 0) raise(Errc::invalid_argument, "token counts must be >= 0");
  if (model.is_mock()) return 0.0;
  if (!model.price_in.has_value() || !model.price_out.has_value()) {
    if (strict) raise(Errc::missing_price, "no price configured for model " + model.model_id);
    return 0.0;
  }
  return static_cast<double>(tokens_in) / 1e6 * *model.price_in +
         static_cast<double>(tokens_out) / 1e6 * *model.price_out;
}

// Per-model token and query accumulators with a derived USD total.
// Thread-safe; prices are captured at record time so the total can be
// reproduced from the persisted sample records alone.
class CostLedger {
 public:
  struct Entry {
    long tokens_in = 0;
    long tokens_out = 0;
    long queries = 0;
    std::optional<double> price_in;
    std::optional<double> price_out;
  };

  void record(const ModelSpec& model, long tokens_in, long tokens_out) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& e = entries_[model.model_id];
    e.tokens_in += tokens_in;
    e.tokens_out += tokens_out;
    e.queries += 1;
    if (!model.is_mock()) {
      e.price_in = model.price_in;
      e.price_out = model.price_out;
    }
  }

  double total_usd() const {
    std::lock_guard<std::mutex> lock(mu_);
    double usd = 0.0;
    for (const auto& [id, e] : entries_) {
      if (e.price_in) usd += static_cast<double>(e.tokens_in) / 1e6 * *e.price_in;
      if (e.price_out) usd += static_cast<double>(e.tokens_out) / 1e6 * *e.price_out;
    }
    return usd;
  }

  long total_queries() const {
    std::lock_guard<std::mutex> lock(mu_);
    long q = 0;
    for (const auto& [id, e] : entries_) q += e.queries;
    return q;
  }

  std::map<std::string, Entry> snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_;
  }

  json to_json() const {
    json per_model = json::object();
    double usd = 0.0;
    for (const auto& [id, e] : snapshot()) {
      double model_usd = 0.0;
      if (e.price_in) model_usd += static_cast<double>(e.tokens_in) / 1e6 * *e.price_in;
      if (e.price_out) model_usd += static_cast<double>(e.tokens_out) / 1e6 * *e.price_out;
      per_model[id] = {{"tokens_in", e.tokens_in},
                       {"tokens_out", e.tokens_out},
                       {"queries", e.queries},
                       {"usd", model_usd}};
      usd += model_usd;
    }
    return json{{"per_model", per_model}, {"total_usd", usd}};
  }

  void reset() {
    std::lock_guard<std::mutex> lock(mu_);
    entries_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
};

}  // namespace proxex
