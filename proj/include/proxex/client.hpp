#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "proxex/errors.hpp"
#include "proxex/mocks.hpp"
#include "proxex/model.hpp"
#include "proxex/store.hpp"
#include "proxex/textutil.hpp"

namespace proxex {

// Retries transient transport failures only: connection errors, 5xx, 429
// and 408. Auth failures and other client errors are surfaced immediately.
struct RetryPolicy {
  int max_attempts = 3;
  int base_delay_ms = 200;
  int max_delay_ms = 5000;

  bool should_retry(int attempt, int status, bool network_error) const {
    if (attempt >= max_attempts) return false;
    if (network_error) return true;
    if (status >= 500 && status < 600) return true;
    return status == 429 || status == 408;
  }

  int delay_ms(int attempt) const {
    long d = static_cast<long>(base_delay_ms) << (attempt - 1);
    return static_cast<int>(std::min<long>(d, max_delay_ms));
  }
};

class Semaphore {
 public:
  explicit Semaphore(int count) : count_(count) {}

  void acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return count_ > 0; });
    --count_;
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++count_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int count_;
};

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(Semaphore& s) : s_(s) { s_.acquire(); }
  ~SemaphoreGuard() { s_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  Semaphore& s_;
};

// Provenance attached to cached queries so the persisted record carries the
// dataset, instance and mask it belongs to.
struct QueryMeta {
  std::string dataset_id;
  std::string instance_id;
  std::string segmentation_mode;
  std::string mask_bits;
};

// Uniform access to mock oracles and OpenAI-compatible HTTP endpoints with
// response caching, retry handling and token accounting. Safe for
// concurrent callers; at most `max_inflight` requests are in flight per
// endpoint at any instant.
class ModelClient {
 public:
  explicit ModelClient(MockRegistry* mocks = nullptr, SampleStore* store = nullptr)
      : mocks_(mocks), store_(store) {}

  void set_retry(const RetryPolicy& p) { retry_ = p; }
  void set_max_inflight(int n) { max_inflight_ = n > 0 ? n : 1; }
  void set_replay_only(bool v) { replay_only_ = v; }
  void set_store_prompts(bool v) { store_prompts_ = v; }
  bool replay_only() const { return replay_only_; }

  CostLedger& ledger() { return ledger_; }
  const CostLedger& ledger() const { return ledger_; }
  // Usage represented by every record this client consumed, hit or miss.
  // Identical between a live run and its replay, unlike the live ledger.
  const CostLedger& consumed() const { return consumed_; }

  long cache_hits() const { return cache_hits_.load(); }
  long cache_misses() const { return cache_misses_.load(); }
  long live_queries() const { return live_queries_.load(); }

  // One live completion. Mock endpoints dispatch to their oracle; HTTP
  // endpoints run the retry loop. Token usage lands in the ledger.
  ModelOutput query(const ModelSpec& model, const std::string& prompt,
                    const DecodingParams& params) {
    ModelOutput out;
    if (model.is_mock()) {
      SemaphoreGuard guard(endpoint_semaphore(model.endpoint));
      out = mock_oracle(model)->invoke(prompt);
    } else {
      SemaphoreGuard guard(endpoint_semaphore(model.endpoint));
      out = http_completion(model, prompt, params);
    }
    ++live_queries_;
    ledger_.record(model, out.tokens_in, out.tokens_out);
    return out;
  }

  // Cache-backed query. Hits return the stored output without touching the
  // network or the ledger; misses go live and persist the record.
  ModelOutput cached_query(const ModelSpec& model, const std::string& prompt,
                           const DecodingParams& params, const QueryMeta& meta = {}) {
    const std::string key_hash = prompt_key_hash(prompt, params);
    const std::string canon = params.canonical();
    if (store_) {
      if (auto hit = store_->lookup(model.model_id, key_hash, canon)) {
        ++cache_hits_;
        consumed_.record(model, hit->tokens_in, hit->tokens_out);
        return hit->to_output();
      }
    }
    if (replay_only_)
      raise(Errc::replay_miss, "no stored sample for " + model.model_id + "/" + key_hash);
    ++cache_misses_;
    ModelOutput out = query(model, prompt, params);
    consumed_.record(model, out.tokens_in, out.tokens_out);
    if (store_) {
      SampleRecord rec;
      rec.model_id = model.model_id;
      rec.dataset_id = meta.dataset_id;
      rec.instance_id = meta.instance_id;
      rec.segmentation_mode = meta.segmentation_mode;
      rec.mask_bits = meta.mask_bits;
      rec.prompt_hash = key_hash;
      if (store_prompts_) rec.prompt_text = prompt;
      rec.output_text = out.text;
      rec.label = out.label;
      rec.prob = out.prob;
      rec.tokens_in = out.tokens_in;
      rec.tokens_out = out.tokens_out;
      rec.decoding_params = canon;
      store_->append(std::move(rec));
    }
    return out;
  }

  // Embedding vector for `text`, cached in the sample store as a record
  // whose output_text is the JSON vector.
  std::vector<double> cached_embed(const ModelSpec& model, const std::string& text,
                                   const QueryMeta& meta = {}) {
    static const std::string canon = "{\"op\":\"embeddings\"}";
    const std::string key_hash = hex64(fnv1a64(canon, fnv1a64(text) ^ 0x1f));
    if (store_) {
      if (auto hit = store_->lookup(model.model_id, key_hash, canon)) {
        ++cache_hits_;
        consumed_.record(model, hit->tokens_in, hit->tokens_out);
        return json::parse(hit->output_text).get<std::vector<double>>();
      }
    }
    if (replay_only_)
      raise(Errc::replay_miss, "no stored embedding for " + model.model_id + "/" + key_hash);
    ++cache_misses_;
    std::vector<double> vec = embed(model, text);
    const long tokens = approx_token_count(text);
    consumed_.record(model, tokens, 0);
    if (store_) {
      SampleRecord rec;
      rec.model_id = model.model_id;
      rec.dataset_id = meta.dataset_id;
      rec.instance_id = meta.instance_id;
      rec.segmentation_mode = meta.segmentation_mode;
      rec.prompt_hash = key_hash;
      if (store_prompts_) rec.prompt_text = text;
      rec.output_text = json(vec).dump();
      rec.tokens_in = tokens;
      rec.decoding_params = canon;
      store_->append(std::move(rec));
    }
    return vec;
  }

  std::vector<double> embed(const ModelSpec& model, const std::string& text) {
    if (model.is_mock()) {
      SemaphoreGuard guard(endpoint_semaphore(model.endpoint));
      auto oracle = mock_oracle(model);
      if (!oracle->has_embeddings())
        raise(Errc::scorer_unavailable, "mock " + model.model_id + " has no embeddings");
      std::vector<double> v = oracle->embed(text);
      ++live_queries_;
      ledger_.record(model, approx_token_count(text), 0);
      return v;
    }
    SemaphoreGuard guard(endpoint_semaphore(model.endpoint));
    std::vector<double> v = http_embedding(model, text);
    ++live_queries_;
    ledger_.record(model, approx_token_count(text), 0);
    return v;
  }

 private:
  std::shared_ptr<MockOracle> mock_oracle(const ModelSpec& model) {
    if (!mocks_) raise(Errc::config, "no mock registry configured");
    return mocks_->find(model.mock_name());
  }

  Semaphore& endpoint_semaphore(const std::string& endpoint) {
    std::lock_guard<std::mutex> lock(sem_mu_);
    auto it = semaphores_.find(endpoint);
    if (it == semaphores_.end())
      it = semaphores_.emplace(endpoint, std::make_unique<Semaphore>(max_inflight_)).first;
    return *it->second;
  }

  struct EndpointParts {
    std::string base;    // scheme://host[:port]
    std::string prefix;  // path prefix, no trailing slash
  };

  static EndpointParts split_endpoint(const std::string& endpoint) {
    const std::size_t scheme = endpoint.find("://");
    if (scheme == std::string::npos)
      raise(Errc::config, "endpoint must be a URL or mock:<name>: " + endpoint);
    const std::size_t path = endpoint.find('/', scheme + 3);
    EndpointParts parts;
    if (path == std::string::npos) {
      parts.base = endpoint;
    } else {
      parts.base = endpoint.substr(0, path);
      parts.prefix = endpoint.substr(path);
      while (!parts.prefix.empty() && parts.prefix.back() == '/') parts.prefix.pop_back();
    }
    return parts;
  }

  httplib::Headers auth_headers(const ModelSpec& model) const {
    httplib::Headers headers;
    if (!model.api_key_env.empty()) {
      if (const char* key = std::getenv(model.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    return headers;
  }

  json post_with_retry(const ModelSpec& model, const std::string& path, const json& body) {
    const EndpointParts parts = split_endpoint(model.endpoint);
    const std::string payload = body.dump();
    int last_status = 0;
    std::string last_error = "connection failure";
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
      httplib::Client cli(parts.base);
      cli.set_connection_timeout(10, 0);
      cli.set_read_timeout(120, 0);
      auto res = cli.Post(parts.prefix + path, auth_headers(model), payload, "application/json");
      const bool network_error = !res;
      if (!network_error) {
        last_status = res->status;
        if (res->status == 401 || res->status == 403)
          raise(Errc::auth, "endpoint " + model.endpoint + " returned HTTP " +
                                std::to_string(res->status));
        if (res->status == 200) {
          json j = json::parse(res->body, nullptr, false);
          if (j.is_discarded())
            raise(Errc::protocol, "non-JSON response from " + model.endpoint);
          return j;
        }
        if (!retry_.should_retry(attempt, res->status, false)) {
          if (res->status >= 400 && res->status < 500)
            raise(Errc::protocol, "endpoint " + model.endpoint + " returned HTTP " +
                                      std::to_string(res->status));
          break;
        }
      } else if (!retry_.should_retry(attempt, 0, true)) {
        break;
      }
      if (attempt < retry_.max_attempts)
        std::this_thread::sleep_for(std::chrono::milliseconds(retry_.delay_ms(attempt)));
    }
    raise(Errc::transport, "exhausted " + std::to_string(retry_.max_attempts) + " attempts on " +
                               model.endpoint +
                               (last_status ? " (last HTTP " + std::to_string(last_status) + ")"
                                            : " (" + last_error + ")"));
  }

  ModelOutput http_completion(const ModelSpec& model, const std::string& prompt,
                              const DecodingParams& params) {
    json body{{"model", model.model_id},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
              {"temperature", params.temperature},
              {"max_tokens", params.max_output_tokens}};
    if (model.supports_logprobs && params.want_logprobs) body["logprobs"] = true;
    const json j = post_with_retry(model, "/chat/completions", body);
    ModelOutput out;
    try {
      const json& choice = j.at("choices").at(0);
      out.text = choice.at("message").at("content").get<std::string>();
      if (choice.contains("logprobs") && choice.at("logprobs").is_object()) {
        const json& content = choice.at("logprobs").value("content", json::array());
        if (!content.empty() && content.at(0).contains("logprob")) {
          const double lp = content.at(0).at("logprob").get<double>();
          out.prob = std::min(1.0, std::exp(lp));
        }
      }
      if (j.contains("usage")) {
        out.tokens_in = j.at("usage").value("prompt_tokens", 0L);
        out.tokens_out = j.at("usage").value("completion_tokens", 0L);
      } else {
        out.tokens_in = approx_token_count(prompt);
        out.tokens_out = approx_token_count(out.text);
      }
    } catch (const json::exception& e) {
      raise(Errc::protocol,
            "malformed completion response from " + model.endpoint + ": " + e.what());
    }
    return out;
  }

  std::vector<double> http_embedding(const ModelSpec& model, const std::string& text) {
    const json body{{"model", model.model_id}, {"input", json::array({text})}};
    json j;
    try {
      j = post_with_retry(model, "/embeddings", body);
    } catch (const Error& e) {
      if (e.code() == Errc::transport)
        raise(Errc::scorer_unavailable, std::string("embeddings endpoint unavailable: ") + e.what());
      throw;
    }
    try {
      return j.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      raise(Errc::protocol,
            "malformed embedding response from " + model.endpoint + ": " + e.what());
    }
  }

  MockRegistry* mocks_ = nullptr;
  SampleStore* store_ = nullptr;
  RetryPolicy retry_;
  int max_inflight_ = 1;
  bool replay_only_ = false;
  bool store_prompts_ = false;
  CostLedger ledger_;
  CostLedger consumed_;
  std::atomic<long> cache_hits_{0};
  std::atomic<long> cache_misses_{0};
  std::atomic<long> live_queries_{0};
  std::mutex sem_mu_;
  std::map<std::string, std::unique_ptr<Semaphore>> semaphores_;
};

// Runs fn(0..count-1) on up to `workers` threads. The first exception wins
// and is rethrown after all workers join.
inline void parallel_for(std::size_t count, int workers,
                         const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  if (workers <= 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), count));
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace proxex
