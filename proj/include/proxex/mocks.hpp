#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "proxex/errors.hpp"
#include "proxex/hash.hpp"
#include "proxex/model.hpp"
#include "proxex/textutil.hpp"

namespace proxex {

// Desk-scale stand-ins for LLM endpoints. Each oracle is a deterministic
// function of the prompt, so runs against mocks replay exactly.
class MockOracle {
 public:
  virtual ~MockOracle() = default;
  virtual ModelOutput invoke(const std::string& prompt) = 0;
  virtual bool has_embeddings() const { return false; }
  virtual std::vector<double> embed(const std::string& /*text*/) {
    raise(Errc::scorer_unavailable, "oracle has no embedding support");
  }
};

class ConstantOracle : public MockOracle {
 public:
  explicit ConstantOracle(std::string output) : output_(std::move(output)) {}

  ModelOutput invoke(const std::string& prompt) override {
    ModelOutput out;
    out.text = output_;
    out.label = output_;
    out.prob = 1.0;
    out.tokens_in = approx_token_count(prompt);
    out.tokens_out = approx_token_count(output_);
    return out;
  }

 private:
  std::string output_;
};

// score = bias + sum of weights over the distinct words present in the
// prompt; p(positive) = logistic(score); label positive iff p >= 0.5.
class LinearSentimentOracle : public MockOracle {
 public:
  LinearSentimentOracle(std::map<std::string, double> weights, double bias)
      : weights_(std::move(weights)), bias_(bias) {}

  double score(const std::string& prompt) const {
    double s = bias_;
    const auto words = word_set(prompt);
    for (const auto& [word, w] : weights_)
      if (words.count(word)) s += w;
    return s;
  }

  ModelOutput invoke(const std::string& prompt) override {
    const double s = score(prompt);
    const double p_positive = 1.0 / (1.0 + std::exp(-s));
    ModelOutput out;
    const bool positive = p_positive >= 0.5;
    out.label = positive ? "positive" : "negative";
    out.text = *out.label;
    out.prob = positive ? p_positive : 1.0 - p_positive;
    out.tokens_in = approx_token_count(prompt);
    out.tokens_out = 1;
    return out;
  }

 private:
  std::map<std::string, double> weights_;
  double bias_;
};

// Answers as a function of which marker strings occur in the prompt: the
// presence pattern (one bit per marker) selects a table entry. Entries may
// carry a probability for the returned choice.
class ChoiceTableOracle : public MockOracle {
 public:
  struct Entry {
    std::string choice;
    double prob = 1.0;
  };

  ChoiceTableOracle(std::vector<std::string> markers, std::map<std::string, Entry> table,
                    Entry fallback)
      : markers_(std::move(markers)), table_(std::move(table)), fallback_(std::move(fallback)) {}

  ModelOutput invoke(const std::string& prompt) override {
    std::string pattern(markers_.size(), '0');
    for (std::size_t i = 0; i < markers_.size(); ++i)
      if (prompt.find(markers_[i]) != std::string::npos) pattern[i] = '1';
    const auto it = table_.find(pattern);
    const Entry& e = it != table_.end() ? it->second : fallback_;
    ModelOutput out;
    out.text = e.choice;
    out.label = e.choice;
    out.prob = e.prob;
    out.tokens_in = approx_token_count(prompt);
    out.tokens_out = 1;
    return out;
  }

 private:
  std::vector<std::string> markers_;
  std::map<std::string, Entry> table_;
  Entry fallback_;
};

// Wraps a base oracle and flips its label on a deterministic flip_rate
// fraction of distinct prompts. Selection is by arrival order with an exact
// quota: among the first N distinct prompts exactly floor(N * rate) flip.
// Decisions are memoized per prompt, so repeated prompts answer identically.
class NoisyOracle : public MockOracle {
 public:
  NoisyOracle(std::shared_ptr<MockOracle> base, double flip_rate, std::uint64_t seed,
              std::vector<std::string> label_cycle)
      : base_(std::move(base)),
        flip_num_(static_cast<std::uint64_t>(std::llround(flip_rate * 1e6))),
        offset_(seed % kDen),
        label_cycle_(std::move(label_cycle)) {
    if (!(flip_rate >= 0.0 && flip_rate <= 1.0))
      raise(Errc::config, "flip rate must be in [0,1]");
    if (label_cycle_.size() < 2) raise(Errc::config, "noisy oracle needs >= 2 labels to flip");
  }

  ModelOutput invoke(const std::string& prompt) override {
    ModelOutput out = base_->invoke(prompt);
    if (!should_flip(prompt)) return out;
    const std::string base_label = out.label.value_or(out.text);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < label_cycle_.size(); ++i)
      if (label_cycle_[i] == base_label) pos = i;
    const std::string flipped = label_cycle_[(pos + 1) % label_cycle_.size()];
    out.label = flipped;
    out.text = flipped;
    return out;
  }

 private:
  static constexpr std::uint64_t kDen = 1000000;

  bool should_flip(const std::string& prompt) {
    const std::uint64_t key = fnv1a64(prompt);
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = decided_.find(key);
    if (it != decided_.end()) return it->second;
    const std::uint64_t i = ++arrivals_;
    const bool flip =
        (i + offset_) * flip_num_ / kDen > (i - 1 + offset_) * flip_num_ / kDen;
    decided_.emplace(key, flip);
    return flip;
  }

  std::shared_ptr<MockOracle> base_;
  std::uint64_t flip_num_;
  std::uint64_t offset_;
  std::vector<std::string> label_cycle_;
  std::mutex mu_;
  std::unordered_map<std::uint64_t, bool> decided_;
  std::uint64_t arrivals_ = 0;
};

// Bag-of-words embedding: each token hashes into one of `dims` buckets and
// the count vector is L2-normalized. Identical texts embed identically.
class HashEmbedOracle : public MockOracle {
 public:
  explicit HashEmbedOracle(std::size_t dims = 32) : dims_(dims) {
    if (dims_ == 0) raise(Errc::config, "embedding dims must be >= 1");
  }

  ModelOutput invoke(const std::string&) override {
    raise(Errc::protocol, "embedding oracle does not serve completions");
  }

  bool has_embeddings() const override { return true; }

  std::vector<double> embed(const std::string& text) override {
    std::vector<double> v(dims_, 0.0);
    for (const auto& t : whitespace_tokens(text)) {
      const std::string w = strip_punct(to_lower(t));
      if (w.empty()) continue;
      v[fnv1a64(w) % dims_] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    return v;
  }

 private:
  std::size_t dims_;
};

inline std::shared_ptr<MockOracle> build_mock_oracle(const json& def) {
  if (!def.is_object() || !def.contains("type"))
    raise(Errc::config, "mock definition must be an object with a 'type'");
  const std::string type = def.at("type").get<std::string>();
  if (type == "constant") return std::make_shared<ConstantOracle>(def.at("output").get<std::string>());
  if (type == "linear-sentiment") {
    std::map<std::string, double> weights;
    if (def.contains("weights"))
      for (const auto& [k, v] : def.at("weights").items()) weights[k] = v.get<double>();
    return std::make_shared<LinearSentimentOracle>(std::move(weights),
                                                   def.value("bias", 0.0));
  }
  if (type == "choice-table") {
    std::vector<std::string> markers;
    for (const auto& m : def.at("markers")) markers.push_back(m.get<std::string>());
    auto parse_entry = [](const json& e) {
      ChoiceTableOracle::Entry entry;
      entry.choice = e.at("choice").get<std::string>();
      entry.prob = e.value("prob", 1.0);
      return entry;
    };
    std::map<std::string, ChoiceTableOracle::Entry> table;
    if (def.contains("table"))
      for (const auto& [pattern, e] : def.at("table").items()) table[pattern] = parse_entry(e);
    ChoiceTableOracle::Entry fallback{"", 1.0};
    if (def.contains("default")) fallback = parse_entry(def.at("default"));
    return std::make_shared<ChoiceTableOracle>(std::move(markers), std::move(table), fallback);
  }
  if (type == "noisy") {
    auto base = build_mock_oracle(def.at("base"));
    std::vector<std::string> cycle{"positive", "negative"};
    if (def.contains("label_cycle")) {
      cycle.clear();
      for (const auto& l : def.at("label_cycle")) cycle.push_back(l.get<std::string>());
    }
    return std::make_shared<NoisyOracle>(std::move(base), def.at("flip_rate").get<double>(),
                                         def.value("seed", std::uint64_t{0}), std::move(cycle));
  }
  if (type == "hash-embed")
    return std::make_shared<HashEmbedOracle>(def.value("dims", std::size_t{32}));
  raise(Errc::config, "unknown mock oracle type '" + type + "'");
}

class MockRegistry {
 public:
  ModelSpec register_mock(const std::string& name, const json& definition) {
    auto oracle = build_mock_oracle(definition);
    {
      std::lock_guard<std::mutex> lock(mu_);
      oracles_[name] = std::move(oracle);
    }
    ModelSpec spec;
    spec.model_id = name;
    spec.endpoint = "mock:" + name;
    spec.supports_logprobs = true;
    return spec;
  }

  std::shared_ptr<MockOracle> find(const std::string& name) const {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = oracles_.find(name);
    if (it == oracles_.end()) raise(Errc::config, "unknown mock oracle '" + name + "'");
    return it->second;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<MockOracle>> oracles_;
};

}  // namespace proxex
