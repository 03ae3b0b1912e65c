#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxex/errors.hpp"
#include "proxex/model.hpp"

namespace proxex {

inline constexpr int kSampleRecordVersion = 1;

// One persisted model observation. The triple (model_id, prompt_hash,
// decoding_params) is the unique key within a store; prompt_hash already
// covers the prompt text and the decoding parameters.
struct SampleRecord {
  int record_version = kSampleRecordVersion;
  std::string model_id;
  std::string dataset_id;
  std::string instance_id;
  std::string segmentation_mode;
  std::string mask_bits;
  std::string prompt_hash;
  std::optional<std::string> prompt_text;  // persisted only when the store keeps prompts
  std::string output_text;
  std::optional<std::string> label;
  std::optional<double> prob;
  long tokens_in = 0;
  long tokens_out = 0;
  std::string decoding_params;
  std::string timestamp;

  std::string key() const {
    return model_id + '\x1f' + prompt_hash + '\x1f' + decoding_params;
  }

  json to_json() const {
    json j;
    j["record_version"] = record_version;
    j["model_id"] = model_id;
    j["dataset_id"] = dataset_id;
    j["instance_id"] = instance_id;
    j["segmentation_mode"] = segmentation_mode;
    j["mask"] = mask_bits;
    j["prompt_hash"] = prompt_hash;
    if (prompt_text) j["prompt"] = *prompt_text;
    j["output_text"] = output_text;
    if (label) j["label"] = *label;
    if (prob) j["prob"] = *prob;
    j["tokens_in"] = tokens_in;
    j["tokens_out"] = tokens_out;
    j["decoding_params"] = decoding_params;
    j["timestamp"] = timestamp;
    return j;
  }

  // Everything except the write-time timestamp; used for idempotent appends.
  std::string payload_fingerprint() const {
    json j = to_json();
    j.erase("timestamp");
    return j.dump();
  }

  ModelOutput to_output() const {
    ModelOutput out;
    out.text = output_text;
    out.label = label;
    out.prob = prob;
    out.tokens_in = tokens_in;
    out.tokens_out = tokens_out;
    return out;
  }
};

namespace detail {

inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline SampleRecord record_from_json(const json& j, long line_no) {
  auto fail = [&](const std::string& what) -> SampleRecord {
    raise(Errc::import_error, "line " + std::to_string(line_no) + ": " + what);
  };
  if (!j.is_object()) return fail("record must be a JSON object");
  SampleRecord r;
  try {
    r.record_version = j.at("record_version").get<int>();
    r.model_id = j.at("model_id").get<std::string>();
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.instance_id = j.at("instance_id").get<std::string>();
    r.segmentation_mode = j.at("segmentation_mode").get<std::string>();
    r.mask_bits = j.at("mask").get<std::string>();
    r.prompt_hash = j.at("prompt_hash").get<std::string>();
    if (j.contains("prompt")) r.prompt_text = j.at("prompt").get<std::string>();
    r.output_text = j.at("output_text").get<std::string>();
    if (j.contains("label")) r.label = j.at("label").get<std::string>();
    if (j.contains("prob")) r.prob = j.at("prob").get<double>();
    r.tokens_in = j.at("tokens_in").get<long>();
    r.tokens_out = j.at("tokens_out").get<long>();
    r.decoding_params = j.at("decoding_params").get<std::string>();
    r.timestamp = j.value("timestamp", std::string());
  } catch (const json::exception& e) {
    return fail(std::string("schema violation: ") + e.what());
  }
  for (char c : r.mask_bits)
    if (c != '0' && c != '1') return fail("mask must be a 0/1 bitstring");
  if (r.prob && (*r.prob < 0.0 || *r.prob > 1.0)) return fail("prob out of [0,1]");
  if (r.tokens_in < 0 || r.tokens_out < 0) return fail("negative token counts");
  return r;
}

}  // namespace detail

// Manifest accompanying a released sample set: declared record version, the
// model ids, dataset ids and segmentation modes the file may contain,
// optional expected record counts per (model, dataset), and an optional
// field-name map for releases whose JSON keys differ from the canonical
// schema (canonical name -> name used in the release file).
struct ReleaseManifest {
  int record_version = kSampleRecordVersion;
  std::vector<std::string> models;
  std::vector<std::string> datasets;
  std::vector<std::string> segmentation_modes;
  std::map<std::string, std::map<std::string, long>> record_counts;
  std::map<std::string, std::string> field_map;

  static ReleaseManifest from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::import_error, "cannot open manifest " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      raise(Errc::import_error, "manifest parse failure: " + std::string(e.what()));
    }
    ReleaseManifest m;
    m.record_version = j.value("record_version", kSampleRecordVersion);
    for (const auto& v : j.value("models", json::array())) m.models.push_back(v.get<std::string>());
    for (const auto& v : j.value("datasets", json::array()))
      m.datasets.push_back(v.get<std::string>());
    for (const auto& v : j.value("segmentation_modes", json::array()))
      m.segmentation_modes.push_back(v.get<std::string>());
    if (j.contains("record_counts"))
      for (const auto& [model, per_ds] : j.at("record_counts").items())
        for (const auto& [ds, count] : per_ds.items())
          m.record_counts[model][ds] = count.get<long>();
    if (j.contains("field_map"))
      for (const auto& [canonical, actual] : j.at("field_map").items())
        m.field_map[canonical] = actual.get<std::string>();
    return m;
  }
};

// Append-only JSONL store of SampleRecords; the cache behind cached_query
// and the replay source for offline recomputation. Single writer, any
// number of readers. Appends flush line by line.
class SampleStore {
 public:
  SampleStore() = default;

  // Loads an existing store (if the file exists). Corrupt lines are skipped
  // and counted, never guessed at. When two conflicting records share a key,
  // the lexicographically smallest payload wins so that the loaded state is
  // independent of line order.
  static SampleStore open(const std::string& path, bool writable = true) {
    SampleStore s;
    s.path_ = path;
    s.writable_ = writable;
    if (writable && !path.empty()) {
      const std::filesystem::path parent = std::filesystem::path(path).parent_path();
      if (!parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
      }
    }
    std::ifstream in(path);
    if (in) {
      std::string line;
      long line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
          ++s.corrupt_lines_;
          continue;
        }
        SampleRecord r;
        try {
          r = detail::record_from_json(j, line_no);
        } catch (const Error&) {
          ++s.corrupt_lines_;
          continue;
        }
        const std::string key = r.key();
        auto it = s.records_.find(key);
        if (it == s.records_.end()) {
          s.records_.emplace(key, std::move(r));
        } else if (it->second.payload_fingerprint() != r.payload_fingerprint()) {
          ++s.conflicting_lines_;
          if (r.payload_fingerprint() < it->second.payload_fingerprint()) it->second = std::move(r);
        }
      }
    }
    return s;
  }

  const std::string& path() const { return path_; }
  std::size_t size() const {
    std::lock_guard<std::mutex> lock(*mu_);
    return records_.size();
  }
  long corrupt_lines() const { return corrupt_lines_; }
  long conflicting_lines() const { return conflicting_lines_; }

  // Durable append. A duplicate key with an identical payload is a no-op;
  // a duplicate key with a differing payload is a conflict.
  void append(SampleRecord record) {
    if (record.record_version != kSampleRecordVersion)
      raise(Errc::conflict, "unsupported record_version " + std::to_string(record.record_version));
    if (record.timestamp.empty()) record.timestamp = detail::iso8601_now();
    std::lock_guard<std::mutex> lock(*mu_);
    const std::string key = record.key();
    const auto it = records_.find(key);
    if (it != records_.end()) {
      if (it->second.payload_fingerprint() != record.payload_fingerprint())
        raise(Errc::conflict, "key already stored with a different payload: " + record.prompt_hash);
      return;
    }
    if (!path_.empty() && writable_) {
      if (!appender_.is_open()) {
        appender_.open(path_, std::ios::app);
        if (!appender_) raise(Errc::cache, "cannot open store for append: " + path_);
      }
      appender_ << record.to_json().dump() << '\n';
      appender_.flush();
      if (!appender_) raise(Errc::cache, "write failure on store: " + path_);
    }
    records_.emplace(key, std::move(record));
  }

  // Exact-key retrieval. A miss is a value, not an error.
  std::optional<SampleRecord> lookup(const std::string& model_id, const std::string& prompt_hash,
                                     const std::string& decoding_params) const {
    std::lock_guard<std::mutex> lock(*mu_);
    const auto it =
        records_.find(model_id + '\x1f' + prompt_hash + '\x1f' + decoding_params);
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  // Record counts per (model_id, dataset_id).
  std::map<std::string, std::map<std::string, long>> counts() const {
    std::lock_guard<std::mutex> lock(*mu_);
    std::map<std::string, std::map<std::string, long>> out;
    for (const auto& [key, r] : records_) out[r.model_id][r.dataset_id] += 1;
    return out;
  }

  // Token totals per model, for store-derived cost accounting.
  std::map<std::string, std::pair<long, long>> token_totals() const {
    std::lock_guard<std::mutex> lock(*mu_);
    std::map<std::string, std::pair<long, long>> out;
    for (const auto& [key, r] : records_) {
      out[r.model_id].first += r.tokens_in;
      out[r.model_id].second += r.tokens_out;
    }
    return out;
  }

  std::vector<SampleRecord> all_records() const {
    std::lock_guard<std::mutex> lock(*mu_);
    std::vector<SampleRecord> out;
    out.reserve(records_.size());
    for (const auto& [key, r] : records_) out.push_back(r);
    return out;
  }

  // Strict import of a released sample file: every record must satisfy the
  // schema and match the manifest's version and declared ids. Any violation
  // aborts with the offending line number.
  static SampleStore import_release(const std::string& path, const ReleaseManifest& manifest) {
    std::ifstream in(path);
    if (!in) raise(Errc::import_error, "cannot open release file " + path);
    SampleStore s;
    s.writable_ = false;
    std::string line;
    long line_no = 0;
    auto contains = [](const std::vector<std::string>& xs, const std::string& x) {
      return xs.empty() || std::find(xs.begin(), xs.end(), x) != xs.end();
    };
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded())
        raise(Errc::import_error, "line " + std::to_string(line_no) + ": invalid JSON");
      // Adapt foreign field names to the canonical schema.
      for (const auto& [canonical, actual] : manifest.field_map) {
        if (actual == canonical || !j.contains(actual)) continue;
        j[canonical] = j.at(actual);
        j.erase(actual);
      }
      SampleRecord r = detail::record_from_json(j, line_no);
      if (r.record_version != manifest.record_version)
        raise(Errc::import_error, "line " + std::to_string(line_no) + ": record_version " +
                                      std::to_string(r.record_version) + " does not match manifest " +
                                      std::to_string(manifest.record_version));
      if (!contains(manifest.models, r.model_id))
        raise(Errc::import_error,
              "line " + std::to_string(line_no) + ": undeclared model " + r.model_id);
      if (!contains(manifest.datasets, r.dataset_id))
        raise(Errc::import_error,
              "line " + std::to_string(line_no) + ": undeclared dataset " + r.dataset_id);
      if (!contains(manifest.segmentation_modes, r.segmentation_mode))
        raise(Errc::import_error, "line " + std::to_string(line_no) +
                                      ": undeclared segmentation mode " + r.segmentation_mode);
      const std::string key = r.key();
      const auto it = s.records_.find(key);
      if (it != s.records_.end() &&
          it->second.payload_fingerprint() != r.payload_fingerprint())
        raise(Errc::import_error,
              "line " + std::to_string(line_no) + ": conflicting duplicate key");
      s.records_.emplace(key, std::move(r));
    }
    if (!manifest.record_counts.empty()) {
      const auto actual = s.counts();
      for (const auto& [model, per_ds] : manifest.record_counts) {
        for (const auto& [ds, expected] : per_ds) {
          long got = 0;
          if (const auto mit = actual.find(model); mit != actual.end())
            if (const auto dit = mit->second.find(ds); dit != mit->second.end()) got = dit->second;
          if (got != expected)
            raise(Errc::import_error, "expected " + std::to_string(expected) + " records for " +
                                          model + "/" + ds + ", found " + std::to_string(got));
        }
      }
    }
    return s;
  }

 private:
  std::string path_;
  bool writable_ = false;
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  std::map<std::string, SampleRecord> records_;
  std::ofstream appender_;
  long corrupt_lines_ = 0;
  long conflicting_lines_ = 0;
};

}  // namespace proxex
