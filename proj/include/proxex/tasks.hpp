#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxex/client.hpp"
#include "proxex/errors.hpp"
#include "proxex/model.hpp"
#include "proxex/textutil.hpp"

namespace proxex {

enum class TaskKind { sentiment, multiple_choice, generation };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::sentiment: return "sentiment";
    case TaskKind::multiple_choice: return "multiple-choice";
    case TaskKind::generation: return "generation";
  }
  return "sentiment";
}

inline TaskKind task_kind_from_string(std::string_view s) {
  if (s == "sentiment") return TaskKind::sentiment;
  if (s == "multiple-choice" || s == "multiple_choice") return TaskKind::multiple_choice;
  if (s == "generation") return TaskKind::generation;
  raise(Errc::config, "unknown task kind '" + std::string(s) + "'");
}

// Task description for prompt building and output parsing. For sentiment and
// generation the "{instance}" slot of the template receives the (possibly
// perturbed) instance text. For multiple choice the instance text is the
// in-context example region and the rendered question block is appended
// after it.
struct TaskSpec {
  TaskKind kind = TaskKind::sentiment;
  std::string prompt_template;
  std::vector<std::string> label_set;
  std::vector<std::string> icl_examples;
  std::string icl_delimiter = "\n\n";
  std::string question_block;
  std::string reference_output;
};

// One explainable input bound to its task: the text features are carved
// from, the gold/reference output, and the prompt recipe around it.
struct Instance {
  std::string id;
  std::string text;  // the region features are carved from
  std::string gold;  // gold label or reference output
  TaskSpec task;
};

inline std::string default_prompt_template(TaskKind kind) {
  switch (kind) {
    case TaskKind::sentiment:
      return "Classify the sentiment of the following sentence as positive or negative. "
             "Answer with one word.\n\nSentence: {instance}\nSentiment:";
    case TaskKind::generation:
      return "Answer the following question briefly.\n\nQuestion: {instance}\nAnswer:";
    case TaskKind::multiple_choice:
      return "{instance}";
  }
  return "{instance}";
}

inline std::string fill_template(std::string templ, const std::string& instance_text) {
  const std::string slot = "{instance}";
  const std::size_t pos = templ.find(slot);
  if (pos == std::string::npos) raise(Errc::config, "prompt template has no {instance} slot");
  templ.replace(pos, slot.size(), instance_text);
  return templ;
}

inline std::string build_prompt(const TaskSpec& task, const std::string& instance_text) {
  if (task.kind == TaskKind::multiple_choice) {
    if (task.label_set.empty())
      raise(Errc::config, "multiple-choice task needs a label set");
    if (instance_text.empty()) return task.question_block;
    return instance_text + task.icl_delimiter + task.question_block;
  }
  const std::string& templ =
      task.prompt_template.empty() ? default_prompt_template(task.kind) : task.prompt_template;
  return fill_template(templ, instance_text);
}

struct ParsedOutput {
  std::optional<std::string> label;
  std::optional<double> label_prob;
  bool unparseable() const { return !label.has_value(); }
};

// First occurrence of any valid label in the raw text, case-insensitive,
// token punctuation stripped. Returns an empty label when nothing matches.
inline ParsedOutput try_parse_output(const TaskSpec& task, const ModelOutput& raw) {
  ParsedOutput parsed;
  if (task.kind == TaskKind::generation) {
    parsed.label = raw.text;
    parsed.label_prob = raw.prob;
    return parsed;
  }
  std::vector<std::string> lowered;
  lowered.reserve(task.label_set.size());
  for (const auto& l : task.label_set) lowered.push_back(to_lower(l));
  for (const auto& token : whitespace_tokens(raw.text)) {
    const std::string norm = strip_punct(to_lower(token));
    if (norm.empty()) continue;
    for (std::size_t i = 0; i < lowered.size(); ++i) {
      if (norm == lowered[i]) {
        parsed.label = task.label_set[i];
        parsed.label_prob = raw.prob;
        return parsed;
      }
    }
  }
  return parsed;
}

inline ParsedOutput parse_output(const TaskSpec& task, const ModelOutput& raw) {
  ParsedOutput parsed = try_parse_output(task, raw);
  if (parsed.unparseable())
    raise(Errc::unparseable_output, "no valid label in output '" + raw.text + "'");
  return parsed;
}

// Canonical positive-class probability for binary sentiment: the solver
// response y. Falls back to the 0/1 indicator when no probability came back.
inline double sentiment_response(const ParsedOutput& parsed) {
  const bool positive = parsed.label && to_lower(*parsed.label) == "positive";
  if (parsed.label_prob) return positive ? *parsed.label_prob : 1.0 - *parsed.label_prob;
  return positive ? 1.0 : 0.0;
}

enum class GenerationScorer { embedding_cosine, token_f1 };

inline std::string_view to_string(GenerationScorer s) {
  return s == GenerationScorer::embedding_cosine ? "embedding-cosine" : "token-f1";
}

inline GenerationScorer generation_scorer_from_string(std::string_view s) {
  if (s == "embedding-cosine" || s == "embedding_cosine") return GenerationScorer::embedding_cosine;
  if (s == "token-f1" || s == "token_f1") return GenerationScorer::token_f1;
  raise(Errc::config, "unknown generation scorer '" + std::string(s) + "'");
}

struct GenerationScore {
  double value = 0.0;
  GenerationScorer scorer = GenerationScorer::token_f1;
};

// Harmonic mean of token precision/recall over normalized whitespace tokens
// (multiset overlap). Range [0, 1].
inline double token_f1(const std::string& candidate, const std::string& reference) {
  auto bag = [](const std::string& text) {
    std::map<std::string, long> counts;
    for (const auto& t : whitespace_tokens(text)) {
      const std::string w = strip_punct(to_lower(t));
      if (!w.empty()) ++counts[w];
    }
    return counts;
  };
  const auto cand = bag(candidate);
  const auto ref = bag(reference);
  long cand_total = 0, ref_total = 0, common = 0;
  for (const auto& [w, c] : cand) cand_total += c;
  for (const auto& [w, c] : ref) ref_total += c;
  for (const auto& [w, c] : cand) {
    const auto it = ref.find(w);
    if (it != ref.end()) common += std::min(c, it->second);
  }
  if (cand_total == 0 || ref_total == 0 || common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(cand_total);
  const double recall = static_cast<double>(common) / static_cast<double>(ref_total);
  return 2.0 * precision * recall / (precision + recall);
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    raise(Errc::invalid_argument, "embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::max(-1.0, std::min(1.0, dot / (std::sqrt(na) * std::sqrt(nb))));
}

// Scores a generated answer against the reference. embedding-cosine goes
// through the configured embeddings endpoint (cached); token-f1 is the
// offline fallback.
inline GenerationScore score_generation(const std::string& candidate, const std::string& reference,
                                        GenerationScorer scorer, ModelClient* client = nullptr,
                                        const ModelSpec* embed_model = nullptr,
                                        const QueryMeta& meta = {}) {
  if (reference.empty()) raise(Errc::invalid_argument, "reference output must be non-empty");
  if (scorer == GenerationScorer::token_f1)
    return {token_f1(candidate, reference), GenerationScorer::token_f1};
  if (!client || !embed_model)
    raise(Errc::scorer_unavailable, "embedding-cosine needs an embeddings endpoint");
  const std::vector<double> ec = client->cached_embed(*embed_model, candidate, meta);
  const std::vector<double> er = client->cached_embed(*embed_model, reference, meta);
  return {cosine_similarity(ec, er), GenerationScorer::embedding_cosine};
}

// ---------------------------------------------------------------------------
// Dataset readers. Schemas are validated line by line; violations report the
// offending line number.

struct SstRow {
  std::string sentence;
  int label = 0;  // 1 = positive
};

inline std::vector<SstRow> read_sst2_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::import_error, "cannot open " + path);
  std::vector<SstRow> rows;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line == "sentence\tlabel") continue;
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos)
      raise(Errc::import_error, path + " line " + std::to_string(line_no) + ": expected <sentence>\\t<label>");
    const std::string label = line.substr(tab + 1);
    if (label != "0" && label != "1")
      raise(Errc::import_error, path + " line " + std::to_string(line_no) + ": label must be 0 or 1");
    SstRow row;
    row.sentence = line.substr(0, tab);
    row.label = label == "1" ? 1 : 0;
    if (row.sentence.empty())
      raise(Errc::import_error, path + " line " + std::to_string(line_no) + ": empty sentence");
    rows.push_back(std::move(row));
  }
  return rows;
}

struct MmluRow {
  std::string question;
  std::vector<std::string> options;  // exactly 4
  std::string answer;                // A..D
};

namespace detail {

// RFC-4180 style records: quoted fields may contain commas, escaped quotes
// and newlines.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"': in_quotes = true; break;
      case ',':
        fields.push_back(std::move(field));
        field.clear();
        break;
      case '\r': break;
      case '\n':
        fields.push_back(std::move(field));
        field.clear();
        records.push_back(std::move(fields));
        fields.clear();
        break;
      default: field += c;
    }
  }
  if (!field.empty() || !fields.empty()) {
    fields.push_back(std::move(field));
    records.push_back(std::move(fields));
  }
  return records;
}

}  // namespace detail

inline std::vector<MmluRow> read_mmlu_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::import_error, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto records = detail::parse_csv(buf.str());
  std::vector<MmluRow> rows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.size() == 1 && rec[0].empty()) continue;
    if (rec.size() != 6)
      raise(Errc::import_error, path + " record " + std::to_string(i + 1) +
                                    ": expected 6 fields (question, 4 options, answer), got " +
                                    std::to_string(rec.size()));
    MmluRow row;
    row.question = rec[0];
    row.options = {rec[1], rec[2], rec[3], rec[4]};
    row.answer = rec[5];
    if (row.answer != "A" && row.answer != "B" && row.answer != "C" && row.answer != "D")
      raise(Errc::import_error,
            path + " record " + std::to_string(i + 1) + ": answer must be A..D");
    rows.push_back(std::move(row));
  }
  return rows;
}

struct NqRow {
  std::string question;
  std::string answer;
};

inline std::vector<NqRow> read_nq_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::import_error, "cannot open " + path);
  std::vector<NqRow> rows;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("question") || !j.contains("answer"))
      raise(Errc::import_error, path + " line " + std::to_string(line_no) +
                                    ": expected {\"question\": ..., \"answer\": ...}");
    rows.push_back({j.at("question").get<std::string>(), j.at("answer").get<std::string>()});
  }
  return rows;
}

// Formatting helpers shared by the choice task and the compression harness.

inline std::string format_choice_question(const std::string& question,
                                          const std::vector<std::string>& options) {
  static const char* letters = "ABCDEFGH";
  std::string out = question;
  for (std::size_t i = 0; i < options.size() && i < 8; ++i) {
    out += '\n';
    out += letters[i];
    out += ". ";
    out += options[i];
  }
  out += "\nAnswer:";
  return out;
}

inline std::string format_choice_example(const MmluRow& row) {
  return format_choice_question(row.question, row.options) + " " + row.answer;
}

inline TaskSpec make_sentiment_task(std::string prompt_template = {}) {
  TaskSpec t;
  t.kind = TaskKind::sentiment;
  t.label_set = {"positive", "negative"};
  t.prompt_template = std::move(prompt_template);
  return t;
}

inline TaskSpec make_choice_task(std::vector<std::string> icl_examples,
                                 const std::string& question,
                                 const std::vector<std::string>& options,
                                 std::string icl_delimiter = "\n\n") {
  TaskSpec t;
  t.kind = TaskKind::multiple_choice;
  static const char* letters = "ABCDEFGH";
  for (std::size_t i = 0; i < options.size() && i < 8; ++i) t.label_set.emplace_back(1, letters[i]);
  t.icl_examples = std::move(icl_examples);
  t.icl_delimiter = std::move(icl_delimiter);
  t.question_block = format_choice_question(question, options);
  return t;
}

inline TaskSpec make_generation_task(std::string reference, std::string prompt_template = {}) {
  TaskSpec t;
  t.kind = TaskKind::generation;
  t.reference_output = std::move(reference);
  t.prompt_template = std::move(prompt_template);
  return t;
}

// The in-context example region: what example-block segmentation carves up.
inline std::string icl_region(const TaskSpec& task) {
  std::string out;
  for (std::size_t i = 0; i < task.icl_examples.size(); ++i) {
    if (i) out += task.icl_delimiter;
    out += task.icl_examples[i];
  }
  return out;
}

}  // namespace proxex
