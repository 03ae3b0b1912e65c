#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "proxex/errors.hpp"
#include "proxex/mask.hpp"

namespace proxex {

enum class SegmentationMode { word, sentence, example_block };

inline std::string_view to_string(SegmentationMode m) {
  switch (m) {
    case SegmentationMode::word: return "word";
    case SegmentationMode::sentence: return "sentence";
    case SegmentationMode::example_block: return "example-block";
  }
  return "word";
}

inline SegmentationMode segmentation_mode_from_string(std::string_view s) {
  if (s == "word") return SegmentationMode::word;
  if (s == "sentence") return SegmentationMode::sentence;
  if (s == "example-block" || s == "example_block") return SegmentationMode::example_block;
  raise(Errc::config, "unknown segmentation mode '" + std::string(s) + "'");
}

// Half-open character span into the raw input.
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Interpretable features of one input: ordered, non-overlapping spans. The
// text between spans (plus any prefix/suffix) is kept verbatim so that the
// all-ones mask reproduces the raw input byte for byte.
class FeatureSegmentation {
 public:
  FeatureSegmentation(std::string raw, std::vector<Segment> segments, SegmentationMode mode)
      : raw_(std::move(raw)), segments_(std::move(segments)), mode_(mode) {
    if (segments_.empty()) raise(Errc::empty_input, "segmentation has no features");
    std::size_t prev_end = 0;
    for (const auto& s : segments_) {
      if (s.begin < prev_end || s.end < s.begin || s.end > raw_.size())
        raise(Errc::invalid_argument, "segments must be ordered and non-overlapping");
      prev_end = s.end;
    }
  }

  std::size_t size() const { return segments_.size(); }
  SegmentationMode mode() const { return mode_; }
  const std::string& raw() const { return raw_; }
  const std::vector<Segment>& segments() const { return segments_; }

  std::string segment_text(std::size_t i) const {
    const auto& s = segments_[i];
    return raw_.substr(s.begin, s.end - s.begin);
  }

  // Renders the coalition: kept segments joined by the original separators.
  // A segment owns the gap between it and its predecessor; the first kept
  // segment emits no leading gap, so separators of removed segments vanish.
  // The prefix survives only with segment 0, the suffix only with the last.
  std::string apply(const Mask& mask) const {
    if (mask.size() != segments_.size())
      raise(Errc::mask_shape, "mask length " + std::to_string(mask.size()) +
                                  " != feature count " + std::to_string(segments_.size()));
    if (mask.is_empty()) return "";
    std::string out;
    out.reserve(raw_.size());
    bool emitted = false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      if (!mask.test(i)) continue;
      if (!emitted) {
        if (i == 0) out.append(raw_, 0, segments_[0].begin);
        emitted = true;
      } else {
        out.append(raw_, segments_[i - 1].end, segments_[i].begin - segments_[i - 1].end);
      }
      out.append(raw_, segments_[i].begin, segments_[i].end - segments_[i].begin);
    }
    if (mask.test(segments_.size() - 1))
      out.append(raw_, segments_.back().end, raw_.size() - segments_.back().end);
    return out;
  }

 private:
  std::string raw_;
  std::vector<Segment> segments_;
  SegmentationMode mode_;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_sentence_end(char c) { return c == '.' || c == '!' || c == '?'; }

inline std::vector<Segment> word_spans(const std::string& text) {
  std::vector<Segment> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    const std::size_t begin = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    out.push_back({begin, i});
  }
  return out;
}

inline std::vector<Segment> sentence_spans(const std::string& text) {
  std::vector<Segment> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    const std::size_t begin = i;
    std::size_t end = begin;
    while (i < text.size()) {
      if (is_sentence_end(text[i])) {
        while (i < text.size() && is_sentence_end(text[i])) ++i;
        end = i;
        break;
      }
      ++i;
      if (!is_space(text[i - 1])) end = i;
    }
    out.push_back({begin, end});
  }
  return out;
}

// Non-empty blocks between delimiter occurrences, trimmed of surrounding
// whitespace (the trimmed margin becomes part of the separators).
inline std::vector<Segment> block_spans(const std::string& text, const std::string& delim) {
  std::vector<std::pair<std::size_t, std::size_t>> raw_blocks;
  if (delim.empty()) {
    raw_blocks.emplace_back(0, text.size());
  } else {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t hit = text.find(delim, pos);
      const std::size_t end = hit == std::string::npos ? text.size() : hit;
      raw_blocks.emplace_back(pos, end);
      if (hit == std::string::npos) break;
      pos = hit + delim.size();
    }
  }
  std::vector<Segment> out;
  for (auto [b, e] : raw_blocks) {
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    if (e > b) out.push_back({b, e});
  }
  return out;
}

}  // namespace detail

// Splits raw text into interpretable features. Word mode splits on
// whitespace runs, sentence mode on sentence-final punctuation, and
// example-block mode on `block_delimiter`. A block-mode input without any
// delimiter occurrence degenerates to a single feature.
inline FeatureSegmentation segment(const std::string& text, SegmentationMode mode,
                                   const std::string& block_delimiter = "\n\n") {
  if (text.empty()) raise(Errc::empty_input, "cannot segment empty text");
  std::vector<Segment> spans;
  switch (mode) {
    case SegmentationMode::word: spans = detail::word_spans(text); break;
    case SegmentationMode::sentence: spans = detail::sentence_spans(text); break;
    case SegmentationMode::example_block: spans = detail::block_spans(text, block_delimiter); break;
  }
  if (spans.empty()) raise(Errc::empty_input, "text contains no features");
  return FeatureSegmentation(text, std::move(spans), mode);
}

inline std::string apply_mask(const FeatureSegmentation& seg, const Mask& mask) {
  return seg.apply(mask);
}

}  // namespace proxex
