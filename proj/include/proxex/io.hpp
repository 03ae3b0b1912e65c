#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "proxex/errors.hpp"

namespace proxex {

// Shortest round-trip decimal form; identical doubles print identically, so
// report files replay bit for bit.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// Write-then-rename so readers never observe a half-written report.
inline void atomic_write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::config, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) raise(Errc::config, "write failure on " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) raise(Errc::config, "cannot move " + tmp.string() + " to " + path + ": " + ec.message());
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::config, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace proxex
