#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "proxex/errors.hpp"

namespace proxex {

// Binary coalition vector over interpretable features. Bit 1 = feature kept,
// bit 0 = feature removed. The set-bit count is cached.
class Mask {
 public:
  Mask() = default;

  explicit Mask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto b : bits_) {
      if (b > 1) raise(Errc::invalid_argument, "mask bits must be 0 or 1");
      ones_ += b;
    }
  }

  static Mask all_ones(std::size_t n) {
    Mask m;
    m.bits_.assign(n, 1);
    m.ones_ = n;
    return m;
  }

  static Mask all_zeros(std::size_t n) {
    Mask m;
    m.bits_.assign(n, 0);
    m.ones_ = 0;
    return m;
  }

  // Bit i of `word` becomes bit i of the mask (feature order = bit order).
  static Mask from_uint(std::uint64_t word, std::size_t n) {
    if (n > 64) raise(Errc::size_limit, "from_uint supports up to 64 features");
    Mask m;
    m.bits_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      m.bits_[i] = static_cast<std::uint8_t>((word >> i) & 1);
      m.ones_ += m.bits_[i];
    }
    return m;
  }

  static Mask from_bits_string(std::string_view s) {
    std::vector<std::uint8_t> bits;
    bits.reserve(s.size());
    for (char c : s) {
      if (c != '0' && c != '1') raise(Errc::invalid_argument, "mask string must be 0/1");
      bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    return Mask(std::move(bits));
  }

  std::size_t size() const { return bits_.size(); }
  std::size_t ones() const { return ones_; }
  bool test(std::size_t i) const { return bits_[i] != 0; }
  bool is_full() const { return ones_ == bits_.size(); }
  bool is_empty() const { return ones_ == 0; }
  bool is_proper() const { return ones_ > 0 && ones_ < bits_.size(); }

  void set(std::size_t i, bool v) {
    const std::uint8_t nv = v ? 1 : 0;
    ones_ += nv;
    ones_ -= bits_[i];
    bits_[i] = nv;
  }

  Mask complement() const {
    Mask m;
    m.bits_.resize(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) m.bits_[i] = bits_[i] ? 0 : 1;
    m.ones_ = bits_.size() - ones_;
    return m;
  }

  std::string to_bits_string() const {
    std::string s(bits_.size(), '0');
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) s[i] = '1';
    return s;
  }

  const std::vector<std::uint8_t>& bits() const { return bits_; }

  bool operator==(const Mask& other) const { return bits_ == other.bits_; }

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t ones_ = 0;
};

}  // namespace proxex
