// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace sieve {

/// Counter-based random stream: output n is a pure function of (key, n).
///
/// Children made with split() derive their key from the parent's key,
/// counter, and a label, so the same (parent, label) always produces the
/// same child and the parent itself is left untouched. Workers that receive
/// pre-split streams never share state, which keeps results independent of
/// scheduling and thread count.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed);
  RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  RngStream split(std::string_view label) const;
  RngStream split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double next_uniform();
  /// Standard normal via Box-Muller; consumes two counters.
  double next_normal();
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t next_below(std::uint64_t n);

  /// Pure accessors that do not advance the stream.
  std::uint64_t u64_at(std::uint64_t counter) const;
  double normal_at(std::uint64_t index) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  bool operator==(const RngStream&) const = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_label(std::string_view label);

}  // namespace sieve
