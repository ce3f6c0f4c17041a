// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/rng.hpp"

#include <cmath>
#include <numbers>

namespace sieve {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_label(std::string_view label) {
  // FNV-1a, then a finalizer so short labels still spread over all bits.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed + kGamma)), counter_(0) {}

RngStream RngStream::split(std::string_view label) const {
  return RngStream(mix64(key_ ^ mix64(counter_ + 0x632BE59BD9B4E019ULL) ^ hash_label(label)), 0);
}

RngStream RngStream::split(std::uint64_t index) const {
  return RngStream(mix64(key_ ^ mix64(counter_ + 0x632BE59BD9B4E019ULL) ^ mix64(index * kGamma + 1)), 0);
}

std::uint64_t RngStream::u64_at(std::uint64_t counter) const { return mix64(key_ + (counter + 1) * kGamma); }

std::uint64_t RngStream::next_u64() { return u64_at(counter_++); }

double RngStream::next_uniform() { return to_unit(next_u64()); }

double RngStream::next_normal() {
  std::uint64_t index = (counter_ + 1) / 2;
  counter_ = 2 * index + 2;
  return normal_at(index);
}

double RngStream::normal_at(std::uint64_t index) const {
  // 1 - u keeps the log argument in (0, 1].
  double u1 = 1.0 - to_unit(u64_at(2 * index));
  double u2 = to_unit(u64_at(2 * index + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
  // Rejection keeps the result exactly uniform.
  std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  for (;;) {
    std::uint64_t x = next_u64();
    if (x < limit) return x % n;
  }
}

}  // namespace sieve
