// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sieve/errors.hpp"
#include "sieve/grounding.hpp"
#include "sieve/metrics.hpp"
#include "sieve/trainer.hpp"
#include "sieve/warm_start.hpp"

namespace sieve::cli {

/// Bad command line or configuration key; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Flat key=value configuration over a fixed key set with defaults.
/// Later assignments win: defaults, then the config file, then the command
/// line.
class RunConfig {
 public:
  RunConfig();

  /// Throws UsageError listing every valid key when `key` is unknown.
  void set(const std::string& key, const std::string& value);
  /// "key=value"; throws UsageError on a missing '='.
  void set_assignment(const std::string& assignment);
  /// Blank lines and lines starting with '#' are skipped.
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  static const std::vector<std::string>& keys();
  /// Every key in registry order, one "key=value" per line.
  std::string effective_text() const;

  vlm::ModelConfig model_config() const;
  grounding::GroundingParams grounding() const;
  rollout::SamplerParams sampler() const;
  train::TrainConfig train_config() const;
  train::WarmStartConfig warm_start_config() const;
  metrics::EvalParams eval_params() const;

 private:
  std::map<std::string, std::string> values_;
};

/// "a" or "a-b" (1-based, inclusive).
vlm::LayerRange parse_layer_range(const std::string& text);
std::vector<vlm::LayerRange> parse_layer_list(const std::string& text);

}  // namespace sieve::cli
