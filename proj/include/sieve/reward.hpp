// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "sieve/rollout.hpp"
#include "sieve/vocab.hpp"

namespace sieve::reward {

struct RewardWeights {
  double result = 0.6;
  double format = 0.3;
  double embedding = 0.5;
  double action = 0.2;
};

struct ActParams {
  int min_think = 8;
  bool use_or = false;  // length OR commit instead of AND
  bool enabled = true;
};

struct RewardBreakdown {
  int r_res = 0;
  int r_format = 0;
  int r_emb = 0;
  int r_act = 0;
  double total = 0.0;

  std::string to_json() const;
};

/// Lowercase, trim and collapse whitespace.
std::string normalize_answer(std::string_view s);

/// True when the turn is <think> w+ </think> followed by <insert_evidence>
/// (non-final) or <answer> w+ </answer> (final), w being non-control tokens.
bool well_formed_turn(const rollout::Turn& turn, bool final_turn, const Vocab& vocab);
bool format_ok(const rollout::Trajectory& traj, const Vocab& vocab);

RewardBreakdown score_trajectory(const rollout::Trajectory& traj, const std::string& gold_answer, const Vocab& vocab,
                                 const RewardWeights& weights = {}, const ActParams& act = {});

/// (r - mean) / sqrt(population variance + 1e-12); exactly zero for a
/// constant group. Throws ConfigError for fewer than two rewards.
std::vector<double> grpo_advantages(std::span<const double> rewards);

/// The 16 subset sums of the four weights.
std::vector<double> subset_sums(const RewardWeights& weights);

}  // namespace sieve::reward
