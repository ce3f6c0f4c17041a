// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "json.hpp"
#include "sieve/errors.hpp"

namespace sieve::reward {

std::string RewardBreakdown::to_json() const {
  nlohmann::ordered_json j;
  j["r_res"] = r_res;
  j["r_format"] = r_format;
  j["r_emb"] = r_emb;
  j["r_act"] = r_act;
  j["total"] = total;
  return j.dump();
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

namespace {

// Index one past a "<open> w+ <close>" span starting at `i`, or 0 on mismatch.
std::size_t match_span(std::span<const int> t, std::size_t i, int open, int close, const Vocab& vocab) {
  if (i >= t.size() || t[i] != open) return 0;
  std::size_t j = i + 1;
  while (j < t.size() && !vocab.is_control(t[j])) ++j;
  if (j == i + 1 || j >= t.size() || t[j] != close) return 0;
  return j + 1;
}

}  // namespace

bool well_formed_turn(const rollout::Turn& turn, bool final_turn, const Vocab& vocab) {
  std::span<const int> t = turn.tokens;
  const std::size_t after_think = match_span(t, 0, vocab.think(), vocab.think_end(), vocab);
  if (after_think == 0) return false;
  if (!final_turn)
    return turn.action == rollout::Action::kInsert && turn.insertion_ok && t.size() == after_think + 1 &&
           t[after_think] == vocab.insert();
  return turn.action == rollout::Action::kAnswer &&
         match_span(t, after_think, vocab.answer(), vocab.answer_end(), vocab) == t.size();
}

bool format_ok(const rollout::Trajectory& traj, const Vocab& vocab) {
  if (traj.terminated_by != rollout::Termination::kAnswer || traj.turns.empty()) return false;
  for (std::size_t i = 0; i < traj.turns.size(); ++i)
    if (!well_formed_turn(traj.turns[i], i + 1 == traj.turns.size(), vocab)) return false;
  return true;
}

RewardBreakdown score_trajectory(const rollout::Trajectory& traj, const std::string& gold_answer, const Vocab& vocab,
                                 const RewardWeights& w, const ActParams& act) {
  RewardBreakdown r;
  r.r_format = format_ok(traj, vocab) ? 1 : 0;
  r.r_res = traj.final_answer && normalize_answer(*traj.final_answer) == normalize_answer(gold_answer) ? 1 : 0;
  r.r_emb = r.r_res == 1 && traj.insertion_count >= 1 ? 1 : 0;
  if (act.enabled) {
    const bool long_enough = traj.think_token_count >= act.min_think;
    const bool committed = traj.terminated_by == rollout::Termination::kAnswer || traj.insertion_count >= 1;
    r.r_act = (act.use_or ? (long_enough || committed) : (long_enough && committed)) ? 1 : 0;
  }
  r.total = w.result * r.r_res + w.format * r.r_format + w.embedding * r.r_emb + w.action * r.r_act;
  return r;
}

std::vector<double> grpo_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ConfigError("grpo: a group needs at least two rewards");
  std::vector<double> adv(rewards.size(), 0.0);
  // Exact zeros for a constant group, where the mean may carry rounding.
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); })) return adv;
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  // sqrt(var + eps^2) guards a vanishing spread like std + eps but stays
  // within eps^2 / (2 std^2) of the exact z-score.
  constexpr double eps = 1e-6;
  const double scale = std::sqrt(var / static_cast<double>(rewards.size()) + eps * eps);
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / scale;
  return adv;
}

std::vector<double> subset_sums(const RewardWeights& w) {
  const double lam[4] = {w.result, w.format, w.embedding, w.action};
  std::vector<double> out;
  for (int mask = 0; mask < 16; ++mask) {
    double s = 0.0;
    for (int b = 0; b < 4; ++b)
      if (mask & (1 << b)) s += lam[b];
    out.push_back(s);
  }
  return out;
}

}  // namespace sieve::reward
