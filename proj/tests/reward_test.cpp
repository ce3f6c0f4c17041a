// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sieve/errors.hpp"
#include "sieve/reward.hpp"
#include "support/oracles.hpp"

namespace sieve::reward {
namespace {

const Vocab& vocab() {
  static const Vocab v = Vocab::standard();
  return v;
}

rollout::Turn turn(const std::string& text, rollout::Action action, bool insertion_ok = false) {
  return oracle::turn(text, action, vocab(), insertion_ok);
}

rollout::Trajectory make(const oracle::Features& f) { return oracle::trajectory(f, vocab()); }

TEST(ScoreTrajectory, HandWrittenTruthTable) {
  const auto sums = subset_sums(RewardWeights{});
  for (const auto& row : oracle::kRewardTable) {
    const auto r = score_trajectory(make(row.f), "red", vocab(), RewardWeights{}, ActParams{});
    SCOPED_TRACE(::testing::Message() << row.f.correct << row.f.well_formed << row.f.inserted << row.f.long_think);
    EXPECT_EQ(r.r_res, row.r_res);
    EXPECT_EQ(r.r_format, row.r_format);
    EXPECT_EQ(r.r_emb, row.r_emb);
    EXPECT_EQ(r.r_act, row.r_act);
    EXPECT_NEAR(r.total, row.total, 1e-12);
    EXPECT_TRUE(std::any_of(sums.begin(), sums.end(), [&](double s) { return std::abs(s - r.total) < 1e-12; }));
    EXPECT_LE(r.r_emb, r.r_res);
    EXPECT_LE(r.r_emb, row.f.inserted ? 1 : 0);
  }
}

TEST(ScoreTrajectory, PublishedExamples) {
  const auto full = score_trajectory(make({true, true, true, true}), "red", vocab(), {}, {});
  EXPECT_NEAR(full.total, 1.6, 1e-12);
  const auto no_insert = score_trajectory(make({true, true, false, true}), "red", vocab(), {}, {});
  EXPECT_NEAR(no_insert.total, 1.1, 1e-12);
  EXPECT_EQ(no_insert.r_emb, 0);
}

TEST(ScoreTrajectory, HorizonTerminationScoresNothing) {
  rollout::Trajectory t;
  t.turns.push_back(turn("<think> i need to look at the red circle more closely now", rollout::Action::kContinue));
  t.think_token_count = 12;
  const auto r = score_trajectory(t, "red", vocab(), {}, {});
  EXPECT_EQ(r.total, 0.0);
  // The OR variant pays for length alone.
  ActParams loose;
  loose.use_or = true;
  EXPECT_EQ(score_trajectory(t, "red", vocab(), {}, loose).r_act, 1);
  ActParams off;
  off.enabled = false;
  EXPECT_EQ(score_trajectory(make({true, true, true, true}), "red", vocab(), {}, off).r_act, 0);
}

TEST(ScoreTrajectory, InsertionTurnMustSucceedAndEndAtMarker) {
  auto t = make({true, true, true, true});
  t.turns[0].insertion_ok = false;
  EXPECT_EQ(score_trajectory(t, "red", vocab(), {}, {}).r_format, 0);
  auto u = make({true, true, true, true});
  u.turns[0].tokens.push_back(vocab().id("red"));
  EXPECT_EQ(score_trajectory(u, "red", vocab(), {}, {}).r_format, 0);
  // An answer in a non-final position breaks the protocol.
  auto w = make({true, true, false, true});
  w.turns.insert(w.turns.begin(), w.turns.front());
  EXPECT_EQ(score_trajectory(w, "red", vocab(), {}, {}).r_format, 0);
}

TEST(NormalizeAnswer, CaseAndWhitespace) {
  EXPECT_EQ(normalize_answer("  Red \t"), "red");
  EXPECT_EQ(normalize_answer("LIGHT   blue"), "light blue");
  EXPECT_EQ(normalize_answer(""), "");
  auto t = make({true, true, false, true});
  t.final_answer = " RED ";
  EXPECT_EQ(score_trajectory(t, "red", vocab(), {}, {}).r_res, 1);
}

TEST(RewardBreakdown, JsonHasAllComponents) {
  const auto r = score_trajectory(make({true, true, true, true}), "red", vocab(), {}, {});
  const std::string j = r.to_json();
  EXPECT_EQ(j.rfind(R"({"r_res":1,"r_format":1,"r_emb":1,"r_act":1,"total":1.)", 0), 0u) << j;
}

TEST(SubsetSums, SixteenValues) {
  const auto s = subset_sums(RewardWeights{});
  ASSERT_EQ(s.size(), 16u);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_NEAR(*std::max_element(s.begin(), s.end()), 1.6, 1e-12);
}

TEST(GrpoAdvantages, ConstantGroupIsZero) {
  for (double v : grpo_advantages(std::vector<double>(8, 0.7))) EXPECT_EQ(v, 0.0);
}

TEST(GrpoAdvantages, TwoElementExample) {
  const auto a = grpo_advantages(std::vector<double>{1.6, 0.0});
  EXPECT_NEAR(a[0], 1.0, 1e-6);
  EXPECT_NEAR(a[1], -1.0, 1e-6);
}

TEST(GrpoAdvantages, ZeroSumAndShiftInvariant) {
  RngStream rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(2 + rng.next_below(14));
    const auto sums = subset_sums(RewardWeights{});
    for (auto& v : r) v = sums[rng.next_below(sums.size())];
    const auto a = grpo_advantages(r);
    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 0.0, 1e-9);
    const double shift = 10.0 * rng.next_uniform() - 5.0;
    std::vector<double> shifted = r;
    for (auto& v : shifted) v += shift;
    const auto b = grpo_advantages(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(GrpoAdvantages, SingletonIsConfigError) {
  EXPECT_THROW(grpo_advantages(std::vector<double>{1.0}), ConfigError);
}

}  // namespace
}  // namespace sieve::reward
