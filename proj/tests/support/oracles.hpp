// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations shared by the unit tests and the
// acceptance harness. None of them calls the code it checks.

#pragma once

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sieve/bbox.hpp"
#include "sieve/grounding.hpp"
#include "sieve/reward.hpp"
#include "sieve/rollout.hpp"

namespace sieve::oracle {

using Big = boost::multiprecision::cpp_dec_float_50;

/// softmax(v / tau) evaluated in 50 significant digits.
inline std::vector<double> softmax(std::span<const double> v, double tau) {
  std::vector<Big> e(v.size());
  Big sum = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = boost::multiprecision::exp(Big(v[i]) / Big(tau));
    sum += e[i];
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(e[i] / sum);
  return out;
}

/// Cosine similarity in 50 digits.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  Big ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += Big(a[i]) * Big(b[i]);
    aa += Big(a[i]) * Big(a[i]);
    bb += Big(b[i]) * Big(b[i]);
  }
  if (aa == 0 || bb == 0) return 0.0;
  return static_cast<double>(ab / boost::multiprecision::sqrt(aa * bb));
}

struct Selection {
  std::vector<grounding::BlockCoord> blocks;  // row-major sorted
  grounding::PatchBox hull;
  bool clamped = false;
};

/// Sorts every block by (score desc, row-major index asc), keeps k and takes
/// the hull of the covered patches by scanning the whole grid.
inline Selection select(std::span<const double> block_scores, int block_rows, int block_cols, int grid_rows,
                        int grid_cols, int block_size, int k) {
  std::vector<int> order(static_cast<std::size_t>(block_rows * block_cols));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return block_scores[a] > block_scores[b]; });
  Selection s;
  s.clamped = k > static_cast<int>(order.size());
  const int kk = std::min<int>(k, static_cast<int>(order.size()));
  int r0 = grid_rows, c0 = grid_cols, r1 = -1, c1 = -1;
  for (int i = 0; i < kk; ++i) {
    const grounding::BlockCoord bc{order[i] / block_cols, order[i] % block_cols};
    s.blocks.push_back(bc);
    for (int r = 0; r < grid_rows; ++r)
      for (int c = 0; c < grid_cols; ++c)
        if (r / block_size == bc.row && c / block_size == bc.col) {
          r0 = std::min(r0, r);
          c0 = std::min(c0, c);
          r1 = std::max(r1, r);
          c1 = std::max(c1, c);
        }
  }
  std::sort(s.blocks.begin(), s.blocks.end(),
            [&](const auto& a, const auto& b) { return a.row * block_cols + a.col < b.row * block_cols + b.col; });
  s.hull = {r0, c0, r1, c1};
  return s;
}

/// Overlap by counting shared pixels on a side x side grid.
inline int ihr(const BBox& a, const BBox& b, int side) {
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      if (x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max && x >= b.x_min && x < b.x_max &&
          y >= b.y_min && y < b.y_max)
        return 1;
  return 0;
}

// --- reward truth table ---------------------------------------------------------

struct Features {
  bool correct, well_formed, inserted, long_think;
};

struct TruthRow {
  Features f;
  int r_res, r_format, r_emb, r_act;
  double total;
};

/// Written out by hand from the reward definition: r_emb only with a correct
/// answer that used evidence, r_act for a think span of at least 8 tokens.
inline constexpr TruthRow kRewardTable[] = {
    {{false, false, false, false}, 0, 0, 0, 0, 0.0}, {{false, false, false, true}, 0, 0, 0, 1, 0.2},
    {{false, false, true, false}, 0, 0, 0, 0, 0.0},  {{false, false, true, true}, 0, 0, 0, 1, 0.2},
    {{false, true, false, false}, 0, 1, 0, 0, 0.3},  {{false, true, false, true}, 0, 1, 0, 1, 0.5},
    {{false, true, true, false}, 0, 1, 0, 0, 0.3},   {{false, true, true, true}, 0, 1, 0, 1, 0.5},
    {{true, false, false, false}, 1, 0, 0, 0, 0.6},  {{true, false, false, true}, 1, 0, 0, 1, 0.8},
    {{true, false, true, false}, 1, 0, 1, 0, 1.1},   {{true, false, true, true}, 1, 0, 1, 1, 1.3},
    {{true, true, false, false}, 1, 1, 0, 0, 0.9},   {{true, true, false, true}, 1, 1, 0, 1, 1.1},
    {{true, true, true, false}, 1, 1, 1, 0, 1.4},    {{true, true, true, true}, 1, 1, 1, 1, 1.6},
};

inline rollout::Turn turn(const std::string& text, rollout::Action action, const Vocab& vocab,
                          bool insertion_ok = false) {
  rollout::Turn t;
  t.tokens = tokenize(text, vocab);
  t.action = action;
  t.insertion_attempted = action == rollout::Action::kInsert;
  t.insertion_ok = insertion_ok;
  return t;
}

/// A trajectory with the given features for a question whose answer is "red".
inline rollout::Trajectory trajectory(const Features& f, const Vocab& vocab) {
  rollout::Trajectory t;
  const std::string think = f.long_think ? "<think> i need to look at the red circle more closely now </think>"
                                         : "<think> the circle </think>";
  if (f.inserted) {
    t.turns.push_back(turn(think + " <insert_evidence>", rollout::Action::kInsert, vocab, true));
    t.insertion_count = 1;
  }
  const std::string answer = f.correct ? "red" : "blue";
  // A missing </think> is the format violation.
  const std::string final_think = f.well_formed ? "<think> it is clear </think>" : "<think> it is clear";
  t.turns.push_back(turn(final_think + " <answer> " + answer + " </answer>", rollout::Action::kAnswer, vocab));
  t.final_answer = answer;
  t.terminated_by = rollout::Termination::kAnswer;
  t.think_token_count = f.long_think ? 12 : 3;
  return t;
}

}  // namespace sieve::oracle
