// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "sieve/image.hpp"
#include "sieve/rollout.hpp"
#include "sieve/toy_vlm.hpp"

namespace sieve::seq {

/// Teacher-forced view of a group of trajectories that share one prompt:
/// the common prefix, one continuation per trajectory, and the targets
/// for every generated token.
struct PolicyBatch {
  Matrix prefix;
  std::vector<vlm::RowSource> prefix_sources;
  std::vector<std::vector<vlm::TokenTarget>> prefix_targets;
  std::vector<vlm::Continuation> continuations;
  std::vector<std::vector<vlm::RowSource>> continuation_sources;
  std::vector<std::vector<double>> old_logps;  // recorded at generation, target order
};

PolicyBatch build_batch(const vlm::Model& model, const Image& image, std::span<const int> prompt_ids,
                        const std::vector<rollout::Trajectory>& trajectories);

/// Forward/backward over the batch; parameter gradients (including the
/// embedding tables) accumulate into `grad`. Returns per-target log-probs.
std::vector<std::vector<double>> backward(const vlm::Model& model, const PolicyBatch& batch, const Image& image,
                                          const vlm::LogProbGrad& fn, std::span<double> grad);

}  // namespace sieve::seq
