// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sieve/evidence_cache.hpp"
#include "sieve/reward.hpp"
#include "sieve/rollout.hpp"
#include "sieve/synth_data.hpp"
#include "sieve/toy_vlm.hpp"

namespace sieve::train {

struct TrainConfig {
  int prompts_per_batch = 16;
  int group_size = 8;
  int steps = 60;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double clip_eps = 0.2;
  double kl_coeff = 0.0;
  std::uint64_t seed = 0;
  int refresh_period = 0;  // extra refresh of every cached sample each P updates; 0 disables
  rollout::SamplerParams sampler;
  reward::RewardWeights weights;
  reward::ActParams act;
  grounding::GroundingParams grounding;

  void validate() const;
};

struct Group {
  std::size_t sample_index = 0;
  std::vector<rollout::Trajectory> trajectories;
  std::vector<reward::RewardBreakdown> rewards;
  std::vector<double> advantages;
};

/// G rollouts of one sample sharing a single prefix pass, each on its own
/// pre-split stream.
std::vector<rollout::Trajectory> generate_group(const vlm::Model& model, const data::Sample& sample,
                                                const cache::EvidenceCache& cache, int group_size,
                                                const rollout::SamplerParams& sampler, const RngStream& rng);

/// Scores a group and fills rewards and advantages.
void score_group(Group& group, const data::Sample& sample, const vlm::Model& model, const TrainConfig& config);

/// Refresh predicate: some trajectory used evidence and still got the answer wrong.
bool needs_refresh(const Group& group);

struct SgdMomentum {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::vector<double> velocity;

  void apply(std::span<double> params, std::span<const double> grad);
};

struct UpdateStats {
  bool applied = false;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens = 0;
};

/// Gradient of the clipped surrogate
///   L = -(1/N) sum_traj (1/T) sum_t min(r_t A, clip(r_t, 1 - eps, 1 + eps) A)
/// with r_t = exp(logp_t - logp_old_t) and N trajectories in `groups`.
/// Inserted evidence rows carry no targets. Returns the loss.
double surrogate_gradient(const vlm::Model& model, const std::vector<Group>& groups,
                          const std::vector<data::Sample>& samples, double clip_eps, std::span<double> grad);

/// One optimizer step on the surrogate; skipped (weights untouched) when the
/// gradient is not finite.
UpdateStats policy_update(vlm::Model& model, const std::vector<Group>& groups, const std::vector<data::Sample>& samples,
                          SgdMomentum& optimizer, double clip_eps);

struct StepMetrics {
  int step = 0;
  double mean_reward = 0.0;
  double mean_len = 0.0;
  int max_len = 0;
  double insertion_rate = 0.0;
  int refreshes = 0;
  double entropy = 0.0;  // mean negative log-probability of sampled tokens
  double accuracy = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

struct TrainResult {
  std::vector<StepMetrics> metrics;
  int skipped_updates = 0;
};

using StepCallback = std::function<void(const StepMetrics&, const std::vector<Group>&)>;

/// The RL loop. `cache` must already hold discovered evidence.
TrainResult train(vlm::Model& model, const std::vector<data::Sample>& samples, cache::EvidenceCache& cache,
                  const TrainConfig& config, const StepCallback& on_step = {});

/// Discovery for every sample under the current weights.
void populate_cache(cache::EvidenceCache& cache, const vlm::Model& model, const std::vector<data::Sample>& samples,
                    const grounding::GroundingParams& params);

}  // namespace sieve::train
