// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sieve/grounding.hpp"
#include "sieve/rng.hpp"
#include "sieve/rollout.hpp"
#include "sieve/synth_data.hpp"
#include "sieve/toy_vlm.hpp"

namespace sieve::train {

/// Supervised stage that teaches a freshly initialized model the response
/// protocol (think span, optional insertion turn, answer span) from
/// templated demonstrations, plus a term that aligns question words with the
/// patches of the objects they name in the mid-layer space. Together they
/// stand in for the pretraining and instruction tuning a real base model
/// arrives with; reinforcement learning starts from its output.
struct WarmStartConfig {
  int steps = 300;
  int batch = 16;
  double learning_rate = 2e-3;  // Adam
  double insertion_share = 0.5;   // demonstrations that insert evidence
  double short_think_share = 0.3; // direct demonstrations with a brief think span
  double evidence_miss_share = 0.25;  // insertion demonstrations whose region may miss the object
  std::uint64_t seed = 0;
  grounding::GroundingParams grounding;  // block size and margin for demonstration regions
  double alignment_weight = 0.0;  // > 0 enables the cross-modal alignment term
  double alignment_tau = 0.1;
};

enum class DemoKind { kDirect, kDirectShort, kInsert };

/// Evidence for a demonstration: the block holding the centre of the first
/// gold box, expanded like a discovered region, taken from the model's
/// current input embeddings.
grounding::EvidenceSnapshot gold_snapshot(const vlm::Model& model, const data::Sample& sample,
                                          const grounding::GroundingParams& params);

/// Evidence as discovery would produce it: a block overlapping the first
/// gold box, or with probability `miss_share` any block, expanded. The
/// demonstration still answers correctly, so the model learns to use evidence
/// that shows the object and to fall back on the image otherwise.
grounding::EvidenceSnapshot demo_snapshot(const vlm::Model& model, const data::Sample& sample,
                                          const grounding::GroundingParams& params, double miss_share,
                                          RngStream rng);

/// A finished trajectory that follows the protocol and answers correctly.
rollout::Trajectory demo_trajectory(const vlm::Model& model, const data::Sample& sample, DemoKind kind,
                                    const grounding::SnapshotPtr& evidence);

/// A prompt word and the patches its object covers.
struct AlignmentTarget {
  std::size_t position = 0;
  std::vector<std::size_t> patches;
};

/// Cross-modal alignment term: for every target,
///   -log sum_{j in patches} softmax_j(cos(a - m, p_j - m) / tau)
/// where a is the word's mid-layer average, p_j the patch averages and m the
/// patch mean, i.e. the same affinity discovery ranks blocks by. Gradients of
/// `scale` times the loss accumulate into `grad` (skipped when empty);
/// returns (unscaled loss, scaled d inputs).
std::pair<double, Matrix> alignment_loss(const vlm::Model& model, const Matrix& inputs,
                                         std::span<const AlignmentTarget> targets, vlm::LayerRange layers,
                                         double tau, double scale, std::span<double> grad);

/// One target per content word of the prompt (not a stop word or control
/// token): a shape name targets its own gold box, any other word the
/// question's first gold box.
std::vector<AlignmentTarget> alignment_targets(const vlm::Model& model, const data::Sample& sample,
                                               std::span<const int> prompt_ids);

struct Adam {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  long t = 0;

  void apply(std::span<double> params, std::span<const double> grad);
};

using WarmStartCallback = std::function<void(int step, double mean_nll, double mean_alignment)>;

/// Returns the mean token negative log-likelihood of the final step.
double warm_start(vlm::Model& model, const std::vector<data::Sample>& samples, const WarmStartConfig& config,
                  const WarmStartCallback& on_step = {});

}  // namespace sieve::train
