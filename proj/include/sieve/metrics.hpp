// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sieve/bbox.hpp"
#include "sieve/evidence_cache.hpp"
#include "sieve/grounding.hpp"
#include "sieve/rollout.hpp"
#include "sieve/synth_data.hpp"
#include "sieve/toy_vlm.hpp"

namespace sieve::metrics {

/// Information hit: 1 iff the boxes overlap with positive area. Throws
/// ShapeError on an invalid box.
int ihr(const BBox& pred, const BBox& gt);

/// Ground truth for an anchor: the gold box of the object it names, else the
/// question's first gold box.
const BBox& gold_box_for(const data::Sample& sample, const std::string& anchor_token);

/// One grounded anchor: its token and the matched (pre-expansion) pixel box.
struct Hit {
  std::string anchor;
  BBox matched;
};
using Grounder = std::function<std::vector<Hit>(const data::Sample&, const grounding::GroundingParams&)>;

/// Discovery under `model` as a grounder.
Grounder discovery_grounder(const vlm::Model& model);

struct LayerSweepRow {
  vlm::LayerRange layers;
  double mean_ihr = 0.0;
  std::size_t pairs = 0;  // (sample, anchor) pairs averaged
};

/// Mean IHR over (sample, anchor) pairs for each layer range, with k = 1.
/// `grounder` defaults to discovery under `model`.
std::vector<LayerSweepRow> layer_sweep(const vlm::Model& model, const std::vector<data::Sample>& samples,
                                       const std::vector<vlm::LayerRange>& choices,
                                       const grounding::GroundingParams& base, const Grounder& grounder = {});

struct EvalParams {
  rollout::SamplerParams sampler;
  std::uint64_t seed = 0;
};

struct EvalResult {
  std::size_t n = 0;
  double accuracy = 0.0;
  double insertion_rate = 0.0;
  std::vector<rollout::Trajectory> trajectories;  // one per sample, in order
};

/// One rollout per sample on stream seed/"eval"/i, so two evaluations with
/// the same seed differ only where their caches do. Accuracy is exact match
/// after answer normalization.
EvalResult evaluate(const vlm::Model& model, const std::vector<data::Sample>& samples,
                    const cache::EvidenceCache& cache, const EvalParams& params);

/// Discovery for every sample; `clamped` is set when any selection clamped k.
cache::EvidenceCache discover_all(const vlm::Model& model, const std::vector<data::Sample>& samples,
                                  const grounding::GroundingParams& params, bool* clamped = nullptr);

struct KSweepRow {
  int k = 0;
  int k_used = 0;  // after clamping to the block count
  bool clamped = false;
  double accuracy = 0.0;
  double insertion_rate = 0.0;
};

std::vector<KSweepRow> k_sweep(const vlm::Model& model, const std::vector<data::Sample>& samples,
                               const std::vector<int>& k_values, const grounding::GroundingParams& base,
                               const EvalParams& eval);

/// Same-sized region at a uniformly drawn grid position, holding the rows of
/// the same representation space as `like`.
grounding::EvidenceSnapshot random_snapshot(const vlm::Model& model, const data::Sample& sample,
                                            const grounding::EvidenceSnapshot& like,
                                            const grounding::GroundingParams& params, RngStream rng);

/// Pairs every discovered snapshot with a random one of the same size.
cache::EvidenceCache random_cache(const vlm::Model& model, const std::vector<data::Sample>& samples,
                                  const cache::EvidenceCache& discovered, const grounding::GroundingParams& params,
                                  std::uint64_t seed);

struct AblationResult {
  EvalResult discovered;
  EvalResult random;
};

/// Discovered versus random evidence under the identical rollout protocol and
/// streams; `seed` drives both the random regions and the rollouts.
AblationResult ablate_random_embeddings(const vlm::Model& model, const std::vector<data::Sample>& samples,
                                        const cache::EvidenceCache& discovered,
                                        const grounding::GroundingParams& params, const EvalParams& eval);

}  // namespace sieve::metrics
