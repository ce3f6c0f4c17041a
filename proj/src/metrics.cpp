// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/metrics.hpp"

#include <algorithm>

#include "sieve/errors.hpp"
#include "sieve/reward.hpp"

namespace sieve::metrics {

int ihr(const BBox& pred, const BBox& gt) {
  if (!pred.valid() || !gt.valid()) throw ShapeError("ihr: invalid box " + to_string(pred) + " / " + to_string(gt));
  const int w = std::min(pred.x_max, gt.x_max) - std::max(pred.x_min, gt.x_min);
  const int h = std::min(pred.y_max, gt.y_max) - std::max(pred.y_min, gt.y_min);
  return w > 0 && h > 0 ? 1 : 0;
}

const BBox& gold_box_for(const data::Sample& sample, const std::string& anchor_token) {
  if (sample.gold_boxes.empty()) throw ConfigError("metrics: sample " + sample.sample_id + " has no gold box");
  for (const auto& g : sample.gold_boxes)
    if (g.name == anchor_token) return g.box;
  return sample.gold_boxes.front().box;
}

Grounder discovery_grounder(const vlm::Model& model) {
  return [&model](const data::Sample& s, const grounding::GroundingParams& params) {
    const auto ids = tokenize(s.question, model.vocab());
    const auto d = grounding::discover_evidence(model, s.image, ids, params);
    std::vector<Hit> hits;
    for (const auto& snap : d.snapshots)
      hits.push_back({snap.anchor_token, grounding::to_pixels(snap.matched, model.config().patch_size)});
    return hits;
  };
}

std::vector<LayerSweepRow> layer_sweep(const vlm::Model& model, const std::vector<data::Sample>& samples,
                                       const std::vector<vlm::LayerRange>& choices,
                                       const grounding::GroundingParams& base, const Grounder& grounder) {
  const Grounder g = grounder ? grounder : discovery_grounder(model);
  std::vector<LayerSweepRow> rows;
  for (const auto& layers : choices) {
    grounding::GroundingParams params = base;
    params.layers = layers;
    params.k = 1;
    std::vector<std::size_t> hits(samples.size(), 0), pairs(samples.size(), 0);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (const auto& h : g(samples[i], params)) {
        hits[i] += static_cast<std::size_t>(ihr(h.matched, gold_box_for(samples[i], h.anchor)));
        ++pairs[i];
      }
    }
    LayerSweepRow row{layers, 0.0, 0};
    std::size_t total = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      total += hits[i];
      row.pairs += pairs[i];
    }
    row.mean_ihr = row.pairs ? static_cast<double>(total) / static_cast<double>(row.pairs) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

EvalResult evaluate(const vlm::Model& model, const std::vector<data::Sample>& samples,
                    const cache::EvidenceCache& cache, const EvalParams& params) {
  EvalResult r;
  r.n = samples.size();
  r.trajectories.resize(samples.size());
  const RngStream root = RngStream(params.seed).split("eval");
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i)
    r.trajectories[i] = rollout::run_rollout(model, samples[i], cache, params.sampler, root.split(i));
  std::size_t correct = 0, inserted = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& t = r.trajectories[i];
    if (t.final_answer &&
        reward::normalize_answer(*t.final_answer) == reward::normalize_answer(samples[i].gold_answer))
      ++correct;
    if (t.insertion_count >= 1) ++inserted;
  }
  if (r.n) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
    r.insertion_rate = static_cast<double>(inserted) / static_cast<double>(r.n);
  }
  return r;
}

cache::EvidenceCache discover_all(const vlm::Model& model, const std::vector<data::Sample>& samples,
                                  const grounding::GroundingParams& params, bool* clamped) {
  std::vector<grounding::Discovery> found(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i)
    found[i] = grounding::discover_evidence(model, samples[i].image, tokenize(samples[i].question, model.vocab()),
                                            params);
  cache::EvidenceCache cache;
  bool any = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    any = any || found[i].k_clamped;
    cache.upsert(samples[i].sample_id, std::move(found[i].snapshots), model.version());
  }
  if (clamped) *clamped = any;
  return cache;
}

std::vector<KSweepRow> k_sweep(const vlm::Model& model, const std::vector<data::Sample>& samples,
                               const std::vector<int>& k_values, const grounding::GroundingParams& base,
                               const EvalParams& eval) {
  const int side = model.config().grid_side();
  const int per_side = (side + base.block_size - 1) / base.block_size;
  std::vector<KSweepRow> rows;
  for (int k : k_values) {
    grounding::GroundingParams params = base;
    params.k = k;
    KSweepRow row;
    row.k = k;
    row.k_used = std::min(k, per_side * per_side);
    const auto cache = discover_all(model, samples, params, &row.clamped);
    const auto res = evaluate(model, samples, cache, eval);
    row.accuracy = res.accuracy;
    row.insertion_rate = res.insertion_rate;
    rows.push_back(row);
  }
  return rows;
}

namespace {

Matrix source_rows(const vlm::Model& model, const data::Sample& sample, grounding::SourceSpace space,
                   vlm::LayerRange layers) {
  Matrix vision = vlm::embed_image(model, sample.image);
  if (space == grounding::SourceSpace::kInputEmbedding) return vision;
  const auto ids = tokenize(sample.question, model.vocab());
  const auto stack = vlm::forward(model, grounding::assemble_inputs(model, vision, ids));
  const Matrix hbar = grounding::mid_layer_average(stack, layers);
  const auto n = static_cast<std::size_t>(model.config().n_patches());
  Matrix out(n, hbar.cols());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < hbar.cols(); ++c) out(r, c) = static_cast<double>(static_cast<float>(hbar(r, c)));
  return out;
}

}  // namespace

grounding::EvidenceSnapshot random_snapshot(const vlm::Model& model, const data::Sample& sample,
                                            const grounding::EvidenceSnapshot& like,
                                            const grounding::GroundingParams& params, RngStream rng) {
  const int side = model.config().grid_side();
  const grounding::PatchBox& size = like.region.bbox_patches;
  if (size.rows() > side || size.cols() > side) throw ShapeError("random evidence: region larger than the grid");
  grounding::PatchBox box;
  box.row_min = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(side - size.rows() + 1)));
  box.col_min = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(side - size.cols() + 1)));
  box.row_max = box.row_min + size.rows() - 1;
  box.col_max = box.col_min + size.cols() - 1;
  const auto region = grounding::make_region({}, box, model.config().patch_size);
  const saliency::Anchor anchor{0, like.anchor_id, like.anchor_token, like.anchor_score};
  auto snap = grounding::extract_snapshot(region, source_rows(model, sample, like.source_space, params.layers), side,
                                          side, anchor, like.source_space, model.version());
  snap.matched = box;
  return snap;
}

cache::EvidenceCache random_cache(const vlm::Model& model, const std::vector<data::Sample>& samples,
                                  const cache::EvidenceCache& discovered, const grounding::GroundingParams& params,
                                  std::uint64_t seed) {
  const RngStream root = RngStream(seed).split("random-evidence");
  std::vector<std::vector<grounding::EvidenceSnapshot>> out(samples.size());
  std::vector<char> present(samples.size(), 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto entry = discovered.lookup(samples[i].sample_id);
    if (!entry) continue;
    present[i] = 1;
    const RngStream srng = root.split(i);
    for (std::size_t j = 0; j < entry->snapshots.size(); ++j)
      out[i].push_back(random_snapshot(model, samples[i], *entry->snapshots[j], params, srng.split(j)));
  }
  cache::EvidenceCache cache;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (present[i]) cache.upsert(samples[i].sample_id, std::move(out[i]), model.version());
  return cache;
}

AblationResult ablate_random_embeddings(const vlm::Model& model, const std::vector<data::Sample>& samples,
                                        const cache::EvidenceCache& discovered,
                                        const grounding::GroundingParams& params, const EvalParams& eval) {
  AblationResult r;
  r.discovered = evaluate(model, samples, discovered, eval);
  r.random = evaluate(model, samples, random_cache(model, samples, discovered, params, eval.seed), eval);
  return r;
}

}  // namespace sieve::metrics
