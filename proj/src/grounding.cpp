// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/grounding.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sieve/errors.hpp"

namespace sieve::grounding {

std::string to_string(SourceSpace s) { return s == SourceSpace::kInputEmbedding ? "input-embedding" : "mid-layer"; }

PatchBox BlockScores::patches_of(BlockCoord b) const {
  PatchBox p;
  p.row_min = b.row * block_size;
  p.col_min = b.col * block_size;
  p.row_max = std::min(patch_rows, p.row_min + block_size) - 1;
  p.col_max = std::min(patch_cols, p.col_min + block_size) - 1;
  return p;
}

BBox to_pixels(const PatchBox& box, int patch_size) {
  return {box.col_min * patch_size, box.row_min * patch_size, (box.col_max + 1) * patch_size,
          (box.row_max + 1) * patch_size};
}

Region make_region(std::vector<BlockCoord> blocks, const PatchBox& box, int patch_size) {
  return {std::move(blocks), box, to_pixels(box, patch_size)};
}

Matrix mid_layer_average(const vlm::HiddenStateStack& stack, vlm::LayerRange layers) {
  const int n = static_cast<int>(stack.layers.size());
  if (layers.first < 1 || layers.last > n || layers.first > layers.last)
    throw ConfigError("grounding: layer range [" + std::to_string(layers.first) + ", " + std::to_string(layers.last) +
                      "] is empty or outside [1, " + std::to_string(n) + "]");
  const Matrix& first = stack.layers[static_cast<std::size_t>(layers.first - 1)];
  if (layers.count() == 1) return first;
  Matrix out(first.rows(), first.cols());
  auto acc = out.values();
  for (int l = layers.first; l <= layers.last; ++l) {
    auto src = stack.layers[static_cast<std::size_t>(l - 1)].values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
  }
  const double inv = 1.0 / layers.count();
  for (auto& v : acc) v *= inv;
  return out;
}

Matrix normalize_rows(const Matrix& vectors, bool center) {
  Matrix out = vectors;
  const std::size_t m = out.rows(), d = out.cols();
  if (center && m > 0) {
    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += out(r, c);
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) out(r, c) -= mean[c];
  }
  for (std::size_t r = 0; r < m; ++r) {
    auto row = out.row(r);
    const double norm = numerics::l2_norm(row);
    // Rows this small are numerically indistinguishable from duplicates
    // that centering cancelled.
    if (!(norm > 1e-12)) {
      std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    for (auto& v : row) v /= norm;
  }
  return out;
}

AffinityMap anchor_patch_affinity(std::span<const double> anchor, const Matrix& patches, int rows, int cols,
                                  double tau) {
  if (!(tau > 0.0)) throw ConfigError("grounding: temperature must be positive");
  if (patches.rows() != static_cast<std::size_t>(rows) * cols)
    throw ShapeError("grounding: " + std::to_string(patches.rows()) + " patch rows for a " + std::to_string(rows) +
                     "x" + std::to_string(cols) + " grid");
  if (anchor.size() != patches.cols()) throw ShapeError("grounding: anchor width does not match patch width");
  AffinityMap map;
  map.rows = rows;
  map.cols = cols;
  map.tau = tau;
  map.sims.resize(patches.rows());
  for (std::size_t j = 0; j < patches.rows(); ++j)
    map.sims[j] = std::clamp(numerics::dot(anchor, patches.row(j)), -1.0, 1.0);
  map.weights = numerics::stable_softmax(map.sims, tau);
  double sum = 0.0;
  for (double w : map.weights) sum += w;
  if (std::abs(sum - 1.0) > 1e-9) throw NumericError("grounding: affinity weights sum to " + std::to_string(sum));
  return map;
}

BlockScores score_blocks(std::span<const double> values, int rows, int cols, int block_size) {
  if (block_size < 1) throw ConfigError("grounding: block size must be at least 1");
  if (values.size() != static_cast<std::size_t>(rows) * cols) throw ShapeError("grounding: score grid size mismatch");
  BlockScores b;
  b.patch_rows = rows;
  b.patch_cols = cols;
  b.block_size = block_size;
  b.rows = (rows + block_size - 1) / block_size;
  b.cols = (cols + block_size - 1) / block_size;
  b.scores.assign(static_cast<std::size_t>(b.rows * b.cols), -std::numeric_limits<double>::infinity());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      auto& s = b.scores[static_cast<std::size_t>((r / block_size) * b.cols + c / block_size)];
      s = std::max(s, values[static_cast<std::size_t>(r * cols + c)]);
    }
  return b;
}

BlockScores score_blocks(const AffinityMap& map, int block_size) {
  return score_blocks(map.weights, map.rows, map.cols, block_size);
}

Selection select_region(const BlockScores& blocks, int k, int patch_size) {
  if (k < 1) throw ConfigError("grounding: k must be at least 1");
  const std::size_t total = blocks.scores.size();
  if (total == 0) throw ShapeError("grounding: empty block grid");
  Selection sel;
  sel.k_used = std::min<std::size_t>(static_cast<std::size_t>(k), total);
  sel.clamped = sel.k_used < static_cast<std::size_t>(k);
  if (sel.clamped) spdlog::warn("grounding: k = {} exceeds the {} available blocks; clamped", k, total);

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return blocks.scores[a] > blocks.scores[b]; });

  std::vector<BlockCoord> chosen;
  PatchBox hull{blocks.patch_rows, blocks.patch_cols, -1, -1};
  for (std::size_t i = 0; i < sel.k_used; ++i) {
    BlockCoord bc{static_cast<int>(order[i]) / blocks.cols, static_cast<int>(order[i]) % blocks.cols};
    chosen.push_back(bc);
    const PatchBox p = blocks.patches_of(bc);
    hull.row_min = std::min(hull.row_min, p.row_min);
    hull.col_min = std::min(hull.col_min, p.col_min);
    hull.row_max = std::max(hull.row_max, p.row_max);
    hull.col_max = std::max(hull.col_max, p.col_max);
  }
  sel.region = make_region(std::move(chosen), hull, patch_size);
  return sel;
}

Region expand_region(const Region& region, int margin_blocks, const BlockScores& grid, int patch_size) {
  if (margin_blocks < 0) throw ConfigError("grounding: margin must be non-negative");
  const int m = margin_blocks * grid.block_size;
  PatchBox b = region.bbox_patches;
  b.row_min = std::max(0, b.row_min - m);
  b.col_min = std::max(0, b.col_min - m);
  b.row_max = std::min(grid.patch_rows - 1, b.row_max + m);
  b.col_max = std::min(grid.patch_cols - 1, b.col_max + m);
  return make_region(region.blocks, b, patch_size);
}

EvidenceSnapshot extract_snapshot(const Region& region, const Matrix& vision_embeddings, int grid_rows, int grid_cols,
                                  const saliency::Anchor& anchor, SourceSpace source_space,
                                  std::uint32_t model_version) {
  const PatchBox& b = region.bbox_patches;
  if (b.row_min < 0 || b.col_min < 0 || b.row_max >= grid_rows || b.col_max >= grid_cols || b.row_min > b.row_max ||
      b.col_min > b.col_max)
    throw ShapeError("grounding: region outside the " + std::to_string(grid_rows) + "x" + std::to_string(grid_cols) +
                     " patch grid");
  if (vision_embeddings.rows() < static_cast<std::size_t>(grid_rows) * grid_cols)
    throw ShapeError("grounding: vision block smaller than the patch grid");
  EvidenceSnapshot s;
  s.anchor_id = anchor.token_id;
  s.anchor_token = anchor.token;
  s.anchor_score = anchor.score;
  s.matched = b;
  s.region = region;
  s.source_space = source_space;
  s.model_version = model_version;
  s.embeddings = Matrix(static_cast<std::size_t>(b.count()), vision_embeddings.cols());
  std::size_t out = 0;
  for (int r = b.row_min; r <= b.row_max; ++r)
    for (int c = b.col_min; c <= b.col_max; ++c) {
      auto src = vision_embeddings.row(static_cast<std::size_t>(r * grid_cols + c));
      std::copy(src.begin(), src.end(), s.embeddings.row(out++).begin());
    }
  return s;
}

Matrix assemble_inputs(const vlm::Model& model, const Matrix& vision, std::span<const int> text_ids) {
  Matrix x = vision;
  for (std::size_t i = 0; i < text_ids.size(); ++i) x.append_row(vlm::embed_token(model, text_ids[i], x.rows()));
  return x;
}

Discovery discover_evidence(const vlm::Model& model, const Image& image, std::span<const int> prompt_ids,
                            const GroundingParams& params, const saliency::StopWords& stop_words) {
  const auto& cfg = model.config();
  if (prompt_ids.empty()) throw ConfigError("grounding: prompt is empty");
  const int side = cfg.grid_side();
  const auto n_patches = static_cast<std::size_t>(cfg.n_patches());

  const Matrix vision = vlm::embed_image(model, image);
  const Matrix inputs = assemble_inputs(model, vision, prompt_ids);
  const auto stream = vlm::TokenStream::make(side, side, prompt_ids);

  Discovery out;
  const auto stack = vlm::forward(model, inputs);
  out.target_id = vlm::sample_next_token(stack.logits, 0.0, RngStream{}).first;
  const auto report = vlm::grad_scalar_logit(model, inputs, out.target_id);
  const auto scores = saliency::compute_saliency(report.grads, inputs);
  out.anchors = saliency::select_anchors(scores, stream, model.vocab(), stop_words, params.saliency);
  if (out.anchors.empty()) return out;

  const Matrix hbar = mid_layer_average(stack, params.layers);
  Matrix patches(n_patches, hbar.cols());
  std::copy_n(hbar.values().begin(), patches.size(), patches.values().begin());

  // Anchors are centered by the patch mean so that both sides of the cosine
  // live in the same shifted frame.
  std::vector<double> mean(hbar.cols(), 0.0);
  if (params.center) {
    for (std::size_t j = 0; j < n_patches; ++j)
      for (std::size_t c = 0; c < hbar.cols(); ++c) mean[c] += patches(j, c);
    for (auto& v : mean) v /= static_cast<double>(n_patches);
  }
  const Matrix unit_patches = normalize_rows(patches, params.center);

  Matrix source = vision;
  if (params.source_space == SourceSpace::kMidLayer) {
    source = patches;
    for (auto& v : source.values()) v = static_cast<double>(static_cast<float>(v));
  }

  for (const auto& anchor : out.anchors.anchors) {
    Matrix a(1, hbar.cols());
    for (std::size_t c = 0; c < hbar.cols(); ++c) a(0, c) = hbar(anchor.position, c) - mean[c];
    a = normalize_rows(a, false);
    auto map = anchor_patch_affinity(a.row(0), unit_patches, side, side, params.tau);
    const auto blocks = score_blocks(map, params.block_size);
    const auto sel = select_region(blocks, params.k, cfg.patch_size);
    out.k_clamped = out.k_clamped || sel.clamped;
    const Region expanded = expand_region(sel.region, params.margin_blocks, blocks, cfg.patch_size);
    auto snap = extract_snapshot(expanded, source, side, side, anchor, params.source_space, model.version());
    snap.matched = sel.region.bbox_patches;
    out.snapshots.push_back(std::move(snap));
    out.maps.push_back(std::move(map));
  }
  return out;
}

}  // namespace sieve::grounding
