// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sieve/bbox.hpp"
#include "sieve/image.hpp"
#include "sieve/numerics.hpp"
#include "sieve/saliency.hpp"
#include "sieve/toy_vlm.hpp"

namespace sieve::grounding {

struct AffinityMap {
  std::size_t anchor_position = 0;
  std::vector<double> sims;
  std::vector<double> weights;
  int rows = 0;
  int cols = 0;
  double tau = 0.0;
};

/// Inclusive patch-unit rectangle.
struct PatchBox {
  int row_min = 0;
  int col_min = 0;
  int row_max = 0;
  int col_max = 0;

  int rows() const { return row_max - row_min + 1; }
  int cols() const { return col_max - col_min + 1; }
  int count() const { return rows() * cols(); }
  bool operator==(const PatchBox&) const = default;
};

struct BlockCoord {
  int row = 0;  // block units
  int col = 0;
  bool operator==(const BlockCoord&) const = default;
};

/// Grid of block scores; blocks tile the patch grid, edge blocks may be partial.
struct BlockScores {
  int patch_rows = 0;
  int patch_cols = 0;
  int block_size = 1;
  int rows = 0;  // block rows
  int cols = 0;
  std::vector<double> scores;  // row-major over blocks

  double at(int r, int c) const { return scores[static_cast<std::size_t>(r * cols + c)]; }
  PatchBox patches_of(BlockCoord b) const;
};

struct Region {
  std::vector<BlockCoord> blocks;
  PatchBox bbox_patches;
  BBox bbox_pixels;  // half-open pixel box covering bbox_patches
  bool operator==(const Region&) const = default;
};

BBox to_pixels(const PatchBox& box, int patch_size);
Region make_region(std::vector<BlockCoord> blocks, const PatchBox& box, int patch_size);

enum class SourceSpace : std::uint8_t { kInputEmbedding, kMidLayer };
std::string to_string(SourceSpace s);

struct EvidenceSnapshot {
  int anchor_id = 0;
  std::string anchor_token;
  double anchor_score = 0.0;
  PatchBox matched;  // hull of the selected blocks
  Region region;     // expanded region whose embeddings are stored
  Matrix embeddings;  // one row per patch inside region.bbox_patches, row-major
  SourceSpace source_space = SourceSpace::kInputEmbedding;
  std::uint32_t model_version = 0;

  bool operator==(const EvidenceSnapshot&) const = default;
};

using SnapshotPtr = std::shared_ptr<const EvidenceSnapshot>;

/// Mean of stack.layers over the inclusive 1-based range.
Matrix mid_layer_average(const vlm::HiddenStateStack& stack, vlm::LayerRange layers);

/// Optional per-coordinate centering across rows, then unit l2 rows; zero rows stay zero.
Matrix normalize_rows(const Matrix& vectors, bool center);

/// Cosine similarities of a unit anchor vector to unit patch rows and their
/// temperature softmax.
AffinityMap anchor_patch_affinity(std::span<const double> anchor, const Matrix& patches, int rows, int cols,
                                  double tau);

BlockScores score_blocks(const AffinityMap& map, int block_size);
BlockScores score_blocks(std::span<const double> patch_values, int rows, int cols, int block_size);

struct Selection {
  Region region;
  std::size_t k_used = 0;
  bool clamped = false;
};

/// Top-k blocks (ties in row-major order) and their bounding rectangle.
Selection select_region(const BlockScores& blocks, int k, int patch_size);

Region expand_region(const Region& region, int margin_blocks, const BlockScores& grid, int patch_size);

EvidenceSnapshot extract_snapshot(const Region& region, const Matrix& vision_embeddings, int grid_rows, int grid_cols,
                                  const saliency::Anchor& anchor, SourceSpace source_space,
                                  std::uint32_t model_version);

struct GroundingParams {
  vlm::LayerRange layers{3, 4};
  double tau = 0.1;
  int block_size = 2;
  int k = 1;
  int margin_blocks = 1;
  bool center = true;
  SourceSpace source_space = SourceSpace::kInputEmbedding;
  saliency::SaliencyParams saliency;
};

struct Discovery {
  int target_id = 0;
  saliency::AnchorSet anchors;
  std::vector<AffinityMap> maps;  // one per anchor
  std::vector<EvidenceSnapshot> snapshots;
  bool k_clamped = false;
};

/// Full discovery pass for one image and prompt: saliency at the final prompt
/// position, anchor filtering, mid-layer matching, block selection, expansion
/// and snapshot extraction. One snapshot per surviving anchor.
Discovery discover_evidence(const vlm::Model& model, const Image& image, std::span<const int> prompt_ids,
                            const GroundingParams& params,
                            const saliency::StopWords& stop_words = saliency::default_stop_words());

/// Input rows for (image, text): patch embeddings then token embeddings at
/// the following positions.
Matrix assemble_inputs(const vlm::Model& model, const Matrix& vision, std::span<const int> text_ids);

}  // namespace sieve::grounding
