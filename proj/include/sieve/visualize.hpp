// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "sieve/grounding.hpp"
#include "sieve/image.hpp"

namespace sieve::viz {

inline constexpr Rgb kMatched{0, 255, 0};
inline constexpr Rgb kExpanded{255, 0, 0};

/// 1-pixel outline along the inner edge of a half-open box. Throws ShapeError
/// when the box is invalid or leaves the image.
void draw_box(Image& image, const BBox& box, Rgb color);

/// Expanded regions in red, then matched boxes in green on top.
Image annotate(const Image& image, std::span<const grounding::EvidenceSnapshot> snapshots, int patch_size);

/// {"sample_id", "boxes": [{"anchor", "matched", "expanded"}]} with boxes as
/// [x_min, y_min, x_max, y_max].
std::string boxes_json(const std::string& sample_id, std::span<const grounding::EvidenceSnapshot> snapshots,
                       int patch_size);

/// Writes the annotated PPM to `out` and the box sidecar to `out` + ".json".
void visualize(const std::string& sample_id, const Image& image,
               std::span<const grounding::EvidenceSnapshot> snapshots, int patch_size,
               const std::filesystem::path& out);

}  // namespace sieve::viz
