// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/visualize.hpp"

#include "json.hpp"
#include "sieve/errors.hpp"

namespace sieve::viz {

void draw_box(Image& image, const BBox& box, Rgb color) {
  if (!box.valid() || box.x_min < 0 || box.y_min < 0 || box.x_max > image.width || box.y_max > image.height)
    throw ShapeError("visualize: box " + to_string(box) + " outside the image");
  for (int x = box.x_min; x < box.x_max; ++x) {
    image.set(x, box.y_min, color);
    image.set(x, box.y_max - 1, color);
  }
  for (int y = box.y_min; y < box.y_max; ++y) {
    image.set(box.x_min, y, color);
    image.set(box.x_max - 1, y, color);
  }
}

Image annotate(const Image& image, std::span<const grounding::EvidenceSnapshot> snapshots, int patch_size) {
  Image out = image;
  for (const auto& s : snapshots) draw_box(out, s.region.bbox_pixels, kExpanded);
  for (const auto& s : snapshots) draw_box(out, grounding::to_pixels(s.matched, patch_size), kMatched);
  return out;
}

std::string boxes_json(const std::string& sample_id, std::span<const grounding::EvidenceSnapshot> snapshots,
                       int patch_size) {
  auto arr = [](const BBox& b) { return nlohmann::ordered_json::array({b.x_min, b.y_min, b.x_max, b.y_max}); };
  nlohmann::ordered_json j;
  j["sample_id"] = sample_id;
  j["boxes"] = nlohmann::ordered_json::array();
  for (const auto& s : snapshots) {
    nlohmann::ordered_json b;
    b["anchor"] = s.anchor_token;
    b["matched"] = arr(grounding::to_pixels(s.matched, patch_size));
    b["expanded"] = arr(s.region.bbox_pixels);
    j["boxes"].push_back(std::move(b));
  }
  return j.dump(2) + "\n";
}

void visualize(const std::string& sample_id, const Image& image,
               std::span<const grounding::EvidenceSnapshot> snapshots, int patch_size,
               const std::filesystem::path& out) {
  const Image annotated = annotate(image, snapshots, patch_size);
  const std::string sidecar = boxes_json(sample_id, snapshots, patch_size);
  write_file_atomic(out, encode_ppm(annotated));
  write_file_atomic(out.string() + ".json", sidecar);
}

}  // namespace sieve::viz
