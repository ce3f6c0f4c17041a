// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sieve/bbox.hpp"
#include "sieve/image.hpp"
#include "sieve/rng.hpp"

namespace sieve::data {

inline constexpr std::array<std::string_view, 3> kShapes = {"circle", "square", "triangle"};
inline constexpr std::array<std::string_view, 6> kColors = {"red", "green", "blue", "yellow", "cyan", "magenta"};

Rgb color_rgb(std::string_view color);

struct PlacedShape {
  std::string name;
  std::string color;
  BBox box;  // tight bounds of the rendered pixels
  bool operator==(const PlacedShape&) const = default;
};

struct NamedBox {
  std::string name;
  BBox box;
  bool operator==(const NamedBox&) const = default;
};

enum class QuestionKind { kColor, kLeftOf };

struct Sample {
  std::string sample_id;
  Image image;
  std::string question;
  std::string gold_answer;
  QuestionKind kind = QuestionKind::kColor;
  std::vector<PlacedShape> shapes;
  std::vector<NamedBox> gold_boxes;  // the shapes the question names, in question order

  bool operator==(const Sample&) const = default;
};

struct GeneratorParams {
  int canvas = 64;
  int min_size = 12;
  int max_size = 20;
  int margin = 2;          // to the canvas border and between shapes
  double left_of_share = 0.3;  // fraction of multi-shape samples asking a position question
};

Sample generate_sample(RngStream rng, std::string sample_id, const GeneratorParams& params = {});

/// Answer derived from the shape list and question alone.
std::string answer_from_layout(const Sample& sample);

/// Throws FormatError describing the first violated sample invariant.
void check_sample(const Sample& sample);

std::string sample_id_for(std::size_t index);

std::vector<Sample> generate_samples(std::size_t n, std::uint64_t seed, const GeneratorParams& params = {});
/// An evaluation split on its own stream, disjoint from generate_samples;
/// ids are "h00000", "h00001", ...
std::vector<Sample> generate_heldout(std::size_t n, std::uint64_t seed, const GeneratorParams& params = {});

/// Writes images/<id>.ppm and manifest.jsonl under `dir`. Returns the manifest text.
std::string generate_dataset(std::size_t n, std::uint64_t seed, const std::filesystem::path& dir,
                             const GeneratorParams& params = {});

std::string manifest_line(const Sample& sample);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

}  // namespace sieve::data
