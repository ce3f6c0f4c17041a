// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/synth_data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "sieve/errors.hpp"
#include "sieve/vocab.hpp"

namespace sieve::data {

using json = nlohmann::ordered_json;

namespace {

bool inside_shape(std::string_view name, int lx, int ly, int s) {
  if (name == "square") return true;
  const double half = s / 2.0;
  const double dx = lx + 0.5 - half;
  if (name == "circle") {
    const double dy = ly + 0.5 - half;
    return dx * dx + dy * dy <= half * half;
  }
  // Triangle with its apex on the top row and its base on the bottom row.
  return std::abs(dx) <= (ly + 1) * half / s;
}

// Draws the shape into `image` and returns the tight bounds of its pixels.
BBox render(Image& image, std::string_view name, Rgb color, int x0, int y0, int s) {
  BBox b{x0 + s, y0 + s, x0, y0};
  for (int ly = 0; ly < s; ++ly)
    for (int lx = 0; lx < s; ++lx) {
      if (!inside_shape(name, lx, ly, s)) continue;
      image.set(x0 + lx, y0 + ly, color);
      b.x_min = std::min(b.x_min, x0 + lx);
      b.y_min = std::min(b.y_min, y0 + ly);
      b.x_max = std::max(b.x_max, x0 + lx + 1);
      b.y_max = std::max(b.y_max, y0 + ly + 1);
    }
  return b;
}

bool overlaps_with_gap(const BBox& a, const BBox& b, int gap) {
  return a.x_min < b.x_max + gap && b.x_min < a.x_max + gap && a.y_min < b.y_max + gap && b.y_min < a.y_max + gap;
}

template <typename T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.next_below(i)]);
}

// Doubled horizontal center, so the comparison stays in integers.
int center2(const BBox& b) { return b.x_min + b.x_max; }

const PlacedShape& find_shape(const Sample& s, std::string_view name) {
  for (const auto& p : s.shapes)
    if (p.name == name) return p;
  throw FormatError("sample " + s.sample_id + ": question names absent shape " + std::string(name));
}

json box_json(const BBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

BBox box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("manifest: box must be a 4-element array");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

Rgb color_rgb(std::string_view color) {
  if (color == "red") return {255, 0, 0};
  if (color == "green") return {0, 255, 0};
  if (color == "blue") return {0, 0, 255};
  if (color == "yellow") return {255, 255, 0};
  if (color == "cyan") return {0, 255, 255};
  if (color == "magenta") return {255, 0, 255};
  throw ConfigError("unknown color " + std::string(color));
}

std::string sample_id_for(std::size_t index) { return fmt::format("s{:05d}", index); }

Sample generate_sample(RngStream rng, std::string sample_id, const GeneratorParams& p) {
  if (p.min_size < 3 || p.max_size < p.min_size || p.canvas < p.max_size + 2 * p.margin)
    throw ConfigError("synth: shape sizes do not fit the canvas");
  for (int attempt = 0;; ++attempt) {
    RngStream r = rng.split(static_cast<std::uint64_t>(attempt));
    Sample s;
    s.sample_id = sample_id;
    s.image = Image(p.canvas, p.canvas);

    const std::size_t n = 1 + r.next_below(3);
    std::vector<std::string_view> names(kShapes.begin(), kShapes.end());
    std::vector<std::string_view> colors(kColors.begin(), kColors.end());
    shuffle(names, r);
    shuffle(colors, r);

    bool placed_all = true;
    for (std::size_t i = 0; i < n && placed_all; ++i) {
      bool placed = false;
      for (int tries = 0; tries < 64 && !placed; ++tries) {
        const int size = p.min_size + static_cast<int>(r.next_below(static_cast<std::uint64_t>(p.max_size - p.min_size + 1)));
        const auto span = static_cast<std::uint64_t>(p.canvas - 2 * p.margin - size + 1);
        const int x0 = p.margin + static_cast<int>(r.next_below(span));
        const int y0 = p.margin + static_cast<int>(r.next_below(span));
        const BBox outer{x0, y0, x0 + size, y0 + size};
        const bool clash = std::any_of(s.shapes.begin(), s.shapes.end(),
                                       [&](const PlacedShape& o) { return overlaps_with_gap(outer, o.box, p.margin); });
        if (clash) continue;
        const BBox tight = render(s.image, names[i], color_rgb(colors[i]), x0, y0, size);
        s.shapes.push_back({std::string(names[i]), std::string(colors[i]), tight});
        placed = true;
      }
      placed_all = placed;
    }
    if (!placed_all) continue;

    const bool left_of = n >= 2 && r.next_uniform() < p.left_of_share;
    if (left_of) {
      const auto& a = s.shapes[0];
      const auto& b = s.shapes[1];
      if (center2(a.box) == center2(b.box)) continue;
      s.kind = QuestionKind::kLeftOf;
      s.question = fmt::format("is the {} left of the {}?", a.name, b.name);
      s.gold_answer = center2(a.box) < center2(b.box) ? "yes" : "no";
      s.gold_boxes = {{a.name, a.box}, {b.name, b.box}};
    } else {
      const auto& t = s.shapes[r.next_below(n)];
      s.kind = QuestionKind::kColor;
      s.question = fmt::format("what color is the {}?", t.name);
      s.gold_answer = t.color;
      s.gold_boxes = {{t.name, t.box}};
    }
    return s;
  }
}

std::string answer_from_layout(const Sample& s) {
  if (s.gold_boxes.empty()) throw FormatError("sample " + s.sample_id + ": no gold boxes");
  if (s.kind == QuestionKind::kColor) return find_shape(s, s.gold_boxes[0].name).color;
  if (s.gold_boxes.size() != 2) throw FormatError("sample " + s.sample_id + ": position question needs two boxes");
  const auto& a = find_shape(s, s.gold_boxes[0].name);
  const auto& b = find_shape(s, s.gold_boxes[1].name);
  return center2(a.box) < center2(b.box) ? "yes" : "no";
}

void check_sample(const Sample& s) {
  const Vocab vocab = Vocab::standard();
  auto fail = [&](const std::string& why) { throw FormatError("sample " + s.sample_id + ": " + why); };
  if (!vocab.contains(s.gold_answer)) fail("gold answer '" + s.gold_answer + "' is not in the lexicon");
  for (const auto& g : s.gold_boxes) {
    if (!g.box.valid() || g.box.x_min < 0 || g.box.y_min < 0 || g.box.x_max > s.image.width ||
        g.box.y_max > s.image.height)
      fail("gold box " + to_string(g.box) + " outside the image");
  }
  if (answer_from_layout(s) != s.gold_answer) fail("gold answer disagrees with the layout");
}

namespace {

std::vector<Sample> generate_split(std::size_t n, const RngStream& root, char prefix, const GeneratorParams& params) {
  if (n < 1) throw ConfigError("synth: n must be at least 1");
  std::vector<Sample> out(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i)
    out[i] = generate_sample(root.split(static_cast<std::uint64_t>(i)), fmt::format("{}{:05d}", prefix, i), params);
  return out;
}

}  // namespace

std::vector<Sample> generate_samples(std::size_t n, std::uint64_t seed, const GeneratorParams& params) {
  return generate_split(n, RngStream(seed).split("synth"), 's', params);
}

std::vector<Sample> generate_heldout(std::size_t n, std::uint64_t seed, const GeneratorParams& params) {
  return generate_split(n, RngStream(seed).split("heldout"), 'h', params);
}

std::string manifest_line(const Sample& s) {
  json j;
  j["id"] = s.sample_id;
  j["image"] = "images/" + s.sample_id + ".ppm";
  j["question"] = s.question;
  j["kind"] = s.kind == QuestionKind::kColor ? "color" : "left_of";
  j["answer"] = s.gold_answer;
  json shapes = json::array();
  for (const auto& p : s.shapes) shapes.push_back({{"name", p.name}, {"color", p.color}, {"box", box_json(p.box)}});
  j["shapes"] = shapes;
  json gold = json::array();
  for (const auto& g : s.gold_boxes) gold.push_back({{"name", g.name}, {"box", box_json(g.box)}});
  j["gold_boxes"] = gold;
  return j.dump();
}

std::string generate_dataset(std::size_t n, std::uint64_t seed, const std::filesystem::path& dir,
                             const GeneratorParams& params) {
  const auto samples = generate_samples(n, seed, params);
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::string manifest;
  for (const auto& s : samples) {
    write_ppm(s.image, dir / "images" / (s.sample_id + ".ppm"));
    manifest += manifest_line(s);
    manifest += '\n';
  }
  write_file_atomic(dir / "manifest.jsonl", manifest);
  return manifest;
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  std::istringstream in(read_file(dir / "manifest.jsonl"));
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Sample s;
      s.sample_id = j.at("id").get<std::string>();
      s.question = j.at("question").get<std::string>();
      s.gold_answer = j.at("answer").get<std::string>();
      const auto kind = j.at("kind").get<std::string>();
      if (kind != "color" && kind != "left_of") throw FormatError("unknown question kind " + kind);
      s.kind = kind == "color" ? QuestionKind::kColor : QuestionKind::kLeftOf;
      for (const auto& p : j.at("shapes"))
        s.shapes.push_back({p.at("name").get<std::string>(), p.at("color").get<std::string>(), box_from(p.at("box"))});
      for (const auto& g : j.at("gold_boxes")) s.gold_boxes.push_back({g.at("name").get<std::string>(), box_from(g.at("box"))});
      s.image = read_ppm(dir / j.at("image").get<std::string>());
      check_sample(s);
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw FormatError("manifest " + (dir / "manifest.jsonl").string() + " has no samples");
  return out;
}

}  // namespace sieve::data
