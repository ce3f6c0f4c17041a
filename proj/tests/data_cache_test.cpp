// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <omp.h>

#include <atomic>
#include <cstring>
#include <filesystem>
#include <thread>

#include "sieve/errors.hpp"
#include "sieve/evidence_cache.hpp"
#include "sieve/synth_data.hpp"

namespace sieve {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sieve_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

BBox pixel_bounds(const Image& img, Rgb color) {
  BBox b{img.width, img.height, -1, -1};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (img.at(x, y) == color) {
        b.x_min = std::min(b.x_min, x);
        b.y_min = std::min(b.y_min, y);
        b.x_max = std::max(b.x_max, x + 1);
        b.y_max = std::max(b.y_max, y + 1);
      }
  return b;
}

TEST(SynthData, FixedStreamGivesIdenticalSample) {
  const RngStream rng(42);
  EXPECT_EQ(data::generate_sample(rng, "a"), data::generate_sample(rng, "a"));
  EXPECT_NE(data::generate_sample(rng, "a").image, data::generate_sample(RngStream(43), "a").image);
}

TEST(SynthData, InvariantsHoldOnManySamples) {
  const auto samples = data::generate_samples(300, 9);
  int left_of = 0;
  for (const auto& s : samples) {
    ASSERT_NO_THROW(data::check_sample(s));
    EXPECT_EQ(data::answer_from_layout(s), s.gold_answer);
    EXPECT_TRUE(Vocab::standard().contains(s.gold_answer));
    ASSERT_GE(s.shapes.size(), 1u);
    ASSERT_LE(s.shapes.size(), 3u);
    for (const auto& p : s.shapes) {
      // The recorded box is the tight box of the rendered pixels.
      EXPECT_EQ(pixel_bounds(s.image, data::color_rgb(p.color)), p.box);
      EXPECT_GE(p.box.x_min, 2);
      EXPECT_GE(p.box.y_min, 2);
      EXPECT_LE(p.box.x_max, 62);
      EXPECT_LE(p.box.y_max, 62);
    }
    for (const auto& g : s.gold_boxes) {
      EXPECT_TRUE(g.box.valid());
      EXPECT_TRUE(std::any_of(s.shapes.begin(), s.shapes.end(),
                              [&](const auto& p) { return p.name == g.name && p.box == g.box; }));
    }
    if (s.kind == data::QuestionKind::kColor) {
      ASSERT_EQ(s.gold_boxes.size(), 1u);
      const auto it = std::find_if(s.shapes.begin(), s.shapes.end(),
                                   [&](const auto& p) { return p.name == s.gold_boxes[0].name; });
      EXPECT_EQ(it->color, s.gold_answer);
      EXPECT_EQ(s.question, "what color is the " + s.gold_boxes[0].name + "?");
    } else {
      ++left_of;
      ASSERT_EQ(s.gold_boxes.size(), 2u);
      EXPECT_TRUE(s.gold_answer == "yes" || s.gold_answer == "no");
    }
  }
  EXPECT_GT(left_of, 0);
}

TEST(SynthData, GenerationIsIndependentOfThreadCount) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto a = data::generate_samples(1500, 0);
  omp_set_num_threads(3);
  const auto b = data::generate_samples(1500, 0);
  omp_set_num_threads(saved);
  std::string ma, mb;
  for (const auto& s : a) ma += data::manifest_line(s);
  for (const auto& s : b) mb += data::manifest_line(s);
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(a, b);
}

TEST(SynthData, HeldOutSplitIsDistinct) {
  const auto train = data::generate_samples(5, 1);
  const auto held = data::generate_heldout(5, 1);
  EXPECT_EQ(held[0].sample_id, "h00000");
  EXPECT_EQ(train[0].sample_id, "s00000");
  EXPECT_NE(train[0].image, held[0].image);
}

TEST(SynthData, DatasetRoundTrip) {
  const auto dir = temp_dir("dataset");
  const std::string manifest = data::generate_dataset(12, 4, dir);
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 12);
  const auto loaded = data::load_dataset(dir);
  EXPECT_EQ(loaded, data::generate_samples(12, 4));
  for (const auto& s : loaded) EXPECT_NO_THROW(data::check_sample(s));

  const auto one = temp_dir("dataset_one");
  const std::string single = data::generate_dataset(1, 4, one);
  EXPECT_EQ(std::count(single.begin(), single.end(), '\n'), 1);
  EXPECT_THROW(data::generate_samples(0, 1), ConfigError);
  EXPECT_THROW(data::load_dataset(dir / "missing"), Error);
  fs::remove_all(dir);
  fs::remove_all(one);
}

// --- evidence cache -----------------------------------------------------------

grounding::EvidenceSnapshot snapshot(RngStream rng, int anchor_id, int rows, int cols, int d) {
  grounding::EvidenceSnapshot s;
  s.anchor_id = anchor_id;
  s.anchor_token = Vocab::standard().token(anchor_id);
  const int r0 = static_cast<int>(rng.next_below(4)), c0 = static_cast<int>(rng.next_below(4));
  s.region = grounding::make_region({}, {r0, c0, r0 + rows - 1, c0 + cols - 1}, 8);
  s.matched = s.region.bbox_patches;
  s.embeddings = Matrix(static_cast<std::size_t>(rows * cols), static_cast<std::size_t>(d));
  for (auto& v : s.embeddings.values()) v = static_cast<double>(static_cast<float>(rng.next_normal()));
  return s;
}

cache::EvidenceCache random_cache(std::size_t n, std::uint64_t seed) {
  cache::EvidenceCache c;
  RngStream rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<grounding::EvidenceSnapshot> snaps;
    const auto count = rng.next_below(3);
    for (std::uint64_t j = 0; j < count; ++j)
      snaps.push_back(snapshot(rng.split(i * 10 + j), 8 + static_cast<int>(j), 1 + static_cast<int>(j), 2, 16));
    c.upsert(data::sample_id_for(i), std::move(snaps), static_cast<std::uint32_t>(i % 5));
  }
  return c;
}

bool same_entries(const cache::EvidenceCache& a, const cache::EvidenceCache& b) {
  const auto ea = a.entries(), eb = b.entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (ea[i]->sample_id != eb[i]->sample_id || ea[i]->model_version != eb[i]->model_version ||
        ea[i]->refresh_count != eb[i]->refresh_count || ea[i]->snapshots.size() != eb[i]->snapshots.size())
      return false;
    for (std::size_t j = 0; j < ea[i]->snapshots.size(); ++j) {
      const auto& x = *ea[i]->snapshots[j];
      const auto& y = *eb[i]->snapshots[j];
      if (x.anchor_id != y.anchor_id || x.anchor_token != y.anchor_token || x.region != y.region ||
          x.embeddings.rows() != y.embeddings.rows() || x.embeddings.cols() != y.embeddings.cols() ||
          std::memcmp(x.embeddings.values().data(), y.embeddings.values().data(),
                      x.embeddings.values().size() * sizeof(double)) != 0)
        return false;
    }
  }
  return true;
}

TEST(EvidenceCache, UpsertLookupExamples) {
  cache::EvidenceCache c;
  EXPECT_EQ(c.lookup("x"), nullptr);
  c.upsert("a", {snapshot(RngStream(1), 8, 2, 2, 4)}, 3);
  const auto e = c.lookup("a");
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->sample_id, "a");
  EXPECT_EQ(e->refresh_count, 0u);
  EXPECT_EQ(e->snapshots[0]->model_version, 3u);
  c.upsert("a", {}, 4);
  EXPECT_EQ(c.size(), 1u);
  EXPECT_TRUE(c.lookup("a")->snapshots.empty());
  c.upsert("b", {snapshot(RngStream(2), 9, 1, 1, 4)}, 4);
  EXPECT_NE(c.lookup("a"), nullptr);
  EXPECT_NE(c.lookup("b"), nullptr);
  EXPECT_EQ(c.lookup("a")->refresh_count, 0u);
}

TEST(EvidenceCache, RefreshStampsAndCounts) {
  auto model = vlm::build_model(vlm::ModelConfig{});
  const auto s = data::generate_samples(1, 2)[0];
  const grounding::GroundingParams params;
  cache::EvidenceCache c;
  c.upsert(s.sample_id, cache::discover_for_sample(s, model, params), model.version());
  const auto before = c.lookup(s.sample_id);
  c.refresh(s, model, params);
  const auto same = c.lookup(s.sample_id);
  EXPECT_EQ(same->refresh_count, 1u);
  ASSERT_EQ(same->snapshots.size(), before->snapshots.size());
  for (std::size_t i = 0; i < same->snapshots.size(); ++i) EXPECT_EQ(*same->snapshots[i], *before->snapshots[i]);

  model.mutable_params()[0] += 1e-3;
  model.bump_version();
  c.refresh(s, model, params);
  const auto after = c.lookup(s.sample_id);
  EXPECT_EQ(after->refresh_count, 2u);
  EXPECT_GT(after->model_version, before->model_version);
  for (const auto& snap : after->snapshots) EXPECT_EQ(snap->model_version, after->model_version);

  grounding::GroundingParams bad;
  bad.layers = {5, 9};
  EXPECT_THROW(c.refresh(s, model, bad), ConfigError);
  EXPECT_EQ(c.lookup(s.sample_id), after);
  EXPECT_THROW(c.refresh(data::generate_samples(2, 2)[1], model, params), IndexError);
}

TEST(EvidenceCache, SvecRoundTripIsBitExact) {
  const auto c = random_cache(100, 5);
  const std::string bytes = c.serialize();
  const auto back = cache::EvidenceCache::deserialize(bytes);
  EXPECT_TRUE(same_entries(c, back));
  EXPECT_EQ(back.serialize(), bytes);

  const auto dir = temp_dir("svec");
  c.save(dir / "c.svec");
  EXPECT_TRUE(same_entries(c, cache::EvidenceCache::load(dir / "c.svec")));
  EXPECT_TRUE(fs::exists(dir / "c.svec.json"));
  fs::remove_all(dir);
}

TEST(EvidenceCache, HeaderLayout) {
  const std::string empty = cache::EvidenceCache{}.serialize();
  ASSERT_EQ(empty.size(), 12u);
  EXPECT_EQ(empty.substr(0, 4), "SVEC");
  EXPECT_EQ(empty.substr(4, 8), std::string("\x01\0\0\0\0\0\0\0", 8));
  EXPECT_EQ(cache::EvidenceCache::deserialize(empty).size(), 0u);

  cache::EvidenceCache one;
  one.upsert("k", {snapshot(RngStream(1), 10, 1, 2, 3)}, 7);
  const std::string b = one.serialize();
  // 12 header + (4 + 1 + 12) entry + (4 + 16 + 8) snapshot header + 6 floats.
  EXPECT_EQ(b.size(), 12u + 17u + 28u + 24u);
  std::uint32_t version = 0;
  std::memcpy(&version, b.data() + 12 + 5, 4);
  EXPECT_EQ(version, 7u);
}

TEST(EvidenceCache, TruncationAndCorruptionAreRejected) {
  const std::string bytes = random_cache(6, 11).serialize();
  for (std::size_t len = 0; len < bytes.size(); ++len)
    EXPECT_THROW(cache::EvidenceCache::deserialize(bytes.substr(0, len)), FormatError) << len;
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(cache::EvidenceCache::deserialize(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(cache::EvidenceCache::deserialize(bad), FormatError);
  EXPECT_THROW(cache::EvidenceCache::deserialize(bytes + "x"), FormatError);
  try {
    cache::EvidenceCache::deserialize(bytes.substr(0, 20));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

TEST(EvidenceCache, ReadersNeverSeeHalfWrittenEntries) {
  cache::EvidenceCache c;
  c.upsert("k", {snapshot(RngStream(0), 8, 2, 2, 8)}, 0);
  std::atomic<bool> stop{false};
  std::atomic<int> torn{0};
  std::thread reader([&] {
    while (!stop) {
      const auto e = c.lookup("k");
      for (const auto& s : e->snapshots)
        if (s->model_version != e->model_version) ++torn;
    }
  });
  for (std::uint32_t v = 1; v < 2000; ++v) c.upsert("k", {snapshot(RngStream(v), 8, 2, 2, 8)}, v);
  stop = true;
  reader.join();
  EXPECT_EQ(torn.load(), 0);
}

}  // namespace
}  // namespace sieve
