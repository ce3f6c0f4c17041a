// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/evidence_cache.hpp"

#include <cstring>
#include <mutex>

#include "json.hpp"
#include "sieve/errors.hpp"
#include "sieve/image.hpp"

namespace sieve::cache {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'E', 'C'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  [[noreturn]] void fail(const std::string& why, std::size_t at) const {
    throw FormatError("svec: " + why + " at offset " + std::to_string(at));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) fail(std::string("truncated ") + what, pos_);
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(int v, const char* what) {
  if (v < 0) throw FormatError(std::string("svec: negative ") + what + " cannot be stored");
  return static_cast<std::uint32_t>(v);
}

nlohmann::ordered_json patch_box_json(const grounding::PatchBox& b) {
  return nlohmann::ordered_json::array({b.row_min, b.col_min, b.row_max, b.col_max});
}

}  // namespace

EvidenceCache::EvidenceCache(const EvidenceCache& other) {
  std::shared_lock lock(other.mu_);
  entries_ = other.entries_;
}

EvidenceCache& EvidenceCache::operator=(const EvidenceCache& other) {
  if (this == &other) return *this;
  std::map<std::string, EntryPtr> copy;
  {
    std::shared_lock lock(other.mu_);
    copy = other.entries_;
  }
  std::unique_lock lock(mu_);
  entries_ = std::move(copy);
  return *this;
}

void EvidenceCache::upsert(const std::string& sample_id, std::vector<grounding::EvidenceSnapshot> snapshots,
                           std::uint32_t model_version) {
  auto entry = std::make_shared<CacheEntry>();
  entry->sample_id = sample_id;
  entry->model_version = model_version;
  for (auto& s : snapshots) {
    s.model_version = model_version;
    entry->snapshots.push_back(std::make_shared<const grounding::EvidenceSnapshot>(std::move(s)));
  }
  std::unique_lock lock(mu_);
  auto it = entries_.find(sample_id);
  if (it != entries_.end()) entry->refresh_count = it->second->refresh_count;
  entries_[sample_id] = std::move(entry);
}

EntryPtr EvidenceCache::lookup(const std::string& sample_id) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(sample_id);
  return it == entries_.end() ? nullptr : it->second;
}

void EvidenceCache::refresh(const data::Sample& sample, const vlm::Model& model,
                            const grounding::GroundingParams& params) {
  auto snapshots = discover_for_sample(sample, model, params);
  auto entry = std::make_shared<CacheEntry>();
  entry->sample_id = sample.sample_id;
  entry->model_version = model.version();
  for (auto& s : snapshots) {
    s.model_version = model.version();
    entry->snapshots.push_back(std::make_shared<const grounding::EvidenceSnapshot>(std::move(s)));
  }
  std::unique_lock lock(mu_);
  auto it = entries_.find(sample.sample_id);
  if (it == entries_.end()) throw IndexError("cache: refresh of unknown sample " + sample.sample_id);
  entry->refresh_count = it->second->refresh_count + 1;
  it->second = std::move(entry);
}

std::size_t EvidenceCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::vector<EntryPtr> EvidenceCache::entries() const {
  std::shared_lock lock(mu_);
  std::vector<EntryPtr> out;
  out.reserve(entries_.size());
  for (const auto& [_, e] : entries_) out.push_back(e);
  return out;
}

std::string EvidenceCache::serialize() const {
  const auto all = entries();
  std::string out(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(all.size()));
  for (const auto& e : all) {
    put_u32(out, static_cast<std::uint32_t>(e->sample_id.size()));
    out += e->sample_id;
    put_u32(out, e->model_version);
    put_u32(out, e->refresh_count);
    put_u32(out, static_cast<std::uint32_t>(e->snapshots.size()));
    for (const auto& s : e->snapshots) {
      put_u32(out, checked_u32(s->anchor_id, "anchor id"));
      const auto& b = s->region.bbox_patches;
      put_u32(out, checked_u32(b.row_min, "bbox"));
      put_u32(out, checked_u32(b.col_min, "bbox"));
      put_u32(out, checked_u32(b.row_max, "bbox"));
      put_u32(out, checked_u32(b.col_max, "bbox"));
      put_u32(out, static_cast<std::uint32_t>(s->embeddings.rows()));
      put_u32(out, static_cast<std::uint32_t>(s->embeddings.cols()));
      for (double v : s->embeddings.values()) put_f32(out, static_cast<float>(v));
    }
  }
  return out;
}

std::string EvidenceCache::sidecar_json() const {
  using json = nlohmann::ordered_json;
  json root;
  root["format"] = "SVEC";
  root["version"] = kFormatVersion;
  json list = json::array();
  for (const auto& e : entries()) {
    json je;
    je["sample_id"] = e->sample_id;
    je["model_version"] = e->model_version;
    je["refresh_count"] = e->refresh_count;
    json snaps = json::array();
    for (const auto& s : e->snapshots) {
      const auto& px = s->region.bbox_pixels;
      snaps.push_back({{"anchor_id", s->anchor_id},
                       {"anchor", s->anchor_token},
                       {"anchor_score", s->anchor_score},
                       {"bbox_patches", patch_box_json(s->region.bbox_patches)},
                       {"matched_patches", patch_box_json(s->matched)},
                       {"bbox_pixels", json::array({px.x_min, px.y_min, px.x_max, px.y_max})},
                       {"n_vectors", s->embeddings.rows()},
                       {"d", s->embeddings.cols()},
                       {"source_space", grounding::to_string(s->source_space)}});
    }
    je["snapshots"] = std::move(snaps);
    list.push_back(std::move(je));
  }
  root["entries"] = std::move(list);
  return root.dump(2) + "\n";
}

void EvidenceCache::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
  write_file_atomic(path.string() + ".json", sidecar_json());
}

EvidenceCache EvidenceCache::deserialize(const std::string& bytes, int patch_size, const Vocab& vocab) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) r.fail("bad magic", 0);
  const std::size_t version_at = r.pos();
  if (r.u32("format version") != kFormatVersion) r.fail("unsupported format version", version_at);
  const std::uint32_t n_entries = r.u32("entry count");

  std::map<std::string, EntryPtr> entries;
  for (std::uint32_t e = 0; e < n_entries; ++e) {
    auto entry = std::make_shared<CacheEntry>();
    const std::uint32_t key_len = r.u32("key length");
    entry->sample_id = r.str(key_len, "key");
    entry->model_version = r.u32("model version");
    entry->refresh_count = r.u32("refresh count");
    const std::uint32_t n_snap = r.u32("snapshot count");
    for (std::uint32_t k = 0; k < n_snap; ++k) {
      auto s = std::make_shared<grounding::EvidenceSnapshot>();
      const std::size_t anchor_at = r.pos();
      s->anchor_id = static_cast<int>(r.u32("anchor id"));
      if (static_cast<std::size_t>(s->anchor_id) >= vocab.size()) r.fail("anchor id outside the vocabulary", anchor_at);
      s->anchor_token = vocab.token(s->anchor_id);
      const std::size_t box_at = r.pos();
      grounding::PatchBox b;
      b.row_min = static_cast<int>(r.u32("bbox"));
      b.col_min = static_cast<int>(r.u32("bbox"));
      b.row_max = static_cast<int>(r.u32("bbox"));
      b.col_max = static_cast<int>(r.u32("bbox"));
      if (b.row_min > b.row_max || b.col_min > b.col_max) r.fail("inverted bbox", box_at);
      s->matched = b;
      s->region = grounding::make_region({}, b, patch_size);
      const std::size_t count_at = r.pos();
      const std::uint32_t n = r.u32("vector count");
      const std::uint32_t d = r.u32("vector width");
      if (n != static_cast<std::uint32_t>(b.count())) r.fail("vector count does not match bbox", count_at);
      if (static_cast<std::uint64_t>(n) * d * 4 > r.remaining()) r.fail("truncated payload", r.pos());
      s->embeddings = Matrix(n, d);
      for (auto& v : s->embeddings.values()) v = static_cast<double>(r.f32("payload"));
      s->model_version = entry->model_version;
      entry->snapshots.push_back(std::move(s));
    }
    const std::string key = entry->sample_id;
    if (!entries.emplace(key, std::move(entry)).second) r.fail("duplicate key " + key, r.pos());
  }
  if (r.remaining() != 0) r.fail("trailing bytes", r.pos());

  EvidenceCache out;
  out.entries_ = std::move(entries);
  return out;
}

EvidenceCache EvidenceCache::load(const std::filesystem::path& path, int patch_size, const Vocab& vocab) {
  return deserialize(read_file(path), patch_size, vocab);
}

std::vector<grounding::EvidenceSnapshot> discover_for_sample(const data::Sample& sample, const vlm::Model& model,
                                                             const grounding::GroundingParams& params) {
  const auto ids = tokenize(sample.question, model.vocab());
  return grounding::discover_evidence(model, sample.image, ids, params).snapshots;
}

}  // namespace sieve::cache
