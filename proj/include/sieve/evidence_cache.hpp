// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "sieve/grounding.hpp"
#include "sieve/synth_data.hpp"
#include "sieve/toy_vlm.hpp"

namespace sieve::cache {

struct CacheEntry {
  std::string sample_id;
  std::vector<grounding::SnapshotPtr> snapshots;  // highest anchor saliency first
  std::uint32_t model_version = 0;
  std::uint32_t refresh_count = 0;
};

using EntryPtr = std::shared_ptr<const CacheEntry>;

/// Thread-safe map from sample id to immutable entries. Readers get a shared
/// pointer to a complete entry; writers swap whole entries under an exclusive
/// lock, so a reader never sees a half-replaced snapshot set.
class EvidenceCache {
 public:
  EvidenceCache() = default;
  EvidenceCache(const EvidenceCache& other);
  EvidenceCache& operator=(const EvidenceCache& other);

  /// Replaces the entry. Snapshots are restamped with `model_version`; the
  /// refresh count of an existing entry is kept.
  void upsert(const std::string& sample_id, std::vector<grounding::EvidenceSnapshot> snapshots,
              std::uint32_t model_version);

  /// Null when absent.
  EntryPtr lookup(const std::string& sample_id) const;

  /// Reruns discovery under `model` and swaps in the result with the refresh
  /// count incremented. The entry is untouched if discovery throws.
  void refresh(const data::Sample& sample, const vlm::Model& model, const grounding::GroundingParams& params);

  std::size_t size() const;
  std::vector<EntryPtr> entries() const;  // sorted by sample id

  /// Raw SVEC bytes and the metadata sidecar.
  std::string serialize() const;
  std::string sidecar_json() const;
  /// Writes `path` and `path` + ".json" atomically.
  void save(const std::filesystem::path& path) const;

  /// Throws FormatError naming the byte offset of the first malformed field.
  static EvidenceCache deserialize(const std::string& bytes, int patch_size = 8, const Vocab& vocab = Vocab::standard());
  static EvidenceCache load(const std::filesystem::path& path, int patch_size = 8,
                            const Vocab& vocab = Vocab::standard());

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, EntryPtr> entries_;
};

/// Discovery on a sample's image and question, in the form the cache stores.
std::vector<grounding::EvidenceSnapshot> discover_for_sample(const data::Sample& sample, const vlm::Model& model,
                                                             const grounding::GroundingParams& params);

}  // namespace sieve::cache
