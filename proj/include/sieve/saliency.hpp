// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "sieve/numerics.hpp"
#include "sieve/toy_vlm.hpp"
#include "sieve/vocab.hpp"

namespace sieve::saliency {

struct Anchor {
  std::size_t position = 0;
  int token_id = 0;
  std::string token;
  double score = 0.0;
  bool operator==(const Anchor&) const = default;
};

/// Text-position anchors sorted by descending score (ties: earlier position first).
struct AnchorSet {
  std::vector<Anchor> anchors;
  double threshold_used = 0.0;

  bool empty() const { return anchors.empty(); }
  std::size_t size() const { return anchors.size(); }
};

using StopWords = std::unordered_set<std::string>;

/// The embedded default list, one word per line.
const StopWords& default_stop_words();
StopWords parse_stop_words(std::string_view text);

/// score_i = || grad_i * input_i ||_2, row by row.
std::vector<double> compute_saliency(const Matrix& grads, const Matrix& inputs);

/// Keeps text positions whose score exceeds `threshold`, whose token is not a
/// control token and not a stop word.
AnchorSet filter_anchors(std::span<const double> scores, const vlm::TokenStream& stream, const Vocab& vocab,
                         const StopWords& stop_words, double threshold);

/// Re-applies the same rules to an existing set.
AnchorSet filter_anchors(const AnchorSet& set, const Vocab& vocab, const StopWords& stop_words, double threshold);

struct SaliencyParams {
  double relative_threshold = 0.5;  // fraction of the top score among eligible words
  std::size_t max_anchors = 4;
};

/// Threshold relative to the largest score among non-stop, non-control text
/// tokens, then the cap.
AnchorSet select_anchors(std::span<const double> scores, const vlm::TokenStream& stream, const Vocab& vocab,
                         const StopWords& stop_words, const SaliencyParams& params);

}  // namespace sieve::saliency
