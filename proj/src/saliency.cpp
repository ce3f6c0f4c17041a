// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/saliency.hpp"

#include <algorithm>
#include <cmath>

#include "sieve/errors.hpp"

namespace sieve::saliency {

namespace {

constexpr std::string_view kEmbeddedStopWords =
#include "stop_words.inc"
    ;

void sort_anchors(std::vector<Anchor>& anchors) {
  std::stable_sort(anchors.begin(), anchors.end(), [](const Anchor& a, const Anchor& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.position < b.position;
  });
}

bool keep(const Vocab& vocab, const StopWords& stop_words, int id, double score, double threshold) {
  return score > threshold && !vocab.is_control(id) && !stop_words.contains(vocab.token(id));
}

}  // namespace

StopWords parse_stop_words(std::string_view text) {
  StopWords out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (!line.empty() && line.front() != '#') out.emplace(line);
    start = end + 1;
  }
  return out;
}

const StopWords& default_stop_words() {
  static const StopWords words = parse_stop_words(kEmbeddedStopWords);
  return words;
}

std::vector<double> compute_saliency(const Matrix& grads, const Matrix& inputs) {
  if (grads.rows() != inputs.rows() || grads.cols() != inputs.cols())
    throw ShapeError("saliency: gradient shape " + std::to_string(grads.rows()) + "x" + std::to_string(grads.cols()) +
                     " does not match inputs " + std::to_string(inputs.rows()) + "x" + std::to_string(inputs.cols()));
  std::vector<double> scores(grads.rows());
  for (std::size_t i = 0; i < grads.rows(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < grads.cols(); ++c) {
      const double p = grads(i, c) * inputs(i, c);
      s += p * p;
    }
    scores[i] = std::sqrt(s);
  }
  return scores;
}

AnchorSet filter_anchors(std::span<const double> scores, const vlm::TokenStream& stream, const Vocab& vocab,
                         const StopWords& stop_words, double threshold) {
  if (scores.size() != stream.size())
    throw ShapeError("saliency: " + std::to_string(scores.size()) + " scores for a stream of " +
                     std::to_string(stream.size()));
  if (threshold < 0.0) throw ConfigError("saliency: threshold must be non-negative");
  AnchorSet out;
  out.threshold_used = threshold;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (stream.modality[i] != vlm::Modality::kText) continue;
    const int id = stream.ids[i];
    if (keep(vocab, stop_words, id, scores[i], threshold)) out.anchors.push_back({i, id, vocab.token(id), scores[i]});
  }
  sort_anchors(out.anchors);
  return out;
}

AnchorSet filter_anchors(const AnchorSet& set, const Vocab& vocab, const StopWords& stop_words, double threshold) {
  if (threshold < 0.0) throw ConfigError("saliency: threshold must be non-negative");
  AnchorSet out;
  out.threshold_used = threshold;
  for (const auto& a : set.anchors)
    if (keep(vocab, stop_words, a.token_id, a.score, threshold)) out.anchors.push_back(a);
  sort_anchors(out.anchors);
  return out;
}

AnchorSet select_anchors(std::span<const double> scores, const vlm::TokenStream& stream, const Vocab& vocab,
                         const StopWords& stop_words, const SaliencyParams& params) {
  // Relative to the strongest eligible word. The token at the read-out
  // position usually dwarfs everything else and is often punctuation, so a
  // maximum over all text positions would filter out every content word.
  double top = 0.0;
  for (std::size_t i = 0; i < scores.size() && i < stream.size(); ++i)
    if (stream.modality[i] == vlm::Modality::kText && keep(vocab, stop_words, stream.ids[i], scores[i], -1.0))
      top = std::max(top, scores[i]);
  auto out = filter_anchors(scores, stream, vocab, stop_words, params.relative_threshold * top);
  if (out.anchors.size() > params.max_anchors) out.anchors.resize(params.max_anchors);
  return out;
}

}  // namespace sieve::saliency
