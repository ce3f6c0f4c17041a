// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sieve {

namespace tok {
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kThink = "<think>";
inline constexpr std::string_view kThinkEnd = "</think>";
inline constexpr std::string_view kAnswer = "<answer>";
inline constexpr std::string_view kAnswerEnd = "</answer>";
inline constexpr std::string_view kInsert = "<insert_evidence>";
inline constexpr std::string_view kEvidence = "<evidence>";
inline constexpr std::string_view kEvidenceEnd = "</evidence>";
}  // namespace tok

/// Word-level vocabulary: control tokens first, then the lexicon.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  /// Control tokens plus the synthetic-task lexicon.
  static Vocab standard();
  static std::span<const std::string_view> control_tokens();

  std::size_t size() const { return tokens_.size(); }
  /// Id of a token string, or the unknown id when absent.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  bool is_control(int id) const;

  int unk() const { return unk_; }
  int think() const { return think_; }
  int think_end() const { return think_end_; }
  int answer() const { return answer_; }
  int answer_end() const { return answer_end_; }
  int insert() const { return insert_; }
  int evidence() const { return evidence_; }
  int evidence_end() const { return evidence_end_; }

  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<bool> control_;
  int unk_ = -1, think_ = -1, think_end_ = -1, answer_ = -1, answer_end_ = -1;
  int insert_ = -1, evidence_ = -1, evidence_end_ = -1;
};

/// Lowercases, splits punctuation into separate words, collapses whitespace.
std::string normalize_text(std::string_view text);
std::vector<std::string> split_words(std::string_view normalized);

std::vector<int> tokenize(std::string_view text, const Vocab& vocab);
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

}  // namespace sieve
