// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/vocab.hpp"

#include <array>
#include <cctype>

#include "sieve/errors.hpp"

namespace sieve {

namespace {

constexpr std::array<std::string_view, 8> kControl = {tok::kUnk,    tok::kThink,     tok::kThinkEnd, tok::kAnswer,
                                                      tok::kAnswerEnd, tok::kInsert, tok::kEvidence, tok::kEvidenceEnd};

// Everything the synthetic questions, answers and reasoning templates use,
// plus a handful of function words so the stop-word filter has work to do.
constexpr std::array<std::string_view, 57> kLexicon = {
    "red",    "green",   "blue",     "yellow", "cyan",   "magenta", "circle", "square",   "triangle", "yes",
    "no",     "what",    "color",    "is",     "the",    "left",    "right",  "of",       "?",        "i",
    "need",   "to",      "look",     "at",     "find",   "check",   "its",    "shape",    "image",    "in",
    "more",   "closely", "evidence", "shows",  "so",     "can",     "answer", "it",       "this",     "region",
    "where",  "compare", "position", "and",    "a",      "which",   "then",   "now",      "clear",    "object",
    "first",  "see",     "both",     "are",    "on",     ",",       "."};

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  control_.assign(tokens_.size(), false);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) throw ConfigError("vocab: duplicate token " + tokens_[i]);
  }
  auto need = [&](std::string_view t) {
    auto it = index_.find(std::string(t));
    if (it == index_.end()) throw ConfigError("vocab: missing control token " + std::string(t));
    control_[static_cast<std::size_t>(it->second)] = true;
    return it->second;
  };
  unk_ = need(tok::kUnk);
  think_ = need(tok::kThink);
  think_end_ = need(tok::kThinkEnd);
  answer_ = need(tok::kAnswer);
  answer_end_ = need(tok::kAnswerEnd);
  insert_ = need(tok::kInsert);
  evidence_ = need(tok::kEvidence);
  evidence_end_ = need(tok::kEvidenceEnd);
}

Vocab Vocab::standard() {
  std::vector<std::string> t;
  for (auto c : kControl) t.emplace_back(c);
  for (auto w : kLexicon) t.emplace_back(w);
  return Vocab(std::move(t));
}

std::span<const std::string_view> Vocab::control_tokens() { return kControl; }

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_ : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.contains(std::string(token)); }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw IndexError("vocab: token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::is_control(int id) const {
  return id >= 0 && static_cast<std::size_t>(id) < control_.size() && control_[static_cast<std::size_t>(id)];
}

std::string normalize_text(std::string_view text) {
  std::string out;
  auto push_space = [&] {
    if (!out.empty() && out.back() != ' ') out.push_back(' ');
  };
  bool in_tag = false;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (c == '<') in_tag = true;
    if (std::isspace(c)) {
      push_space();
    } else if (!in_tag && (c == '?' || c == ',' || c == '.' || c == '!')) {
      push_space();
      out.push_back(static_cast<char>(c));
      out.push_back(' ');
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
    }
    if (c == '>') in_tag = false;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> split_words(std::string_view normalized) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < normalized.size()) {
    while (i < normalized.size() && normalized[i] == ' ') ++i;
    std::size_t j = i;
    while (j < normalized.size() && normalized[j] != ' ') ++j;
    if (j > i) words.emplace_back(normalized.substr(i, j - i));
    i = j;
  }
  return words;
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(normalize_text(text))) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

}  // namespace sieve
