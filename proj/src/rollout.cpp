// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/rollout.hpp"

#include <cmath>

#include "json.hpp"
#include "sieve/errors.hpp"

namespace sieve::rollout {

std::string to_string(Action a) {
  switch (a) {
    case Action::kInsert: return "insert";
    case Action::kAnswer: return "answer";
    case Action::kContinue: return "continue";
    case Action::kCapacity: return "capacity";
  }
  return "?";
}

std::string to_string(Termination t) { return t == Termination::kAnswer ? "answer" : "horizon"; }

std::size_t Trajectory::generated_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.tokens.size();
  return n;
}

std::vector<Row> assemble_rows(const Trajectory& traj, const Vocab& vocab) {
  std::vector<Row> rows;
  for (const auto& turn : traj.turns) {
    for (int t : turn.tokens) rows.push_back({Row::Kind::kGenerated, t, nullptr});
    if (!turn.insertion_attempted) continue;
    rows.push_back({Row::Kind::kMarker, vocab.evidence(), nullptr});
    if (turn.evidence)
      for (std::size_t r = 0; r < turn.evidence->embeddings.rows(); ++r)
        rows.push_back({Row::Kind::kEvidence, -1, turn.evidence->embeddings.row(r).data()});
    rows.push_back({Row::Kind::kMarker, vocab.evidence_end(), nullptr});
  }
  return rows;
}

RolloutState::RolloutState(const vlm::Model& model, const Matrix& vision, std::vector<int> prompt_ids)
    : model_(&model), cache_(vlm::empty_cache(model)) {
  const Matrix inputs = grounding::assemble_inputs(model, vision, prompt_ids);
  const Matrix out = vlm::forward_segment(model, inputs, cache_);
  auto last = out.row(out.rows() - 1);
  hidden_.assign(last.begin(), last.end());
  logits_ = vlm::logits_at(model, hidden_);
  traj_.prompt_ids = std::move(prompt_ids);
  traj_.model_version = model.version();
}

RolloutState::RolloutState(const vlm::Model& model, std::vector<int> prompt_ids, const vlm::KvCache& prefix_cache,
                           std::vector<double> prefix_last_hidden)
    : model_(&model), cache_(prefix_cache), hidden_(std::move(prefix_last_hidden)) {
  logits_ = vlm::logits_at(model, hidden_);
  traj_.prompt_ids = std::move(prompt_ids);
  traj_.model_version = model.version();
}

bool RolloutState::push(const Matrix& row) {
  if (cache_.length() + 1 > static_cast<std::size_t>(model_->config().max_seq)) return false;
  const Matrix out = vlm::forward_segment(*model_, row, cache_);
  auto last = out.row(0);
  hidden_.assign(last.begin(), last.end());
  logits_ = vlm::logits_at(*model_, hidden_);
  return true;
}

bool RolloutState::push_token(int token) {
  Matrix row(1, static_cast<std::size_t>(model_->config().d_model));
  const auto e = vlm::embed_token(*model_, token, cache_.length());
  std::copy(e.begin(), e.end(), row.row(0).begin());
  return push(row);
}

bool RolloutState::push_vector(std::span<const double> vec) {
  Matrix row(1, vec.size());
  std::copy(vec.begin(), vec.end(), row.row(0).begin());
  return push(row);
}

TokenSource sampling_source(double temperature) {
  return [temperature](std::span<const double> logits, RngStream& rng) {
    auto [id, next] = vlm::sample_next_token(logits, temperature, rng);
    rng = next;
    return id;
  };
}

std::optional<std::string> parse_answer(std::span<const int> tokens, const Vocab& vocab) {
  std::optional<std::size_t> open;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == vocab.answer()) open = i;
    if (tokens[i] == vocab.answer_end() && open) {
      return detokenize(tokens.subspan(*open + 1, i - *open - 1), vocab);
    }
  }
  return std::nullopt;
}

Action step(RolloutState& state, const vlm::Model& model, const SamplerParams& params, RngStream& rng,
            const TokenSource& source) {
  const Vocab& vocab = model.vocab();
  Turn turn;
  bool answer_open = false;
  Action action = Action::kContinue;
  for (int n = 0; n < params.turn_budget; ++n) {
    if (state.length() >= static_cast<std::size_t>(model.config().max_seq)) {
      action = Action::kCapacity;
      break;
    }
    const auto logits = state.next_logits();
    const int tok = source(logits, rng);
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab.size())
      throw IndexError("rollout: token source produced id " + std::to_string(tok));
    turn.logps.push_back(logits[static_cast<std::size_t>(tok)] - numerics::log_sum_exp(logits));
    turn.tokens.push_back(tok);
    if (!state.push_token(tok)) {
      action = Action::kCapacity;
      break;
    }
    if (tok == vocab.insert()) {
      action = Action::kInsert;
      break;
    }
    if (tok == vocab.answer()) answer_open = true;
    if (tok == vocab.answer_end() && answer_open) {
      action = Action::kAnswer;
      break;
    }
  }
  turn.action = action;
  state.trajectory().turns.push_back(std::move(turn));
  return action;
}

bool apply_insertion(RolloutState& state, const grounding::SnapshotPtr& snapshot) {
  auto& traj = state.trajectory();
  if (traj.turns.empty()) throw Error("rollout: insertion before any turn");
  const Vocab& vocab = state.model().vocab();
  Turn& turn = traj.turns.back();
  turn.insertion_attempted = true;
  const bool usable = snapshot && snapshot->embeddings.rows() > 0;
  if (!state.push_token(vocab.evidence())) return false;
  if (usable) {
    turn.insertion_ok = true;
    turn.evidence = snapshot;
    ++traj.insertion_count;
    for (std::size_t r = 0; r < snapshot->embeddings.rows(); ++r)
      if (!state.push_vector(snapshot->embeddings.row(r))) return false;
  } else {
    ++traj.failed_insertions;
  }
  return state.push_token(vocab.evidence_end());
}

grounding::SnapshotPtr choose_snapshot(const cache::EvidenceCache& cache, const std::string& sample_id) {
  auto entry = cache.lookup(sample_id);
  if (!entry || entry->snapshots.empty()) return nullptr;
  return entry->snapshots.front();
}

PrefixRun run_prefix(const vlm::Model& model, const Image& image, std::span<const int> prompt_ids) {
  PrefixRun p;
  p.cache = vlm::empty_cache(model);
  const Matrix inputs = grounding::assemble_inputs(model, vlm::embed_image(model, image), prompt_ids);
  const Matrix out = vlm::forward_segment(model, inputs, p.cache);
  auto last = out.row(out.rows() - 1);
  p.last_hidden.assign(last.begin(), last.end());
  return p;
}

namespace {

int count_think_tokens(const Trajectory& traj, const Vocab& vocab) {
  int n = 0;
  for (const auto& turn : traj.turns) {
    int open = -1;
    for (std::size_t i = 0; i < turn.tokens.size(); ++i) {
      if (turn.tokens[i] == vocab.think()) open = static_cast<int>(i);
      else if (turn.tokens[i] == vocab.think_end() && open >= 0) {
        n += static_cast<int>(i) - open - 1;
        open = -1;
      }
    }
  }
  return n;
}

}  // namespace

Trajectory run_rollout(const vlm::Model& model, const data::Sample& sample, const PrefixRun& prefix,
                       std::span<const int> prompt_ids, const cache::EvidenceCache& cache,
                       const SamplerParams& params, RngStream rng, const TokenSource& source) {
  const TokenSource src = source ? source : sampling_source(params.temperature);
  RolloutState state(model, std::vector<int>(prompt_ids.begin(), prompt_ids.end()), prefix.cache,
                     prefix.last_hidden);
  state.trajectory().sample_id = sample.sample_id;
  for (int t = 0; t < params.max_turns; ++t) {
    const Action a = step(state, model, params, rng, src);
    if (a == Action::kAnswer) {
      state.trajectory().terminated_by = Termination::kAnswer;
      state.trajectory().final_answer = parse_answer(state.trajectory().turns.back().tokens, model.vocab());
      break;
    }
    if (a == Action::kCapacity) break;
    if (a == Action::kInsert && !apply_insertion(state, choose_snapshot(cache, sample.sample_id))) break;
  }
  Trajectory traj = std::move(state.trajectory());
  traj.think_token_count = count_think_tokens(traj, model.vocab());
  return traj;
}

Trajectory run_rollout(const vlm::Model& model, const data::Sample& sample, const cache::EvidenceCache& cache,
                       const SamplerParams& params, RngStream rng, const TokenSource& source) {
  const auto ids = tokenize(sample.question, model.vocab());
  const auto prefix = run_prefix(model, sample.image, ids);
  return run_rollout(model, sample, prefix, ids, cache, params, rng, source);
}

std::string dump_jsonl(const Trajectory& traj, const Vocab& vocab, const std::string& extra_final_json) {
  using json = nlohmann::ordered_json;
  std::string out;
  for (std::size_t i = 0; i < traj.turns.size(); ++i) {
    const auto& turn = traj.turns[i];
    json j;
    j["sample_id"] = traj.sample_id;
    j["turn"] = i;
    j["tokens"] = turn.tokens;
    j["text"] = detokenize(turn.tokens, vocab);
    j["action"] = to_string(turn.action);
    if (turn.insertion_attempted) {
      json ins;
      ins["ok"] = turn.insertion_ok;
      if (turn.evidence) {
        const auto& b = turn.evidence->region.bbox_pixels;
        ins["anchor"] = turn.evidence->anchor_token;
        ins["bbox"] = json::array({b.x_min, b.y_min, b.x_max, b.y_max});
        ins["n_vectors"] = turn.evidence->embeddings.rows();
      }
      j["insertion"] = std::move(ins);
    }
    out += j.dump() + "\n";
  }
  json f;
  f["sample_id"] = traj.sample_id;
  f["terminated_by"] = to_string(traj.terminated_by);
  f["final_answer"] = traj.final_answer ? json(*traj.final_answer) : json(nullptr);
  f["insertion_count"] = traj.insertion_count;
  f["failed_insertions"] = traj.failed_insertions;
  f["think_tokens"] = traj.think_token_count;
  f["generated_tokens"] = traj.generated_count();
  f["model_version"] = traj.model_version;
  if (!extra_final_json.empty()) f["reward"] = json::parse(extra_final_json);
  out += f.dump() + "\n";
  return out;
}

}  // namespace sieve::rollout
