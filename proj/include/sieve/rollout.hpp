// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sieve/evidence_cache.hpp"
#include "sieve/grounding.hpp"
#include "sieve/rng.hpp"
#include "sieve/synth_data.hpp"
#include "sieve/toy_vlm.hpp"

namespace sieve::rollout {

struct SamplerParams {
  double temperature = 1.0;
  int turn_budget = 64;
  int max_turns = 4;
};

enum class Action : std::uint8_t { kInsert, kAnswer, kContinue, kCapacity };
enum class Termination : std::uint8_t { kAnswer, kHorizon };

std::string to_string(Action a);
std::string to_string(Termination t);

struct Turn {
  std::vector<int> tokens;   // generated by the policy
  std::vector<double> logps; // one per generated token, untempered
  Action action = Action::kContinue;
  bool insertion_attempted = false;
  bool insertion_ok = false;
  grounding::SnapshotPtr evidence;  // set when insertion_ok
};

struct Trajectory {
  std::string sample_id;
  std::vector<int> prompt_ids;
  std::vector<Turn> turns;
  std::optional<std::string> final_answer;
  int insertion_count = 0;
  int failed_insertions = 0;
  Termination terminated_by = Termination::kHorizon;
  int think_token_count = 0;
  std::uint32_t model_version = 0;

  std::size_t generated_count() const;
};

/// One row of the assembled sequence after the prompt.
struct Row {
  enum class Kind : std::uint8_t { kGenerated, kMarker, kEvidence };
  Kind kind = Kind::kGenerated;
  int token = -1;           // for generated and marker rows
  const double* vec = nullptr;  // for evidence rows, into the snapshot
};

/// The rows after the prompt in temporal order: each turn's text, then for
/// an insertion the open marker, the snapshot vectors and the close marker.
std::vector<Row> assemble_rows(const Trajectory& traj, const Vocab& vocab);

/// Live generation state. The vision block and prompt form a prefix whose
/// keys/values are computed once and may be shared across a group.
class RolloutState {
 public:
  RolloutState(const vlm::Model& model, const Matrix& vision, std::vector<int> prompt_ids);
  /// Reuses a prefix that already went through the model.
  RolloutState(const vlm::Model& model, std::vector<int> prompt_ids, const vlm::KvCache& prefix_cache,
               std::vector<double> prefix_last_hidden);

  const vlm::Model& model() const { return *model_; }
  std::size_t length() const { return cache_.length(); }
  std::span<const double> next_logits() const { return logits_; }
  const vlm::KvCache& cache() const { return cache_; }
  const std::vector<double>& last_hidden() const { return hidden_; }

  /// Appends one row; returns false when the sequence is full.
  bool push_token(int token);
  bool push_vector(std::span<const double> vec);

  Trajectory& trajectory() { return traj_; }
  const Trajectory& trajectory() const { return traj_; }

 private:
  bool push(const Matrix& row);

  const vlm::Model* model_;
  vlm::KvCache cache_;
  std::vector<double> hidden_;
  std::vector<double> logits_;
  Trajectory traj_;
};

/// Chooses the next token given the logits. The default draws from the model.
using TokenSource = std::function<int(std::span<const double> logits, RngStream& rng)>;
TokenSource sampling_source(double temperature);

/// Generates one turn: stops after <insert_evidence>, after </answer> that
/// closes an <answer> of this turn, when the per-turn budget is spent, or at
/// capacity. The turn is appended to the trajectory.
Action step(RolloutState& state, const vlm::Model& model, const SamplerParams& params, RngStream& rng,
            const TokenSource& source);

/// Appends <evidence>, the snapshot rows and </evidence>. A null snapshot
/// degrades to the marker pair alone and records a failed insertion.
/// Returns false at capacity.
bool apply_insertion(RolloutState& state, const grounding::SnapshotPtr& snapshot);

/// Picks the snapshot to insert for `sample_id` or null.
grounding::SnapshotPtr choose_snapshot(const cache::EvidenceCache& cache, const std::string& sample_id);

struct PrefixRun {
  vlm::KvCache cache;
  std::vector<double> last_hidden;
};
PrefixRun run_prefix(const vlm::Model& model, const Image& image, std::span<const int> prompt_ids);

/// Complete rollout from a prepared prefix.
Trajectory run_rollout(const vlm::Model& model, const data::Sample& sample, const PrefixRun& prefix,
                       std::span<const int> prompt_ids, const cache::EvidenceCache& cache,
                       const SamplerParams& params, RngStream rng, const TokenSource& source = {});
Trajectory run_rollout(const vlm::Model& model, const data::Sample& sample, const cache::EvidenceCache& cache,
                       const SamplerParams& params, RngStream rng, const TokenSource& source = {});

/// Text between the last <answer> and </answer> of a token run, or nullopt.
std::optional<std::string> parse_answer(std::span<const int> tokens, const Vocab& vocab);

/// JSON lines: one object per turn, then a termination record.
std::string dump_jsonl(const Trajectory& traj, const Vocab& vocab, const std::string& extra_final_json = "");

}  // namespace sieve::rollout
