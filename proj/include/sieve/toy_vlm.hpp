// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sieve/image.hpp"
#include "sieve/numerics.hpp"
#include "sieve/rng.hpp"
#include "sieve/vocab.hpp"

namespace sieve::vlm {

/// Inclusive 1-based layer index range.
struct LayerRange {
  int first = 3;
  int last = 4;
  int count() const { return last - first + 1; }
  bool operator==(const LayerRange&) const = default;
};

struct ModelConfig {
  int d_model = 64;
  int n_layers = 6;
  int n_heads = 4;
  int patch_size = 8;
  int image_side = 64;
  LayerRange mid_layers{3, 4};
  std::uint64_t seed = 0;
  int max_seq = 512;
  Vocab vocab = Vocab::standard();

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  int grid_side() const { return image_side / patch_size; }
  int n_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return 3 * patch_size * patch_size; }
  int mlp_width() const { return 4 * d_model; }
  int head_dim() const { return d_model / n_heads; }
};

enum class Modality : std::uint8_t { kVision, kText };

/// Joint sequence layout: the vision block first, then text.
struct TokenStream {
  std::vector<int> ids;  // -1 at vision positions
  std::vector<Modality> modality;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return ids.size(); }
  std::size_t vision_count() const { return static_cast<std::size_t>(rows) * cols; }
  static TokenStream make(int rows, int cols, std::span<const int> text_ids);
};

/// Offset and shape of one parameter tensor inside the flat parameter vector.
struct TensorSlot {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

struct LayerSlots {
  TensorSlot ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  TensorSlot ln2_g, ln2_b, w1, b1, w2, b2;
};

struct ParamLayout {
  TensorSlot tok_emb, pos_emb, patch_w, patch_b, head_w, head_b;
  std::vector<LayerSlots> layers;
  std::vector<std::pair<std::string, TensorSlot>> named;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& config);
};

/// Pre-norm causal transformer over a joint (patch, word) sequence, with a
/// linear vocabulary head read at any position.
///
/// All weights live in one flat vector so that optimizers, gradient
/// buffers, persistence and equality checks treat them uniformly.
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  const Vocab& vocab() const { return config_.vocab; }

  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }
  std::span<const double> slot(const TensorSlot& s) const { return {params_.data() + s.offset, s.size()}; }

  /// Monotone counter of weight updates; stamped onto snapshots and rollouts.
  std::uint32_t version() const { return version_; }
  void bump_version() { ++version_; }
  void set_version(std::uint32_t v) { version_ = v; }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<double> params_;
  std::uint32_t version_ = 0;
};

/// Builds and initializes a model: N(0, 0.02) matrices from a counter-based
/// stream per named tensor, unit layer-norm gains, zero biases.
Model build_model(const ModelConfig& config);

/// Patch embeddings (n_patches x d) in row-major patch order, including
/// position vectors 0..n_patches-1. Values are rounded to float32 so cached
/// snapshots persist exactly.
Matrix embed_image(const Model& model, const Image& image);
/// Word embedding plus the position vector at `position`.
std::vector<double> embed_token(const Model& model, int token_id, std::size_t position);

struct HiddenStateStack {
  Matrix inputs;
  std::vector<Matrix> layers;  // layers[l - 1] is the output of block l
  std::vector<double> logits;  // at the final position
};

HiddenStateStack forward(const Model& model, const Matrix& inputs);

struct GradientReport {
  int target_id = 0;
  double target_logit = 0.0;
  Matrix grads;  // d target_logit / d inputs
};

GradientReport grad_scalar_logit(const Model& model, const Matrix& inputs, int target_id);

/// Temperature 0 is argmax with lowest-id tie-break.
std::pair<int, RngStream> sample_next_token(std::span<const double> logits, double temperature, RngStream rng);

// ---------------------------------------------------------------------------
// Lower-level incremental interface used by generation and training.

/// Per-layer keys and values for every position processed so far.
struct KvCache {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
  std::size_t length() const { return keys.empty() ? 0 : keys.front().rows(); }
};

KvCache empty_cache(const Model& model);

struct LayerTrace {
  Matrix x_in, ln1_out, q, attn, x_mid, ln2_out, h_pre, h_act;
  std::vector<double> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
  std::vector<Matrix> probs;  // per head, n x (prefix + n)
};

/// Activations of one forward segment, kept for the backward pass.
struct SegmentTrace {
  std::size_t prefix_len = 0;
  std::vector<LayerTrace> layers;
  Matrix output;
};

/// Runs rows of `inputs` after the positions already in `cache`, appending
/// their keys/values. Returns final hidden states. Fills `trace` and
/// `layer_outputs` when given. Throws CapacityError past max_seq.
Matrix forward_segment(const Model& model, const Matrix& inputs, KvCache& cache, SegmentTrace* trace = nullptr,
                       std::vector<Matrix>* layer_outputs = nullptr);

std::vector<double> logits_at(const Model& model, std::span<const double> hidden);

/// Per-layer gradients with respect to cached keys and values.
struct KvGrads {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
};

KvGrads zero_kv_grads(const Model& model, std::size_t length);

/// Backward through one segment. `d_output` is the gradient on the segment's
/// final hidden states. `extra` adds gradients on this segment's own keys and
/// values (from later segments that attended to it). Gradients for earlier
/// positions in `cache` are accumulated into `prefix_grads`; parameter
/// gradients into `param_grads` when non-empty. `d_layers[l - 1]`, when
/// given and non-empty, adds a gradient on the output of block l. Returns
/// d inputs.
Matrix backward_segment(const Model& model, const SegmentTrace& trace, const KvCache& cache, const Matrix& d_output,
                        const KvGrads* extra, KvGrads* prefix_grads, std::span<double> param_grads,
                        const std::vector<Matrix>* d_layers = nullptr);

struct TokenTarget {
  std::size_t position = 0;  // absolute position whose logits predict `token`
  int token = 0;
};

/// One continuation that shares the common prefix of a batch.
struct Continuation {
  Matrix inputs;
  std::vector<TokenTarget> targets;
};

/// Returns dLoss/dlogp for target `t` of continuation `c` given its current
/// log-probability. Targets are numbered per continuation with the ones that
/// fall inside the prefix first.
using LogProbGrad = std::function<double(std::size_t c, std::size_t t, double logp)>;

struct LogProbResult {
  std::vector<std::vector<double>> logps;  // per continuation, same numbering as LogProbGrad
  Matrix d_prefix;
  std::vector<Matrix> d_continuations;
};

/// Forward and backward over a shared prefix and its continuations. The
/// prefix is run once and its key/value gradients from every continuation
/// are summed before its own backward pass. Accumulates parameter gradients
/// into `param_grads` (skipped when empty) and returns input gradients so the
/// caller can route them into embedding tables.
LogProbResult logprob_backward(const Model& model, const Matrix& prefix,
                               const std::vector<std::vector<TokenTarget>>& prefix_targets,
                               const std::vector<Continuation>& continuations, const LogProbGrad& grad,
                               std::span<double> param_grads);

/// Where an input row came from, for routing its gradient to parameters.
struct RowSource {
  enum class Kind : std::uint8_t { kToken, kPatch, kFixed };
  Kind kind = Kind::kFixed;
  int index = 0;  // token id or patch index
  std::size_t position = 0;
};

/// Accumulates gradients of token/patch input rows into embedding, position
/// and patch-projection parameters. Fixed rows (inserted evidence) carry none.
void embedding_backward(const Model& model, std::span<const RowSource> sources, const Matrix& d_inputs,
                        const Image* image, std::span<double> param_grads);

}  // namespace sieve::vlm
