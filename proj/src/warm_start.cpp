// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/warm_start.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "sieve/errors.hpp"
#include "sieve/sequence.hpp"

namespace sieve::train {

namespace {

grounding::BlockScores block_grid(const vlm::Model& model, const grounding::GroundingParams& params) {
  const int side = model.config().grid_side();
  // Any values give the right tiling; only the geometry is used.
  const std::vector<double> flat(static_cast<std::size_t>(side * side), 0.0);
  return grounding::score_blocks(flat, side, side, params.block_size);
}

grounding::EvidenceSnapshot snapshot_at(const vlm::Model& model, const data::Sample& sample,
                                        const grounding::GroundingParams& params, const grounding::BlockScores& blocks,
                                        grounding::BlockCoord bc) {
  const auto& cfg = model.config();
  const int side = cfg.grid_side();
  const auto matched = grounding::make_region({bc}, blocks.patches_of(bc), cfg.patch_size);
  const auto expanded = grounding::expand_region(matched, params.margin_blocks, blocks, cfg.patch_size);
  const Vocab& vocab = model.vocab();
  const std::string& name = sample.gold_boxes.front().name;
  const saliency::Anchor anchor{0, vocab.id(name), name, 0.0};
  auto snap = grounding::extract_snapshot(expanded, vlm::embed_image(model, sample.image), side, side, anchor,
                                          grounding::SourceSpace::kInputEmbedding, model.version());
  snap.matched = matched.bbox_patches;
  return snap;
}

}  // namespace

grounding::EvidenceSnapshot gold_snapshot(const vlm::Model& model, const data::Sample& sample,
                                          const grounding::GroundingParams& params) {
  if (sample.gold_boxes.empty()) throw ConfigError("warm start: sample " + sample.sample_id + " has no gold box");
  const int patch = model.config().patch_size;
  const BBox& box = sample.gold_boxes.front().box;
  const int pr = ((box.y_min + box.y_max) / 2) / patch;
  const int pc = ((box.x_min + box.x_max) / 2) / patch;
  return snapshot_at(model, sample, params, block_grid(model, params),
                     {pr / params.block_size, pc / params.block_size});
}

grounding::EvidenceSnapshot demo_snapshot(const vlm::Model& model, const data::Sample& sample,
                                          const grounding::GroundingParams& params, double miss_share,
                                          RngStream rng) {
  if (sample.gold_boxes.empty()) throw ConfigError("warm start: sample " + sample.sample_id + " has no gold box");
  const auto blocks = block_grid(model, params);
  const BBox& box = sample.gold_boxes.front().box;
  std::vector<grounding::BlockCoord> hits, all;
  for (int r = 0; r < blocks.rows; ++r)
    for (int c = 0; c < blocks.cols; ++c) {
      all.push_back({r, c});
      const BBox px = grounding::to_pixels(blocks.patches_of({r, c}), model.config().patch_size);
      if (px.x_min < box.x_max && box.x_min < px.x_max && px.y_min < box.y_max && box.y_min < px.y_max)
        hits.push_back({r, c});
    }
  const bool miss = rng.next_uniform() < miss_share;
  const auto& pool = miss || hits.empty() ? all : hits;
  return snapshot_at(model, sample, params, blocks, pool[rng.next_below(pool.size())]);
}

namespace {

std::vector<int> ids_of(const std::string& text, const Vocab& vocab) { return tokenize(text, vocab); }

std::string think_direct(const data::Sample& s, bool brief) {
  const auto& a = s.gold_boxes[0].name;
  if (s.kind == data::QuestionKind::kColor)
    return brief ? fmt::format("<think> the {} is {} </think>", a, s.gold_answer)
                 : fmt::format("<think> i need to find the {} and check its color </think>", a);
  const auto& b = s.gold_boxes[1].name;
  return brief ? fmt::format("<think> {} and {} </think>", a, b)
               : fmt::format("<think> compare the position of the {} and the {} </think>", a, b);
}

std::string think_after_evidence(const data::Sample& s) {
  const auto& a = s.gold_boxes[0].name;
  if (s.kind == data::QuestionKind::kColor)
    return fmt::format("<think> the evidence shows the {} is {} </think>", a, s.gold_answer);
  const auto& b = s.gold_boxes[1].name;
  return fmt::format("<think> the evidence shows the {} is {} of the {} </think>", a,
                     s.gold_answer == "yes" ? "left" : "right", b);
}

std::string think_before_evidence(const data::Sample& s) {
  const auto& a = s.gold_boxes[0].name;
  if (s.kind == data::QuestionKind::kColor) return fmt::format("<think> i need to look at the {} more closely </think>", a);
  return fmt::format("<think> i need to look at the {} and the {} </think>", a, s.gold_boxes[1].name);
}

int think_tokens(std::span<const int> t, const Vocab& vocab) {
  int n = 0, open = -1;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == vocab.think()) open = static_cast<int>(i);
    if (t[i] == vocab.think_end() && open >= 0) {
      n += static_cast<int>(i) - open - 1;
      open = -1;
    }
  }
  return n;
}

}  // namespace

rollout::Trajectory demo_trajectory(const vlm::Model& model, const data::Sample& sample, DemoKind kind,
                                    const grounding::SnapshotPtr& evidence) {
  const Vocab& vocab = model.vocab();
  rollout::Trajectory t;
  t.sample_id = sample.sample_id;
  t.prompt_ids = tokenize(sample.question, vocab);
  t.model_version = model.version();
  const std::string answer = fmt::format("<answer> {} </answer>", sample.gold_answer);
  if (kind == DemoKind::kInsert) {
    if (!evidence) throw ConfigError("warm start: insertion demonstration without evidence");
    rollout::Turn first;
    first.tokens = ids_of(think_before_evidence(sample) + " <insert_evidence>", vocab);
    first.action = rollout::Action::kInsert;
    first.insertion_attempted = true;
    first.insertion_ok = true;
    first.evidence = evidence;
    t.turns.push_back(std::move(first));
    t.insertion_count = 1;
  }
  rollout::Turn last;
  last.tokens = ids_of((kind == DemoKind::kInsert ? think_after_evidence(sample)
                                                  : think_direct(sample, kind == DemoKind::kDirectShort)) +
                           " " + answer,
                       vocab);
  last.action = rollout::Action::kAnswer;
  t.turns.push_back(std::move(last));
  t.terminated_by = rollout::Termination::kAnswer;
  t.final_answer = sample.gold_answer;
  for (const auto& turn : t.turns) t.think_token_count += think_tokens(turn.tokens, vocab);
  return t;
}

std::pair<double, Matrix> alignment_loss(const vlm::Model& model, const Matrix& inputs,
                                         std::span<const AlignmentTarget> targets, vlm::LayerRange layers,
                                         double tau, double scale, std::span<double> grad) {
  const auto& cfg = model.config();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto n = static_cast<std::size_t>(cfg.n_patches());
  if (!(tau > 0.0)) throw ConfigError("alignment: temperature must be positive");
  if (layers.first < 1 || layers.last > cfg.n_layers || layers.first > layers.last)
    throw ConfigError("alignment: layer range outside the model");

  vlm::KvCache cache = vlm::empty_cache(model);
  vlm::SegmentTrace trace;
  std::vector<Matrix> outs;
  vlm::forward_segment(model, inputs, cache, &trace, &outs);
  vlm::HiddenStateStack stack;
  stack.layers = std::move(outs);
  const Matrix hbar = grounding::mid_layer_average(stack, layers);

  std::vector<double> mean(d, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) mean[c] += hbar(j, c);
  for (auto& v : mean) v /= static_cast<double>(n);
  Matrix unit(n, d);
  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < d; ++c) unit(j, c) = hbar(j, c) - mean[c];
    norms[j] = numerics::l2_norm(unit.row(j));
    for (auto& v : unit.row(j)) v = norms[j] > 1e-12 ? v / norms[j] : 0.0;
  }

  double loss = 0.0;
  Matrix d_hbar(hbar.rows(), d);
  Matrix d_unit(n, d);
  std::vector<double> d_mean(d, 0.0);
  for (const auto& t : targets) {
    if (t.position >= hbar.rows() || t.patches.empty()) throw ShapeError("alignment: bad target");
    std::vector<double> a(d);
    for (std::size_t c = 0; c < d; ++c) a[c] = hbar(t.position, c) - mean[c];
    const double an = numerics::l2_norm(a);
    if (!(an > 1e-12)) continue;
    for (auto& v : a) v /= an;
    std::vector<double> sims(n);
    for (std::size_t j = 0; j < n; ++j) sims[j] = numerics::dot(a, unit.row(j));
    const auto w = numerics::stable_softmax(sims, tau);
    double mass = 0.0;
    std::vector<char> gold(n, 0);
    for (auto j : t.patches) gold.at(j) = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (gold[j]) mass += w[j];
    loss -= std::log(mass);

    // dL/ds_j = (w_j - [j gold] w_j / mass) / tau
    std::vector<double> da(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double g = scale * (w[j] - (gold[j] ? w[j] / mass : 0.0)) / tau;
      if (g == 0.0) continue;
      numerics::axpy(g, unit.row(j), da);
      numerics::axpy(g, a, d_unit.row(j));
    }
    // Through the normalization of the centred anchor.
    const double proj = numerics::dot(a, da);
    for (std::size_t c = 0; c < d; ++c) {
      const double g = (da[c] - a[c] * proj) / an;
      d_hbar(t.position, c) += g;
      d_mean[c] -= g;
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!(norms[j] > 1e-12)) continue;
    const double proj = numerics::dot(unit.row(j), d_unit.row(j));
    for (std::size_t c = 0; c < d; ++c) {
      const double g = (d_unit(j, c) - unit(j, c) * proj) / norms[j];
      d_hbar(j, c) += g;
      d_mean[c] -= g;
    }
  }
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) d_hbar(j, c) += d_mean[c] / static_cast<double>(n);

  std::vector<Matrix> d_layers(static_cast<std::size_t>(cfg.n_layers));
  const double share = 1.0 / layers.count();
  for (int l = layers.first; l <= layers.last; ++l) {
    Matrix g = d_hbar;
    for (auto& v : g.values()) v *= share;
    d_layers[static_cast<std::size_t>(l - 1)] = std::move(g);
  }
  const Matrix zero(inputs.rows(), d);
  Matrix d_inputs = vlm::backward_segment(model, trace, cache, zero, nullptr, nullptr, grad, &d_layers);
  return {loss, std::move(d_inputs)};
}

std::vector<AlignmentTarget> alignment_targets(const vlm::Model& model, const data::Sample& sample,
                                               std::span<const int> prompt_ids) {
  if (sample.gold_boxes.empty()) return {};
  const auto& cfg = model.config();
  const int side = cfg.grid_side();
  const auto n = static_cast<std::size_t>(cfg.n_patches());
  const Vocab& vocab = model.vocab();
  const auto& stop = saliency::default_stop_words();
  std::vector<AlignmentTarget> out;
  for (std::size_t i = 0; i < prompt_ids.size(); ++i) {
    const int id = prompt_ids[i];
    if (vocab.is_control(id) || stop.contains(vocab.token(id))) continue;
    // A shape name points at its own object, every other content word at the
    // object the question is about.
    const BBox* box = &sample.gold_boxes.front().box;
    for (const auto& g : sample.gold_boxes)
      if (g.name == vocab.token(id)) box = &g.box;
    AlignmentTarget t;
    t.position = n + i;
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const int x0 = c * cfg.patch_size, y0 = r * cfg.patch_size;
        if (x0 < box->x_max && box->x_min < x0 + cfg.patch_size && y0 < box->y_max && box->y_min < y0 + cfg.patch_size)
          t.patches.push_back(static_cast<std::size_t>(r * side + c));
      }
    out.push_back(std::move(t));
  }
  return out;
}

void Adam::apply(std::span<double> params, std::span<const double> grad) {
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
    t = 0;
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

double warm_start(vlm::Model& model, const std::vector<data::Sample>& samples, const WarmStartConfig& config,
                  const WarmStartCallback& on_step) {
  if (samples.empty()) throw ConfigError("warm start: dataset is empty");
  if (config.steps < 0 || config.batch < 1) throw ConfigError("warm start: steps and batch must be valid");
  for (double share : {config.insertion_share, config.short_think_share, config.evidence_miss_share})
    if (!(share >= 0.0 && share <= 1.0)) throw ConfigError(fmt::format("warm start: share {} outside [0, 1]", share));
  Adam opt;
  opt.learning_rate = config.learning_rate;
  const RngStream root = RngStream(config.seed).split("warm-start");
  double last_nll = 0.0;

  for (int step = 0; step < config.steps; ++step) {
    RngStream rng = root.split(static_cast<std::uint64_t>(step));
    std::vector<std::size_t> picks(static_cast<std::size_t>(config.batch));
    std::vector<DemoKind> kinds(picks.size());
    for (std::size_t b = 0; b < picks.size(); ++b) {
      picks[b] = rng.next_below(samples.size());
      const double u = rng.next_uniform();
      if (u < config.insertion_share)
        kinds[b] = DemoKind::kInsert;
      else
        kinds[b] = rng.next_uniform() < config.short_think_share ? DemoKind::kDirectShort : DemoKind::kDirect;
    }

    std::vector<std::vector<double>> partial(picks.size());
    std::vector<double> nll(picks.size(), 0.0);
    std::vector<std::size_t> count(picks.size(), 0);
    std::vector<double> align(picks.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t b = 0; b < picks.size(); ++b) {
      const auto& s = samples[picks[b]];
      grounding::SnapshotPtr ev;
      if (kinds[b] == DemoKind::kInsert)
        ev = std::make_shared<const grounding::EvidenceSnapshot>(
            demo_snapshot(model, s, config.grounding, config.evidence_miss_share, rng.split(b)));
      std::vector<rollout::Trajectory> demo{demo_trajectory(model, s, kinds[b], ev)};
      const auto batch = seq::build_batch(model, s.image, demo.front().prompt_ids, demo);
      std::size_t n_targets = batch.prefix_targets[0].size() + batch.continuations[0].targets.size();
      count[b] = n_targets;
      const double scale = 1.0 / (static_cast<double>(n_targets) * static_cast<double>(picks.size()));
      partial[b].assign(model.params().size(), 0.0);
      const auto logps = seq::backward(
          model, batch, s.image, [&](std::size_t, std::size_t, double) { return -scale; }, partial[b]);
      for (double lp : logps[0]) nll[b] -= lp;

      if (config.alignment_weight > 0.0) {
        const auto targets = alignment_targets(model, s, demo.front().prompt_ids);
        if (!targets.empty()) {
          const double a_scale = config.alignment_weight / (static_cast<double>(targets.size()) * picks.size());
          auto [loss, d_in] = alignment_loss(model, batch.prefix, targets, config.grounding.layers,
                                             config.alignment_tau, a_scale, partial[b]);
          vlm::embedding_backward(model, batch.prefix_sources, d_in, &s.image, partial[b]);
          align[b] = loss / static_cast<double>(targets.size());
        }
      }
    }
    std::vector<double> grad(model.params().size(), 0.0);
    double nll_sum = 0.0, align_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < picks.size(); ++b) {
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += partial[b][i];
      nll_sum += nll[b];
      align_sum += align[b];
      tokens += count[b];
    }
    last_nll = nll_sum / static_cast<double>(tokens);
    if (!numerics::all_finite(grad)) {
      spdlog::warn("warm start step {} skipped: non-finite gradient", step);
      continue;
    }
    opt.apply(model.mutable_params(), grad);
    model.bump_version();
    if (on_step) on_step(step, last_nll, align_sum / static_cast<double>(picks.size()));
  }
  return last_nll;
}

}  // namespace sieve::train
