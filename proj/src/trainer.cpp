// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/trainer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sieve/errors.hpp"
#include "sieve/sequence.hpp"

namespace sieve::train {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (group_size < 2) fail("group_size must be at least 2");
  if (prompts_per_batch < 1) fail("prompts_per_batch must be positive");
  if (steps < 0) fail("steps must be non-negative");
  if (kl_coeff < 0.0) fail("kl_coeff must be non-negative");
  if (kl_coeff != 0.0) fail("only kl_coeff = 0 is supported");
  if (learning_rate < 0.0) fail("learning_rate must be non-negative");
  if (clip_eps < 0.0) fail("clip_eps must be non-negative");
  if (sampler.max_turns < 1 || sampler.turn_budget < 1) fail("max_turns and turn_budget must be positive");
}

std::vector<rollout::Trajectory> generate_group(const vlm::Model& model, const data::Sample& sample,
                                                const cache::EvidenceCache& cache, int group_size,
                                                const rollout::SamplerParams& sampler, const RngStream& rng) {
  const auto ids = tokenize(sample.question, model.vocab());
  const auto prefix = rollout::run_prefix(model, sample.image, ids);
  std::vector<rollout::Trajectory> out(static_cast<std::size_t>(group_size));
#pragma omp parallel for schedule(dynamic)
  for (int g = 0; g < group_size; ++g)
    out[static_cast<std::size_t>(g)] =
        rollout::run_rollout(model, sample, prefix, ids, cache, sampler, rng.split(static_cast<std::uint64_t>(g)));
  return out;
}

void score_group(Group& group, const data::Sample& sample, const vlm::Model& model, const TrainConfig& config) {
  group.rewards.clear();
  std::vector<double> totals;
  for (const auto& t : group.trajectories) {
    group.rewards.push_back(reward::score_trajectory(t, sample.gold_answer, model.vocab(), config.weights, config.act));
    totals.push_back(group.rewards.back().total);
  }
  group.advantages = reward::grpo_advantages(totals);
}

bool needs_refresh(const Group& group) {
  for (std::size_t i = 0; i < group.trajectories.size(); ++i)
    if (group.trajectories[i].insertion_count >= 1 && group.rewards[i].r_res == 0) return true;
  return false;
}

void SgdMomentum::apply(std::span<double> params, std::span<const double> grad) {
  if (velocity.size() != params.size()) velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    params[i] -= learning_rate * velocity[i];
  }
}

double surrogate_gradient(const vlm::Model& model, const std::vector<Group>& groups,
                          const std::vector<data::Sample>& samples, double clip_eps, std::span<double> grad) {
  std::size_t n_traj = 0;
  for (const auto& g : groups) n_traj += g.trajectories.size();
  if (n_traj == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(n_traj);

  std::vector<std::vector<double>> partial(groups.size());
  std::vector<double> losses(groups.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& group = groups[gi];
    if (std::all_of(group.advantages.begin(), group.advantages.end(), [](double a) { return a == 0.0; })) continue;
    const data::Sample& sample = samples[group.sample_index];
    partial[gi].assign(grad.size(), 0.0);

    seq::PolicyBatch batch = seq::build_batch(model, sample.image, group.trajectories.front().prompt_ids,
                                              group.trajectories);
    double loss = 0.0;
    auto fn = [&](std::size_t c, std::size_t t, double logp) {
      const double old = batch.old_logps[c][t];
      const double adv = group.advantages[c];
      const double scale = inv_n / static_cast<double>(batch.old_logps[c].size());
      const double ratio = std::exp(logp - old);
      const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
      const double unclipped_obj = ratio * adv;
      const double clipped_obj = clipped * adv;
      if (unclipped_obj <= clipped_obj) {
        loss -= scale * unclipped_obj;
        return -scale * adv * ratio;
      }
      loss -= scale * clipped_obj;
      return 0.0;
    };
    seq::backward(model, batch, sample.image, fn, partial[gi]);
    losses[gi] = loss;
  }
  double total = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    total += losses[gi];
    if (partial[gi].empty()) continue;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += partial[gi][i];
  }
  return total;
}

UpdateStats policy_update(vlm::Model& model, const std::vector<Group>& groups, const std::vector<data::Sample>& samples,
                          SgdMomentum& optimizer, double clip_eps) {
  UpdateStats stats;
  std::vector<double> grad(model.params().size(), 0.0);
  stats.loss = surrogate_gradient(model, groups, samples, clip_eps, grad);
  for (const auto& g : groups)
    for (const auto& t : g.trajectories) stats.tokens += t.generated_count();
  if (!numerics::all_finite(grad)) {
    spdlog::warn("policy update skipped: non-finite gradient");
    return stats;
  }
  double sq = 0.0;
  for (double v : grad) sq += v * v;
  stats.grad_norm = std::sqrt(sq);
  optimizer.apply(model.mutable_params(), grad);
  model.bump_version();
  stats.applied = true;
  return stats;
}

std::string metrics_csv_header() { return "step,mean_reward,mean_len,max_len,insertion_rate,refreshes,entropy\n"; }

std::string metrics_csv_row(const StepMetrics& m) {
  return fmt::format("{},{:.6f},{:.4f},{},{:.6f},{},{:.6f}\n", m.step, m.mean_reward, m.mean_len, m.max_len,
                     m.insertion_rate, m.refreshes, m.entropy);
}

void populate_cache(cache::EvidenceCache& cache, const vlm::Model& model, const std::vector<data::Sample>& samples,
                    const grounding::GroundingParams& params) {
  std::vector<std::vector<grounding::EvidenceSnapshot>> found(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i) found[i] = cache::discover_for_sample(samples[i], model, params);
  for (std::size_t i = 0; i < samples.size(); ++i)
    cache.upsert(samples[i].sample_id, std::move(found[i]), model.version());
}

namespace {

std::vector<std::size_t> draw_batch(std::size_t n, std::size_t b, RngStream rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  b = std::min(b, n);
  for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.next_below(n - i)]);
  idx.resize(b);
  return idx;
}

}  // namespace

TrainResult train(vlm::Model& model, const std::vector<data::Sample>& samples, cache::EvidenceCache& cache,
                  const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  if (samples.empty()) throw ConfigError("train: dataset is empty");
  TrainResult result;
  SgdMomentum opt{config.learning_rate, config.momentum, {}};
  const RngStream root = RngStream(config.seed).split("train");

  for (int step = 0; step < config.steps; ++step) {
    const RngStream srng = root.split(static_cast<std::uint64_t>(step));
    const auto batch = draw_batch(samples.size(), static_cast<std::size_t>(config.prompts_per_batch), srng.split("batch"));
    const std::uint32_t version = model.version();

    std::vector<Group> groups(batch.size());
    const RngStream grng = srng.split("rollouts");
    for (std::size_t b = 0; b < batch.size(); ++b) {
      groups[b].sample_index = batch[b];
      groups[b].trajectories = generate_group(model, samples[batch[b]], cache, config.group_size, config.sampler,
                                              grng.split(static_cast<std::uint64_t>(b)));
      score_group(groups[b], samples[batch[b]], model, config);
    }
    for (const auto& g : groups)
      for (const auto& t : g.trajectories)
        if (t.model_version != version) throw Error("train: rollout observed weights from another update");

    const UpdateStats upd = policy_update(model, groups, samples, opt, config.clip_eps);
    if (!upd.applied) ++result.skipped_updates;

    StepMetrics m;
    m.step = step;
    std::size_t n = 0, tokens = 0, inserted = 0, correct = 0;
    double reward_sum = 0.0, nll = 0.0;
    for (const auto& g : groups)
      for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
        const auto& t = g.trajectories[i];
        ++n;
        reward_sum += g.rewards[i].total;
        const auto len = t.generated_count();
        tokens += len;
        m.max_len = std::max(m.max_len, static_cast<int>(len));
        inserted += t.insertion_count >= 1 ? 1 : 0;
        correct += static_cast<std::size_t>(g.rewards[i].r_res);
        for (const auto& turn : t.turns)
          for (double lp : turn.logps) nll -= lp;
      }
    m.mean_reward = reward_sum / static_cast<double>(n);
    m.mean_len = static_cast<double>(tokens) / static_cast<double>(n);
    m.insertion_rate = static_cast<double>(inserted) / static_cast<double>(n);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    m.entropy = tokens ? nll / static_cast<double>(tokens) : 0.0;

    for (const auto& g : groups) {
      if (!needs_refresh(g)) continue;
      const auto& s = samples[g.sample_index];
      if (cache.lookup(s.sample_id))
        cache.refresh(s, model, config.grounding);
      else
        cache.upsert(s.sample_id, cache::discover_for_sample(s, model, config.grounding), model.version());
      ++m.refreshes;
    }
    if (config.refresh_period > 0 && (step + 1) % config.refresh_period == 0) {
      for (const auto& s : samples)
        if (cache.lookup(s.sample_id)) cache.refresh(s, model, config.grounding);
    }

    spdlog::info("step {} reward {:.4f} acc {:.3f} insert {:.3f} len {:.1f} refreshes {} loss {:.5f} |g| {:.4g}",
                 step, m.mean_reward, m.accuracy, m.insertion_rate, m.mean_len, m.refreshes, upd.loss, upd.grad_norm);
    result.metrics.push_back(m);
    if (on_step) on_step(m, groups);
  }
  return result;
}

}  // namespace sieve::train
