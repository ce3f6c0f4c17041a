// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/sequence.hpp"

#include "sieve/grounding.hpp"

namespace sieve::seq {

PolicyBatch build_batch(const vlm::Model& model, const Image& image, std::span<const int> prompt_ids,
                        const std::vector<rollout::Trajectory>& trajectories) {
  using vlm::RowSource;
  PolicyBatch b;
  b.prefix = grounding::assemble_inputs(model, vlm::embed_image(model, image), prompt_ids);
  const std::size_t P = b.prefix.rows();
  const auto n_patches = static_cast<std::size_t>(model.config().n_patches());
  for (std::size_t j = 0; j < n_patches; ++j) b.prefix_sources.push_back({RowSource::Kind::kPatch, static_cast<int>(j), j});
  for (std::size_t i = 0; i < prompt_ids.size(); ++i)
    b.prefix_sources.push_back({RowSource::Kind::kToken, prompt_ids[i], n_patches + i});

  const auto d = static_cast<std::size_t>(model.config().d_model);
  for (const auto& traj : trajectories) {
    const auto rows = rollout::assemble_rows(traj, model.vocab());
    std::vector<vlm::TokenTarget> pre;
    vlm::Continuation cont;
    cont.inputs = Matrix(rows.size(), d);
    std::vector<RowSource> sources;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t pos = P + r;
      auto dst = cont.inputs.row(r);
      if (rows[r].kind == rollout::Row::Kind::kEvidence) {
        std::copy(rows[r].vec, rows[r].vec + d, dst.begin());
        sources.push_back({RowSource::Kind::kFixed, 0, pos});
        continue;
      }
      const auto e = vlm::embed_token(model, rows[r].token, pos);
      std::copy(e.begin(), e.end(), dst.begin());
      sources.push_back({RowSource::Kind::kToken, rows[r].token, pos});
      if (rows[r].kind != rollout::Row::Kind::kGenerated) continue;
      const vlm::TokenTarget t{pos - 1, rows[r].token};
      (pos - 1 < P ? pre : cont.targets).push_back(t);
    }
    std::vector<double> old;
    for (const auto& turn : traj.turns) old.insert(old.end(), turn.logps.begin(), turn.logps.end());
    b.prefix_targets.push_back(std::move(pre));
    b.continuations.push_back(std::move(cont));
    b.continuation_sources.push_back(std::move(sources));
    b.old_logps.push_back(std::move(old));
  }
  return b;
}

std::vector<std::vector<double>> backward(const vlm::Model& model, const PolicyBatch& batch, const Image& image,
                                          const vlm::LogProbGrad& fn, std::span<double> grad) {
  auto res = vlm::logprob_backward(model, batch.prefix, batch.prefix_targets, batch.continuations, fn, grad);
  vlm::embedding_backward(model, batch.prefix_sources, res.d_prefix, &image, grad);
  for (std::size_t c = 0; c < batch.continuations.size(); ++c)
    if (batch.continuations[c].inputs.rows() > 0)
      vlm::embedding_backward(model, batch.continuation_sources[c], res.d_continuations[c], nullptr, grad);
  return std::move(res.logps);
}

}  // namespace sieve::seq
