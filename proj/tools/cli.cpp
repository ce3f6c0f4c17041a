// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <fmt/format.h>
#include <omp.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>

#include "json.hpp"
#include "sieve/evidence_cache.hpp"
#include "sieve/metrics.hpp"
#include "sieve/model_io.hpp"
#include "sieve/run_config.hpp"
#include "sieve/synth_data.hpp"
#include "sieve/trainer.hpp"
#include "sieve/visualize.hpp"
#include "sieve/warm_start.hpp"

namespace sieve::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Context {
  std::string command;
  RunConfig config;
  fs::path out;
};

void configure_logging() {
  spdlog::drop("sieve");
  auto logger = spdlog::stderr_logger_st("sieve");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("SIEVE_LOG");
  const std::string level = env ? env : "info";
  if (level == "error")
    spdlog::set_level(spdlog::level::err);
  else if (level == "info")
    spdlog::set_level(spdlog::level::info);
  else if (level == "debug")
    spdlog::set_level(spdlog::level::debug);
  else
    throw UsageError("SIEVE_LOG must be one of error, info, debug; got '" + level + "'");
}

void write_out(const Context& ctx, const std::string& name, const std::string& bytes) {
  write_file_atomic(ctx.out / name, bytes);
}

json box_json(const BBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

std::vector<data::Sample> training_samples(const RunConfig& c) {
  if (!c.get("data").empty()) return data::load_dataset(c.get("data"));
  return data::generate_samples(static_cast<std::size_t>(c.get_u64("n")), c.get_u64("seed"));
}

std::vector<data::Sample> evaluation_samples(const RunConfig& c) {
  if (!c.get("data").empty()) return data::load_dataset(c.get("data"));
  return data::generate_heldout(static_cast<std::size_t>(c.get_u64("heldout_n")), c.get_u64("seed"));
}

vlm::Model load_or_build(const RunConfig& c) {
  if (!c.get("model").empty()) return vlm::load_model(c.get("model"));
  spdlog::warn("no --model given; using freshly initialized weights");
  return vlm::build_model(c.model_config());
}

cache::EvidenceCache load_or_discover(const RunConfig& c, const vlm::Model& model,
                                      const std::vector<data::Sample>& samples) {
  if (!c.get("cache").empty()) return cache::EvidenceCache::load(c.get("cache"), model.config().patch_size);
  return metrics::discover_all(model, samples, c.grounding());
}

int cmd_gen_data(const Context& ctx) {
  const auto& c = ctx.config;
  data::generate_dataset(static_cast<std::size_t>(c.get_u64("n")), c.get_u64("seed"), ctx.out);
  return 0;
}

int cmd_discover(const Context& ctx) {
  const auto& c = ctx.config;
  const auto model = load_or_build(c);
  const auto samples = training_samples(c);
  const auto params = c.grounding();
  std::vector<grounding::Discovery> found(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i)
    found[i] = grounding::discover_evidence(model, samples[i].image, tokenize(samples[i].question, model.vocab()),
                                            params);
  std::string lines;
  cache::EvidenceCache cache;
  const int ps = model.config().patch_size;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    json j;
    j["sample_id"] = samples[i].sample_id;
    j["target"] = model.vocab().token(found[i].target_id);
    j["threshold"] = found[i].anchors.threshold_used;
    j["anchors"] = json::array();
    for (const auto& a : found[i].anchors.anchors)
      j["anchors"].push_back({{"token", a.token}, {"position", a.position}, {"score", a.score}});
    j["regions"] = json::array();
    for (const auto& s : found[i].snapshots)
      j["regions"].push_back({{"anchor", s.anchor_token},
                              {"matched", box_json(grounding::to_pixels(s.matched, ps))},
                              {"expanded", box_json(s.region.bbox_pixels)},
                              {"n_vectors", s.embeddings.rows()}});
    j["k_clamped"] = found[i].k_clamped;
    lines += j.dump() + "\n";
    cache.upsert(samples[i].sample_id, std::move(found[i].snapshots), model.version());
  }
  write_out(ctx, "discovery.jsonl", lines);
  cache.save(ctx.out / "cache.svec");
  return 0;
}

int cmd_rollout(const Context& ctx) {
  const auto& c = ctx.config;
  const auto model = load_or_build(c);
  const auto samples = training_samples(c);
  const auto cache = load_or_discover(c, model, samples);
  const auto res = metrics::evaluate(model, samples, cache, c.eval_params());
  const auto weights = c.train_config();
  std::string lines;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = reward::score_trajectory(res.trajectories[i], samples[i].gold_answer, model.vocab(),
                                            weights.weights, weights.act);
    lines += rollout::dump_jsonl(res.trajectories[i], model.vocab(), r.to_json());
  }
  write_out(ctx, "trajectories.jsonl", lines);
  spdlog::info("rollout: {} samples, accuracy {:.4f}, insertion rate {:.4f}", res.n, res.accuracy,
               res.insertion_rate);
  return 0;
}

int cmd_train(const Context& ctx) {
  const auto& c = ctx.config;
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = training_samples(c);
  auto tc = c.train_config();
  tc.validate();

  vlm::Model model = vlm::build_model(c.model_config());
  if (!c.get("model").empty()) {
    model = vlm::load_model(c.get("model"));
  } else {
    const auto wc = c.warm_start_config();
    std::string log = "step,nll,alignment\n";
    train::warm_start(model, samples, wc, [&](int step, double nll, double align) {
      log += fmt::format("{},{:.6f},{:.6f}\n", step, nll, align);
      if (step % 50 == 0 || step + 1 == wc.steps)
        spdlog::info("warm start step {} nll {:.4f} alignment {:.4f}", step, nll, align);
    });
    write_out(ctx, "warm_start.csv", log);
  }

  std::string csv = train::metrics_csv_header();
  cache::EvidenceCache cache;
  train::TrainResult result;
  if (tc.steps > 0) {
    cache = load_or_discover(c, model, samples);
    result = train::train(model, samples, cache, tc,
                          [&](const train::StepMetrics& m, const std::vector<train::Group>&) {
                            csv += train::metrics_csv_row(m);
                          });
    cache.save(ctx.out / "cache.svec");
  }
  write_out(ctx, "metrics.csv", csv);
  vlm::save_model(model, ctx.out / "model.bin");

  json summary;
  summary["steps"] = tc.steps;
  summary["skipped_updates"] = result.skipped_updates;
  summary["model_version"] = model.version();
  if (!result.metrics.empty()) {
    const std::size_t w = std::min<std::size_t>(10, result.metrics.size());
    double first = 0.0, last = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
      first += result.metrics[i].mean_reward;
      last += result.metrics[result.metrics.size() - w + i].mean_reward;
    }
    for (const auto& m : result.metrics) peak = std::max(peak, m.mean_reward);
    summary["first_window_reward"] = first / static_cast<double>(w);
    summary["last_window_reward"] = last / static_cast<double>(w);
    summary["peak_reward"] = peak;
  }
  write_out(ctx, "summary.json", summary.dump(2) + "\n");
  spdlog::info("train finished in {:.1f}s",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_eval(const Context& ctx) {
  const auto& c = ctx.config;
  const auto model = load_or_build(c);
  const auto samples = evaluation_samples(c);
  const auto cache = load_or_discover(c, model, samples);
  const auto res = metrics::evaluate(model, samples, cache, c.eval_params());
  std::string lines;
  for (const auto& t : res.trajectories) lines += rollout::dump_jsonl(t, model.vocab());
  write_out(ctx, "trajectories.jsonl", lines);
  json j;
  j["n"] = res.n;
  j["accuracy"] = res.accuracy;
  j["insertion_rate"] = res.insertion_rate;
  write_out(ctx, "eval.json", j.dump(2) + "\n");
  spdlog::info("eval: accuracy {:.4f} over {} samples", res.accuracy, res.n);
  return 0;
}

int cmd_sweep_layers(const Context& ctx) {
  const auto& c = ctx.config;
  const auto model = load_or_build(c);
  const auto samples = evaluation_samples(c);
  std::vector<vlm::LayerRange> choices;
  for (int l : c.get_int_list("layer_choices")) choices.push_back({l, l});
  const auto rows = metrics::layer_sweep(model, samples, choices, c.grounding());
  std::string csv = "layers,mean_ihr,pairs\n";
  json j;
  j["samples"] = samples.size();
  j["rows"] = json::array();
  for (const auto& r : rows) {
    const std::string name = fmt::format("{}-{}", r.layers.first, r.layers.last);
    csv += fmt::format("{},{:.6f},{}\n", name, r.mean_ihr, r.pairs);
    j["rows"].push_back({{"layers", name}, {"mean_ihr", r.mean_ihr}, {"pairs", r.pairs}});
  }
  write_out(ctx, "layer_sweep.csv", csv);
  write_out(ctx, "layer_sweep.json", j.dump(2) + "\n");
  return 0;
}

int cmd_sweep_k(const Context& ctx) {
  const auto& c = ctx.config;
  const auto model = load_or_build(c);
  const auto samples = evaluation_samples(c);
  const auto rows = metrics::k_sweep(model, samples, c.get_int_list("k_values"), c.grounding(), c.eval_params());
  std::string csv = "k,k_used,clamped,accuracy,insertion_rate\n";
  json j;
  j["samples"] = samples.size();
  j["rows"] = json::array();
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{},{:.6f},{:.6f}\n", r.k, r.k_used, r.clamped ? 1 : 0, r.accuracy, r.insertion_rate);
    j["rows"].push_back({{"k", r.k},
                         {"k_used", r.k_used},
                         {"clamped", r.clamped},
                         {"accuracy", r.accuracy},
                         {"insertion_rate", r.insertion_rate}});
  }
  write_out(ctx, "k_sweep.csv", csv);
  write_out(ctx, "k_sweep.json", j.dump(2) + "\n");
  return 0;
}

int cmd_ablate_random(const Context& ctx) {
  const auto& c = ctx.config;
  const auto model = load_or_build(c);
  const auto samples = evaluation_samples(c);
  const auto params = c.grounding();
  const auto discovered = load_or_discover(c, model, samples);
  std::string csv = "seed,discovered_accuracy,random_accuracy,discovered_insertion_rate,random_insertion_rate\n";
  json j;
  j["samples"] = samples.size();
  j["rows"] = json::array();
  int holds = 0, total = 0;
  for (int seed : c.get_int_list("ablation_seeds")) {
    auto eval = c.eval_params();
    eval.seed = static_cast<std::uint64_t>(seed);
    const auto r = metrics::ablate_random_embeddings(model, samples, discovered, params, eval);
    csv += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", seed, r.discovered.accuracy, r.random.accuracy,
                       r.discovered.insertion_rate, r.random.insertion_rate);
    j["rows"].push_back({{"seed", seed},
                         {"discovered_accuracy", r.discovered.accuracy},
                         {"random_accuracy", r.random.accuracy}});
    holds += r.discovered.accuracy >= r.random.accuracy ? 1 : 0;
    ++total;
  }
  j["discovered_at_least_random"] = holds;
  j["seeds"] = total;
  write_out(ctx, "ablation.csv", csv);
  write_out(ctx, "ablation.json", j.dump(2) + "\n");
  return 0;
}

int cmd_visualize(const Context& ctx) {
  const auto& c = ctx.config;
  const auto model = load_or_build(c);
  const auto samples = training_samples(c);
  const auto index = static_cast<std::size_t>(c.get_u64("sample"));
  if (index >= samples.size())
    throw IndexError(fmt::format("visualize: sample {} out of range ({} samples)", index, samples.size()));
  const auto& s = samples[index];
  std::vector<grounding::EvidenceSnapshot> snaps;
  if (!c.get("cache").empty()) {
    const auto cache = cache::EvidenceCache::load(c.get("cache"), model.config().patch_size);
    if (auto e = cache.lookup(s.sample_id))
      for (const auto& p : e->snapshots) snaps.push_back(*p);
  } else {
    snaps = cache::discover_for_sample(s, model, c.grounding());
  }
  viz::visualize(s.sample_id, s.image, snaps, model.config().patch_size, ctx.out / (s.sample_id + ".ppm"));
  return 0;
}

int cmd_cache_dump(const Context& ctx) {
  const auto& c = ctx.config;
  if (c.get("cache").empty()) throw UsageError("cache-dump: set cache=<path to .svec>");
  const auto cache = cache::EvidenceCache::load(c.get("cache"));
  std::string lines;
  for (const auto& e : cache.entries()) {
    json j;
    j["sample_id"] = e->sample_id;
    j["model_version"] = e->model_version;
    j["refresh_count"] = e->refresh_count;
    j["snapshots"] = json::array();
    for (const auto& s : e->snapshots) {
      const auto& b = s->region.bbox_patches;
      j["snapshots"].push_back({{"anchor", s->anchor_token},
                                {"anchor_id", s->anchor_id},
                                {"patch_box", json::array({b.row_min, b.col_min, b.row_max, b.col_max})},
                                {"bbox", box_json(s->region.bbox_pixels)},
                                {"rows", s->embeddings.rows()},
                                {"cols", s->embeddings.cols()}});
    }
    lines += j.dump() + "\n";
  }
  write_out(ctx, "cache_dump.jsonl", lines);
  std::cout << lines;
  return 0;
}

const std::map<std::string, std::pair<std::string, std::function<int(const Context&)>>>& commands() {
  static const std::map<std::string, std::pair<std::string, std::function<int(const Context&)>>> m = {
      {"gen-data", {"Render a synthetic dataset (manifest.jsonl, images/)", cmd_gen_data}},
      {"discover", {"Run evidence discovery (discovery.jsonl, cache.svec)", cmd_discover}},
      {"rollout", {"Sample one rollout per sample (trajectories.jsonl)", cmd_rollout}},
      {"train", {"Warm start and RL training (metrics.csv, model.bin, cache.svec)", cmd_train}},
      {"eval", {"Answer accuracy on the held-out split (eval.json)", cmd_eval}},
      {"sweep-layers", {"Mean IHR per representation layer (layer_sweep.csv/json)", cmd_sweep_layers}},
      {"sweep-k", {"Accuracy per top-k block count (k_sweep.csv/json)", cmd_sweep_k}},
      {"ablate-random", {"Discovered versus random evidence (ablation.csv/json)", cmd_ablate_random}},
      {"visualize", {"Draw matched and expanded boxes for one sample (<id>.ppm + .json)", cmd_visualize}},
      {"cache-dump", {"Print the contents of an SVEC cache (cache_dump.jsonl)", cmd_cache_dump}},
  };
  return m;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"sieve: evidence discovery and insertion on a toy vision-language model"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all");

  std::string config_path, out = "out", layers, set_k;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed, n;
  std::optional<int> threads, steps, max_turns;
  std::string data_dir, model_path;

  for (const auto& [name, entry] : commands()) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Root seed for all randomness");
    sub->add_option("--out", out, "Output directory")->capture_default_str();
    sub->add_option("--threads", threads, "Worker thread cap (0 = runtime default)")->check(CLI::NonNegativeNumber);
    sub->add_option("--steps", steps, "RL training steps");
    sub->add_option("--k", set_k, "Top-k blocks; a comma list for sweep-k");
    sub->add_option("--layers", layers, "Layer range a-b; a comma list for sweep-layers");
    sub->add_option("--n", n, "Number of samples");
    sub->add_option("--max-turns", max_turns, "Turn horizon");
    sub->add_option("--data", data_dir, "Dataset directory (manifest.jsonl)");
    sub->add_option("--model", model_path, "Model checkpoint");
    sub->add_option("--set", sets, "Override a configuration key (key=value), repeatable");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  Context ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  try {
    configure_logging();
    if (!config_path.empty()) ctx.config.merge_file(config_path);
    for (const auto& s : sets) ctx.config.set_assignment(s);
    if (seed) ctx.config.set("seed", std::to_string(*seed));
    if (threads) ctx.config.set("threads", std::to_string(*threads));
    if (steps) ctx.config.set("steps", std::to_string(*steps));
    if (n) ctx.config.set("n", std::to_string(*n));
    if (max_turns) ctx.config.set("max_turns", std::to_string(*max_turns));
    if (!data_dir.empty()) ctx.config.set("data", data_dir);
    if (!model_path.empty()) ctx.config.set("model", model_path);
    if (!layers.empty()) ctx.config.set(ctx.command == "sweep-layers" ? "layer_choices" : "layers", layers);
    if (!set_k.empty()) ctx.config.set(ctx.command == "sweep-k" ? "k_values" : "k", set_k);
    // Fail on malformed values before doing any work.
    (void)ctx.config.train_config();
    (void)ctx.config.warm_start_config();
    (void)ctx.config.model_config();
    (void)ctx.config.get_int_list("k_values");
    (void)ctx.config.get_int_list("layer_choices");
    (void)ctx.config.get_int_list("ablation_seeds");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    const auto t = ctx.config.get_int("threads");
    if (t > 0) omp_set_num_threads(static_cast<int>(t));
    ctx.out = out;
    fs::create_directories(ctx.out);
    write_file_atomic(ctx.out / "config.txt", ctx.config.effective_text());
    return commands().at(ctx.command).second(ctx);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

}  // namespace sieve::cli
