// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

// Acceptance harness: one PASS/FAIL line per criterion. Criteria 8-11 drive
// the `sieve` executable end to end inside a scratch directory.

#include <fmt/format.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include <spdlog/spdlog.h>
#include "sieve/errors.hpp"
#include "sieve/evidence_cache.hpp"
#include "sieve/grounding.hpp"
#include "sieve/metrics.hpp"
#include "sieve/numerics.hpp"
#include "sieve/reward.hpp"
#include "sieve/toy_vlm.hpp"
#include "support/oracles.hpp"

#ifndef SIEVE_CLI_PATH
#error "SIEVE_CLI_PATH must name the sieve executable"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sieve;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI with stderr captured in `<out>.log`; returns the exit code.
int sieve_cli(const std::string& args, const fs::path& out) {
  fs::create_directories(out.parent_path());
  const std::string cmd = fmt::format("SIEVE_LOG=info '{}' {} --out '{}' 2> '{}.log'", SIEVE_CLI_PATH, args,
                                      out.string(), out.string());
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Verdict expect_cli(const std::string& args, const fs::path& out) {
  const int rc = sieve_cli(args, out);
  if (rc != 0) return {false, fmt::format("`sieve {}` exited {} (see {}.log)", args, rc, out.string())};
  return {true, {}};
}

// --- 1 -------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  RngStream rng(101);
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    RngStream r = rng.split(trial);
    vlm::ModelConfig c;
    const int heads[] = {1, 2, 4};
    c.n_heads = heads[r.next_below(3)];
    c.d_model = c.n_heads * static_cast<int>(4 + 2 * r.next_below(4));
    c.n_layers = 1 + static_cast<int>(r.next_below(3));
    c.patch_size = 4;
    c.image_side = 8;
    c.mid_layers = {1, c.n_layers};
    c.max_seq = 32;
    c.seed = r.next_u64();
    const auto model = vlm::build_model(c);
    Matrix x(2 + r.next_below(9), static_cast<std::size_t>(c.d_model));
    for (auto& v : x.values()) v = r.next_normal();
    const int target = static_cast<int>(r.next_below(model.vocab().size()));
    const auto report = vlm::grad_scalar_logit(model, x, target);
    const double h = 1e-5;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Matrix xp = x, xm = x;
      xp.values()[i] += h;
      xm.values()[i] -= h;
      const double fd = (vlm::forward(model, xp).logits[static_cast<std::size_t>(target)] -
                         vlm::forward(model, xm).logits[static_cast<std::size_t>(target)]) /
                        (2 * h);
      const double a = report.grads.values()[i];
      worst = std::max(worst, std::abs(a - fd) / std::max(std::abs(fd), 1e-8));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0,
          fmt::format("max relative error {:.2e} over 20 configurations (bar 1e-4), {:.1f}s", worst, secs)};
}

// --- 2 -------------------------------------------------------------------------

Verdict softmax_oracle() {
  RngStream rng(202);
  double worst = 0.0, worst_sum = 0.0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    RngStream r = rng.split(t);
    const std::size_t n = 4 + r.next_below(64), d = 4 + r.next_below(29);
    Matrix raw(n, d), anchor(1, d);
    for (auto& v : raw.values()) v = r.next_normal();
    for (auto& v : anchor.values()) v = r.next_normal();
    const double tau = 0.02 + r.next_uniform();
    const auto map = grounding::anchor_patch_affinity(grounding::normalize_rows(anchor, false).row(0),
                                                      grounding::normalize_rows(raw, false), 1, static_cast<int>(n),
                                                      tau);
    std::vector<double> cos(n);
    for (std::size_t j = 0; j < n; ++j) cos[j] = sieve::oracle::cosine(anchor.row(0), raw.row(j));
    const auto ref = sieve::oracle::softmax(cos, tau);
    std::vector<double> v(n);
    for (auto& x : v) x = 30.0 * r.next_normal();
    const auto direct = numerics::stable_softmax(v, tau);
    const auto direct_ref = sieve::oracle::softmax(v, tau);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      worst = std::max({worst, std::abs(map.weights[j] - ref[j]), std::abs(direct[j] - direct_ref[j])});
      sum += map.weights[j];
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  // Every map discovery builds on real inputs.
  const auto model = vlm::build_model(vlm::ModelConfig{});
  const auto samples = data::generate_samples(40, 2);
  std::size_t maps = 0;
  for (const auto& s : samples) {
    const auto found =
        grounding::discover_evidence(model, s.image, tokenize(s.question, model.vocab()), grounding::GroundingParams{});
    for (const auto& m : found.maps) {
      double sum = 0.0;
      for (double w : m.weights) sum += w;
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      ++maps;
    }
  }
  return {worst <= 1e-10 && worst_sum <= 1e-9,
          fmt::format("max deviation {:.2e} from the 50-digit reference (bar 1e-10); max |sum - 1| {:.2e} over "
                      "100 oracle maps and {} discovery maps (bar 1e-9)",
                      worst, worst_sum, maps)};
}

// --- 3 -------------------------------------------------------------------------

Verdict block_selection_oracle() {
  RngStream rng(303);
  std::size_t cases = 0, agree = 0;
  for (int rows = 1; rows <= 6; ++rows)
    for (int cols = 1; cols <= 6; ++cols)
      for (int bs = 1; bs <= 3; ++bs)
        for (int k = 1; k <= 4; ++k)
          for (int rep = 0; rep < 5; ++rep) {
            std::vector<double> w(static_cast<std::size_t>(rows * cols));
            for (auto& v : w) v = static_cast<double>(rng.next_below(4));  // many ties
            const auto blocks = grounding::score_blocks(w, rows, cols, bs);
            const auto want = sieve::oracle::select(blocks.scores, blocks.rows, blocks.cols, rows, cols, bs, k);
            const auto got = grounding::select_region(blocks, k, 4);
            auto chosen = got.region.blocks;
            std::sort(chosen.begin(), chosen.end(), [&](const auto& a, const auto& b) {
              return a.row * blocks.cols + a.col < b.row * blocks.cols + b.col;
            });
            agree += chosen == want.blocks && got.region.bbox_patches == want.hull && got.clamped == want.clamped;
            ++cases;
          }
  return {agree == cases, fmt::format("{}/{} grids up to 6x6, block sizes 1-3, k 1-4 agree", agree, cases)};
}

// --- 4 -------------------------------------------------------------------------

Verdict reward_table() {
  const Vocab vocab = Vocab::standard();
  const auto sums = reward::subset_sums({});
  int ok = 0;
  for (const auto& row : sieve::oracle::kRewardTable) {
    const auto r = reward::score_trajectory(sieve::oracle::trajectory(row.f, vocab), "red", vocab, {}, {});
    const bool in_set =
        std::any_of(sums.begin(), sums.end(), [&](double s) { return std::abs(s - r.total) < 1e-12; });
    ok += r.r_res == row.r_res && r.r_format == row.r_format && r.r_emb == row.r_emb && r.r_act == row.r_act &&
          std::abs(r.total - row.total) < 1e-12 && in_set;
  }
  return {ok == 16, fmt::format("{}/16 rows match, totals in the subset-sum set", ok)};
}

// --- 5 -------------------------------------------------------------------------

Verdict advantage_properties() {
  bool constant_ok = true;
  double zero_sum = 0.0, shift = 0.0;
  RngStream rng(505);
  const auto sums = reward::subset_sums({});
  for (std::uint64_t t = 0; t < 200; ++t) {
    RngStream r = rng.split(t);
    const std::size_t g = 2 + r.next_below(15);
    std::vector<double> rewards(g);
    for (auto& x : rewards) x = sums[r.next_below(sums.size())];
    const auto c = reward::grpo_advantages(std::vector<double>(g, rewards[0]));
    constant_ok &= std::all_of(c.begin(), c.end(), [](double a) { return a == 0.0; });
    const auto a = reward::grpo_advantages(rewards);
    double s = 0.0;
    for (double x : a) s += x;
    zero_sum = std::max(zero_sum, std::abs(s));
    std::vector<double> shifted = rewards;
    const double delta = 10.0 * r.next_uniform() - 5.0;
    for (auto& x : shifted) x += delta;
    const auto b = reward::grpo_advantages(shifted);
    for (std::size_t i = 0; i < g; ++i) shift = std::max(shift, std::abs(a[i] - b[i]));
  }
  const auto pair = reward::grpo_advantages(std::vector<double>{1.6, 0.0});
  const double pair_err = std::max(std::abs(pair[0] - 1.0), std::abs(pair[1] + 1.0));
  return {constant_ok && zero_sum <= 1e-9 && shift <= 1e-9 && pair_err <= 1e-6,
          fmt::format("constant groups {}; max |sum| {:.1e}; max shift change {:.1e}; (1.6, 0) -> ({:.9f}, {:.9f})",
                      constant_ok ? "exactly zero" : "NOT zero", zero_sum, shift, pair[0], pair[1])};
}

// --- 6 -------------------------------------------------------------------------

Verdict ihr_oracle() {
  RngStream rng(606);
  int agree = 0, hits = 0;
  auto box = [](RngStream r) {
    const int x0 = static_cast<int>(r.next_below(32)), y0 = static_cast<int>(r.next_below(32));
    return BBox{x0, y0, x0 + 1 + static_cast<int>(r.next_below(static_cast<std::uint64_t>(32 - x0))),
                y0 + 1 + static_cast<int>(r.next_below(static_cast<std::uint64_t>(32 - y0)))};
  };
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const BBox a = box(rng.split(2 * i)), b = box(rng.split(2 * i + 1));
    const int want = sieve::oracle::ihr(a, b, 32);
    agree += metrics::ihr(a, b) == want && metrics::ihr(b, a) == want;
    hits += want;
  }
  const bool edges = metrics::ihr({0, 0, 4, 4}, {4, 0, 8, 4}) == 0 && metrics::ihr({0, 0, 4, 4}, {0, 4, 4, 8}) == 0 &&
                     metrics::ihr({0, 0, 4, 4}, {4, 4, 8, 8}) == 0;
  return {agree == 1000 && edges,
          fmt::format("{}/1000 random pairs agree ({} overlapping); edge-touching boxes score {}", agree, hits,
                      edges ? "0" : "NONZERO")};
}

// --- 7 -------------------------------------------------------------------------

Verdict persistence() {
  cache::EvidenceCache c;
  RngStream rng(707);
  for (std::uint64_t i = 0; i < 100; ++i) {
    std::vector<grounding::EvidenceSnapshot> snaps(1 + rng.next_below(3));
    for (std::size_t j = 0; j < snaps.size(); ++j) {
      RngStream r = rng.split(i * 8 + j);
      auto& s = snaps[j];
      s.anchor_id = 8 + static_cast<int>(r.next_below(50));
      s.anchor_token = Vocab::standard().token(s.anchor_id);
      const int r0 = static_cast<int>(r.next_below(5)), c0 = static_cast<int>(r.next_below(5));
      const int nr = 1 + static_cast<int>(r.next_below(3)), nc = 1 + static_cast<int>(r.next_below(3));
      s.region = grounding::make_region({}, {r0, c0, r0 + nr - 1, c0 + nc - 1}, 8);
      s.matched = s.region.bbox_patches;
      s.embeddings = Matrix(static_cast<std::size_t>(nr * nc), 64);
      for (auto& v : s.embeddings.values()) v = static_cast<double>(static_cast<float>(r.next_normal()));
    }
    c.upsert(fmt::format("s{:05d}", i), std::move(snaps), static_cast<std::uint32_t>(i % 7));
  }
  const fs::path dir = fs::temp_directory_path() / fmt::format("sieve_accept_{}", ::getpid());
  fs::create_directories(dir);
  c.save(dir / "c.svec");
  const std::string bytes = read_file(dir / "c.svec");
  const auto back = cache::EvidenceCache::load(dir / "c.svec");
  bool exact = back.size() == c.size();
  for (const auto& e : c.entries()) {
    const auto b = back.lookup(e->sample_id);
    exact &= b && b->model_version == e->model_version && b->snapshots.size() == e->snapshots.size();
    if (!exact) break;
    for (std::size_t j = 0; j < e->snapshots.size(); ++j) {
      const auto& x = e->snapshots[j]->embeddings.values();
      const auto& y = b->snapshots[j]->embeddings.values();
      exact &= x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0 &&
               e->snapshots[j]->region == b->snapshots[j]->region &&
               e->snapshots[j]->anchor_id == b->snapshots[j]->anchor_id;
    }
  }
  exact &= back.serialize() == bytes;
  std::size_t rejected = 0, tried = 0;
  for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 64) {
    ++tried;
    std::ofstream(dir / "t.svec", std::ios::binary) << bytes.substr(0, len);
    try {
      (void)cache::EvidenceCache::load(dir / "t.svec");
    } catch (const FormatError&) {
      ++rejected;
    }
  }
  fs::remove_all(dir);
  return {exact && rejected == tried,
          fmt::format("100-entry round trip {}; {}/{} truncations rejected with a format error",
                      exact ? "bitwise exact" : "NOT exact", rejected, tried)};
}

// --- 8, 9, 11 ------------------------------------------------------------------

struct Curve {
  std::vector<double> rewards;
  double first = 0.0, last = 0.0, peak = 0.0;
};

/// Parses metrics.csv; throws FormatError when a row is malformed.
Curve read_curve(const fs::path& csv) {
  std::istringstream in(read_file(csv));
  std::string line;
  std::getline(in, line);
  if (line != "step,mean_reward,mean_len,max_len,insertion_rate,refreshes,entropy")
    throw FormatError("unexpected metrics header: " + line);
  Curve c;
  int expected_step = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (cells.size() != 7) throw FormatError("metrics row with " + std::to_string(cells.size()) + " cells");
    std::size_t used = 0;
    if (std::stoi(cells[0], &used) != expected_step++) throw FormatError("metrics steps have a gap");
    const double r = std::stod(cells[1], &used);
    if (used != cells[1].size() || !std::isfinite(r)) throw FormatError("bad reward cell " + cells[1]);
    for (std::size_t i = 2; i < cells.size(); ++i) (void)std::stod(cells[i]);
    c.rewards.push_back(r);
  }
  const std::size_t n = c.rewards.size(), w = std::min<std::size_t>(10, n);
  for (std::size_t i = 0; i < w; ++i) {
    c.first += c.rewards[i] / static_cast<double>(w);
    c.last += c.rewards[n - w + i] / static_cast<double>(w);
  }
  for (double r : c.rewards) c.peak = std::max(c.peak, r);
  return c;
}

struct Smoke {
  fs::path work;
  double warm_seconds = 0.0;
  bool warm_ok = false;
  std::string warm_error;
};

Verdict smoke_training(Smoke& smoke) {
  auto t0 = Clock::now();
  const auto warm = expect_cli("train --seed 0 --steps 0", smoke.work / "warm");
  smoke.warm_seconds = seconds_since(t0);
  smoke.warm_ok = warm.pass;
  smoke.warm_error = warm.detail;
  if (!warm.pass) return warm;
  t0 = Clock::now();
  const std::string model = (smoke.work / "warm" / "model.bin").string();
  const auto run = expect_cli(fmt::format("train --seed 0 --steps 60 --model '{}'", model), smoke.work / "train");
  if (!run.pass) return run;
  const double total = smoke.warm_seconds + seconds_since(t0);
  const Curve c = read_curve(smoke.work / "train" / "metrics.csv");
  const double gain = c.last - c.first;
  return {c.rewards.size() == 60 && gain >= 0.1 && total <= 900.0,
          fmt::format("mean reward first 10 steps {:.4f}, last 10 {:.4f}, gain {:+.4f} (bar +0.1); {} steps; "
                      "{:.0f}s incl. {:.0f}s warm start (bar 900s)",
                      c.first, c.last, gain, c.rewards.size(), total, smoke.warm_seconds)};
}

Verdict ablation_direction(const Smoke& smoke) {
  const fs::path model = smoke.work / "train" / "model.bin";
  if (!fs::exists(model)) return {false, "no smoke-trained model (criterion 8 did not finish)"};
  const auto run =
      expect_cli(fmt::format("ablate-random --seed 0 --set ablation_seeds=0,1,2 --model '{}'", model.string()),
                 smoke.work / "ablate");
  if (!run.pass) return run;
  const json j = json::parse(read_file(smoke.work / "ablate" / "ablation.json"));
  std::string rows;
  for (const auto& r : j["rows"])
    rows += fmt::format(" seed {}: {:.3f} vs {:.3f};", r["seed"].get<int>(), r["discovered_accuracy"].get<double>(),
                        r["random_accuracy"].get<double>());
  const int holds = j["discovered_at_least_random"].get<int>();
  return {holds == 3 && j["seeds"].get<int>() == 3,
          fmt::format("discovered >= random on {}/3 seeds over {} held-out samples (discovered vs random:{})", holds,
                      j["samples"].get<int>(), rows)};
}

Verdict reward_shaping(const Smoke& smoke) {
  if (!smoke.warm_ok) return {false, "no warm-started model: " + smoke.warm_error};
  const fs::path model = smoke.work / "warm" / "model.bin";
  const auto run = expect_cli(
      fmt::format("train --seed 0 --steps 60 --set act_enabled=false --model '{}'", model.string()),
      smoke.work / "no_act");
  if (!run.pass) return run;
  try {
    const Curve c = read_curve(smoke.work / "no_act" / "metrics.csv");
    const bool collapse = c.last < 0.5 * c.peak;
    return {c.rewards.size() == 60,
            fmt::format("metrics log parsed ({} steps); final-10 mean {:.4f}, peak {:.4f}: collapse {}",
                        c.rewards.size(), c.last, c.peak, collapse ? "FLAGGED" : "not observed")};
  } catch (const std::exception& e) {
    return {false, std::string("metrics log unparseable: ") + e.what()};
  }
}

// --- 10 ------------------------------------------------------------------------

/// Every file under `dir`, keyed by relative path; config.txt without its
/// threads line, since that is the one thing allowed to differ.
std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string content = read_file(e.path());
    if (e.path().filename() == "config.txt") {
      std::istringstream in(content);
      content.clear();
      for (std::string line; std::getline(in, line);)
        if (line.rfind("threads=", 0) != 0) content += line + "\n";
    }
    files[fs::relative(e.path(), dir).string()] = std::move(content);
  }
  return files;
}

Verdict determinism(const fs::path& work) {
  const std::string small =
      "--seed 5 --n 24 --set d_model=32 --set n_layers=2 --set n_heads=2 --set layers=1-2 --set warm_steps=4 "
      "--set warm_batch=4 --set batch=4 --set group_size=4 --set turn_budget=16 --set max_turns=3";
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "train --steps 3"}, {"discover", "discover"}, {"rollout", "rollout"}};
  std::string detail;
  bool all = true;
  for (const auto& [name, args] : commands) {
    std::vector<std::map<std::string, std::string>> outs;
    for (const auto& [tag, threads] : std::vector<std::pair<std::string, int>>{{"a", 1}, {"b", 1}, {"c", 3}}) {
      const fs::path out = work / "determinism" / (name + "_" + tag);
      const auto run = expect_cli(fmt::format("{} {} --threads {}", args, small, threads), out);
      if (!run.pass) return run;
      outs.push_back(snapshot_dir(out));
    }
    const bool same = outs[0] == outs[1] && outs[0] == outs[2];
    all &= same;
    detail += fmt::format("{} {} ({} files); ", name, same ? "identical" : "DIFFERS", outs[0].size());
  }
  return {all, detail + "threads 1, 1, 3"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sieve acceptance checks"};
  std::vector<int> only;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "Criteria to run (default: all)");
  app.add_option("--work", work, "Scratch directory for end-to-end runs");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::err);

  Smoke smoke;
  smoke.work = fs::absolute(work);
  fs::remove_all(smoke.work);
  fs::create_directories(smoke.work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"softmax and affinity oracle", softmax_oracle},
      {"block-selection oracle", block_selection_oracle},
      {"reward truth table", reward_table},
      {"advantage properties", advantage_properties},
      {"IHR oracle", ihr_oracle},
      {"SVEC persistence", persistence},
      {"end-to-end smoke training", [&] { return smoke_training(smoke); }},
      {"random-evidence ablation direction", [&] { return ablation_direction(smoke); }},
      {"determinism across runs and threads", [&] { return determinism(smoke.work); }},
      {"reward-shaping regression", [&] { return reward_shaping(smoke); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    fmt::print("{} {:>2} {}: {}\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
