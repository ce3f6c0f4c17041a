// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/run_config.hpp"

#include <charconv>
#include <sstream>
#include <utility>

namespace sieve::cli {

namespace {

// Registry order is the order of the echoed configuration.
const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"seed", "0"},
      {"threads", "0"},
      {"n", "1500"},
      {"heldout_n", "200"},
      {"data", ""},
      {"model", ""},
      {"cache", ""},
      {"d_model", "64"},
      {"n_layers", "6"},
      {"n_heads", "4"},
      {"warm_steps", "300"},
      {"warm_batch", "16"},
      {"warm_lr", "0.002"},
      {"warm_insertion_share", "0.5"},
      {"warm_short_think_share", "0.3"},
      {"warm_evidence_miss_share", "0.25"},
      {"alignment_weight", "0"},
      {"steps", "60"},
      {"batch", "16"},
      {"group_size", "8"},
      {"lr", "0.001"},
      {"momentum", "0.9"},
      {"clip_eps", "0.2"},
      {"kl", "0"},
      {"refresh_period", "0"},
      {"temperature", "1"},
      {"turn_budget", "64"},
      {"max_turns", "4"},
      {"lambda_result", "0.6"},
      {"lambda_format", "0.3"},
      {"lambda_embedding", "0.5"},
      {"lambda_action", "0.2"},
      {"act_enabled", "true"},
      {"act_or", "false"},
      {"act_min_think", "8"},
      {"layers", "3-4"},
      {"tau", "0.1"},
      {"block_size", "2"},
      {"k", "1"},
      {"margin_blocks", "1"},
      {"center", "true"},
      {"source_space", "input"},
      {"saliency_threshold", "0.5"},
      {"max_anchors", "4"},
      {"k_values", "1,2,3,4,5,6,7"},
      {"layer_choices", "1,2,3,4,5,6"},
      {"ablation_seeds", "0,1,2"},
      {"sample", "0"},
  };
  return d;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw UsageError("config: " + key + "=" + value + " is not " + want);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, _] : defaults()) out.push_back(key);
    return out;
  }();
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.contains(key)) {
    std::string list;
    for (const auto& k : keys()) list += (list.empty() ? "" : ", ") + k;
    throw UsageError("config: unknown key '" + key + "'; valid keys: " + list);
  }
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("config: expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    try {
      set_assignment(line);
    } catch (const UsageError& e) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  merge_text(text, path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("config: unknown key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const auto& v = get(key);
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const auto& v = get(key);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double RunConfig::get_double(const std::string& key) const {
  const auto& v = get(key);
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const auto& v = get(key);
  std::vector<int> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    int x = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size()) bad_value(key, v, "a list of integers");
    out.push_back(x);
  }
  if (out.empty()) bad_value(key, v, "a non-empty list");
  return out;
}

std::string RunConfig::effective_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + "=" + values_.at(k) + "\n";
  return out;
}

vlm::LayerRange parse_layer_range(const std::string& text) {
  const auto t = trim(text);
  const auto dash = t.find('-');
  auto num = [&](const std::string& s) {
    int x = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size())
      throw UsageError("config: '" + text + "' is not a layer or layer range");
    return x;
  };
  if (dash == std::string::npos) {
    const int l = num(t);
    if (l < 1) throw UsageError("config: layers are numbered from 1, got '" + text + "'");
    return {l, l};
  }
  const vlm::LayerRange r{num(t.substr(0, dash)), num(t.substr(dash + 1))};
  if (r.first < 1 || r.first > r.last) throw UsageError("config: '" + text + "' is not an ascending layer range");
  return r;
}

std::vector<vlm::LayerRange> parse_layer_list(const std::string& text) {
  std::vector<vlm::LayerRange> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_layer_range(item));
  if (out.empty()) throw UsageError("config: empty layer list");
  return out;
}

vlm::ModelConfig RunConfig::model_config() const {
  vlm::ModelConfig c;
  c.d_model = static_cast<int>(get_int("d_model"));
  c.n_layers = static_cast<int>(get_int("n_layers"));
  c.n_heads = static_cast<int>(get_int("n_heads"));
  c.mid_layers = parse_layer_range(get("layers"));
  c.seed = get_u64("seed");
  return c;
}

grounding::GroundingParams RunConfig::grounding() const {
  grounding::GroundingParams p;
  p.layers = parse_layer_range(get("layers"));
  p.tau = get_double("tau");
  p.block_size = static_cast<int>(get_int("block_size"));
  p.k = static_cast<int>(get_int("k"));
  p.margin_blocks = static_cast<int>(get_int("margin_blocks"));
  p.center = get_bool("center");
  const auto& space = get("source_space");
  if (space == "input")
    p.source_space = grounding::SourceSpace::kInputEmbedding;
  else if (space == "mid")
    p.source_space = grounding::SourceSpace::kMidLayer;
  else
    bad_value("source_space", space, "one of input, mid");
  p.saliency.relative_threshold = get_double("saliency_threshold");
  p.saliency.max_anchors = static_cast<std::size_t>(get_u64("max_anchors"));
  return p;
}

rollout::SamplerParams RunConfig::sampler() const {
  rollout::SamplerParams s;
  s.temperature = get_double("temperature");
  s.turn_budget = static_cast<int>(get_int("turn_budget"));
  s.max_turns = static_cast<int>(get_int("max_turns"));
  return s;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.prompts_per_batch = static_cast<int>(get_int("batch"));
  t.group_size = static_cast<int>(get_int("group_size"));
  t.steps = static_cast<int>(get_int("steps"));
  t.learning_rate = get_double("lr");
  t.momentum = get_double("momentum");
  t.clip_eps = get_double("clip_eps");
  t.kl_coeff = get_double("kl");
  t.seed = get_u64("seed");
  t.refresh_period = static_cast<int>(get_int("refresh_period"));
  t.sampler = sampler();
  t.weights = {get_double("lambda_result"), get_double("lambda_format"), get_double("lambda_embedding"),
               get_double("lambda_action")};
  t.act.enabled = get_bool("act_enabled");
  t.act.use_or = get_bool("act_or");
  t.act.min_think = static_cast<int>(get_int("act_min_think"));
  t.grounding = grounding();
  return t;
}

train::WarmStartConfig RunConfig::warm_start_config() const {
  train::WarmStartConfig w;
  w.steps = static_cast<int>(get_int("warm_steps"));
  w.batch = static_cast<int>(get_int("warm_batch"));
  w.learning_rate = get_double("warm_lr");
  w.insertion_share = get_double("warm_insertion_share");
  w.short_think_share = get_double("warm_short_think_share");
  w.evidence_miss_share = get_double("warm_evidence_miss_share");
  w.alignment_weight = get_double("alignment_weight");
  w.seed = get_u64("seed");
  w.grounding = grounding();
  return w;
}

metrics::EvalParams RunConfig::eval_params() const {
  metrics::EvalParams e;
  e.sampler = sampler();
  e.seed = get_u64("seed");
  return e;
}

}  // namespace sieve::cli
