// SPDX-FileCopyrightText: © 2026 The sieve authors
//
// SPDX-License-Identifier: Apache-2.0

#include "sieve/toy_vlm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sieve/errors.hpp"

namespace sieve::vlm {

using numerics::gemm;
using numerics::gemm_at_acc;
using numerics::gemm_bt;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (d_model < 1 || n_heads < 1) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0)
    fail("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
  if (n_layers < 0) fail("n_layers must be non-negative");
  if (patch_size < 1 || image_side < 1) fail("patch_size and image_side must be positive");
  if (image_side % patch_size != 0) fail("image_side not divisible by patch_size");
  if (n_layers > 0 && (mid_layers.first < 1 || mid_layers.last > n_layers || mid_layers.first > mid_layers.last))
    fail("mid_layers must be a nonempty range within [1, n_layers]");
  if (max_seq < n_patches() + 1) fail("max_seq must exceed the patch count");
  for (auto t : Vocab::control_tokens())
    if (!vocab.contains(t)) fail("vocab lacks control token " + std::string(t));
}

TokenStream TokenStream::make(int rows, int cols, std::span<const int> text_ids) {
  TokenStream s;
  s.rows = rows;
  s.cols = cols;
  const std::size_t nv = static_cast<std::size_t>(rows) * cols;
  s.ids.assign(nv, -1);
  s.modality.assign(nv, Modality::kVision);
  for (int id : text_ids) {
    s.ids.push_back(id);
    s.modality.push_back(Modality::kText);
  }
  return s;
}

ParamLayout ParamLayout::build(const ModelConfig& c) {
  ParamLayout L;
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.mlp_width());
  const auto v = c.vocab.size();
  auto add = [&L](std::string name, std::size_t rows, std::size_t cols) {
    TensorSlot s{L.total, rows, cols};
    L.total += rows * cols;
    L.named.emplace_back(std::move(name), s);
    return s;
  };
  L.tok_emb = add("tok_emb", v, d);
  L.pos_emb = add("pos_emb", static_cast<std::size_t>(c.max_seq), d);
  L.patch_w = add("patch_w", static_cast<std::size_t>(c.patch_dim()), d);
  L.patch_b = add("patch_b", 1, d);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l + 1) + ".";
    LayerSlots s;
    s.ln1_g = add(p + "ln1_g", 1, d);
    s.ln1_b = add(p + "ln1_b", 1, d);
    s.wq = add(p + "wq", d, d);
    s.bq = add(p + "bq", 1, d);
    s.wk = add(p + "wk", d, d);
    s.bk = add(p + "bk", 1, d);
    s.wv = add(p + "wv", d, d);
    s.bv = add(p + "bv", 1, d);
    s.wo = add(p + "wo", d, d);
    s.bo = add(p + "bo", 1, d);
    s.ln2_g = add(p + "ln2_g", 1, d);
    s.ln2_b = add(p + "ln2_b", 1, d);
    s.w1 = add(p + "w1", d, ff);
    s.b1 = add(p + "b1", 1, ff);
    s.w2 = add(p + "w2", ff, d);
    s.b2 = add(p + "b2", 1, d);
    L.layers.push_back(s);
  }
  L.head_w = add("head_w", v, d);
  L.head_b = add("head_b", 1, v);
  return L;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  layout_ = ParamLayout::build(config_);
  params_.assign(layout_.total, 0.0);
}

Model build_model(const ModelConfig& config) {
  Model model(config);
  const RngStream root(config.seed);
  auto params = model.mutable_params();
  for (const auto& [name, slot] : model.layout().named) {
    const bool is_gain = name.ends_with("_g");
    const bool is_bias = slot.rows == 1 && !is_gain;
    auto out = params.subspan(slot.offset, slot.size());
    if (is_gain) {
      std::fill(out.begin(), out.end(), 1.0);
    } else if (is_bias) {
      std::fill(out.begin(), out.end(), 0.0);
    } else {
      const RngStream stream = root.split(name);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.02 * stream.normal_at(i);
    }
  }
  return model;
}

namespace {

std::span<const double> view(const Model& m, const TensorSlot& s) { return m.slot(s); }
std::span<double> gview(std::span<double> g, const TensorSlot& s) { return g.subspan(s.offset, s.size()); }

void add_bias(Matrix& x, std::span<const double> b) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
}

void sum_rows_into(const Matrix& x, std::span<double> out) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
}

Matrix linear(const Matrix& x, std::span<const double> w, std::span<const double> b, std::size_t out_dim) {
  Matrix y(x.rows(), out_dim);
  gemm(x.values(), w, y.values(), x.rows(), x.cols(), out_dim, false);
  add_bias(y, b);
  return y;
}

void layer_norm_rows(const Matrix& x, std::span<const double> g, std::span<const double> b, Matrix& y,
                     std::vector<double>& mean, std::vector<double>& rstd) {
  y = Matrix(x.rows(), x.cols());
  mean.resize(x.rows());
  rstd.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto [mu, rs] = numerics::layer_norm(x.row(i), g, b, y.row(i));
    mean[i] = mu;
    rstd[i] = rs;
  }
}

void append_rows(Matrix& dst, const Matrix& src) {
  const std::size_t start = dst.rows();
  dst.resize_rows(start + src.rows());
  std::copy(src.values().begin(), src.values().end(), dst.values().begin() + static_cast<std::ptrdiff_t>(start * dst.cols()));
}

}  // namespace

KvCache empty_cache(const Model& model) {
  KvCache c;
  const auto d = static_cast<std::size_t>(model.config().d_model);
  c.keys.assign(static_cast<std::size_t>(model.config().n_layers), Matrix(0, d));
  c.values.assign(static_cast<std::size_t>(model.config().n_layers), Matrix(0, d));
  return c;
}

KvGrads zero_kv_grads(const Model& model, std::size_t length) {
  KvGrads g;
  const auto d = static_cast<std::size_t>(model.config().d_model);
  g.keys.assign(static_cast<std::size_t>(model.config().n_layers), Matrix(length, d));
  g.values.assign(static_cast<std::size_t>(model.config().n_layers), Matrix(length, d));
  return g;
}

Matrix embed_image(const Model& model, const Image& image) {
  const auto& c = model.config();
  if (image.width != c.image_side || image.height != c.image_side)
    throw ShapeError("embed_image: expected " + std::to_string(c.image_side) + "x" + std::to_string(c.image_side) +
                     " image, got " + std::to_string(image.width) + "x" + std::to_string(image.height));
  const int g = c.grid_side();
  const int ps = c.patch_size;
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto n = static_cast<std::size_t>(c.n_patches());
  const auto pd = static_cast<std::size_t>(c.patch_dim());
  Matrix pixels(n, pd);
  for (int pr = 0; pr < g; ++pr) {
    for (int pc = 0; pc < g; ++pc) {
      auto row = pixels.row(static_cast<std::size_t>(pr * g + pc));
      std::size_t k = 0;
      for (int y = 0; y < ps; ++y) {
        for (int x = 0; x < ps; ++x) {
          const Rgb px = image.at(pc * ps + x, pr * ps + y);
          row[k++] = px.r / 255.0;
          row[k++] = px.g / 255.0;
          row[k++] = px.b / 255.0;
        }
      }
    }
  }
  Matrix out = linear(pixels, view(model, model.layout().patch_w), view(model, model.layout().patch_b), d);
  auto pos = view(model, model.layout().pos_emb);
  for (std::size_t j = 0; j < n; ++j) {
    auto r = out.row(j);
    for (std::size_t k = 0; k < d; ++k) r[k] = static_cast<double>(static_cast<float>(r[k] + pos[j * d + k]));
  }
  return out;
}

std::vector<double> embed_token(const Model& model, int token_id, std::size_t position) {
  const auto& c = model.config();
  if (token_id < 0 || static_cast<std::size_t>(token_id) >= c.vocab.size())
    throw IndexError("embed_token: id " + std::to_string(token_id) + " out of range");
  if (position >= static_cast<std::size_t>(c.max_seq)) throw CapacityError("embed_token: position beyond max_seq");
  const auto d = static_cast<std::size_t>(c.d_model);
  auto tok = view(model, model.layout().tok_emb).subspan(static_cast<std::size_t>(token_id) * d, d);
  auto pos = view(model, model.layout().pos_emb).subspan(position * d, d);
  std::vector<double> out(d);
  for (std::size_t k = 0; k < d; ++k) out[k] = tok[k] + pos[k];
  return out;
}

Matrix forward_segment(const Model& model, const Matrix& inputs, KvCache& cache, SegmentTrace* trace,
                       std::vector<Matrix>* layer_outputs) {
  const auto& c = model.config();
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.mlp_width());
  const auto heads = static_cast<std::size_t>(c.n_heads);
  const auto dh = static_cast<std::size_t>(c.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t P = cache.length();
  const std::size_t n = inputs.rows();
  if (inputs.cols() != d) throw ShapeError("forward: input width differs from d_model");
  if (P + n > static_cast<std::size_t>(c.max_seq))
    throw CapacityError("forward: sequence length " + std::to_string(P + n) + " exceeds max_seq " +
                        std::to_string(c.max_seq));
  if (cache.keys.size() != static_cast<std::size_t>(c.n_layers)) cache = empty_cache(model);

  if (trace) {
    trace->prefix_len = P;
    trace->layers.assign(static_cast<std::size_t>(c.n_layers), {});
  }
  Matrix x = inputs;
  std::vector<double> scores;
  for (std::size_t l = 0; l < static_cast<std::size_t>(c.n_layers); ++l) {
    const LayerSlots& s = model.layout().layers[l];
    LayerTrace local;
    LayerTrace& t = trace ? trace->layers[l] : local;
    layer_norm_rows(x, view(model, s.ln1_g), view(model, s.ln1_b), t.ln1_out, t.ln1_mean, t.ln1_rstd);
    t.q = linear(t.ln1_out, view(model, s.wq), view(model, s.bq), d);
    append_rows(cache.keys[l], linear(t.ln1_out, view(model, s.wk), view(model, s.bk), d));
    append_rows(cache.values[l], linear(t.ln1_out, view(model, s.wv), view(model, s.bv), d));
    const Matrix& K = cache.keys[l];
    const Matrix& V = cache.values[l];

    t.attn = Matrix(n, d);
    if (trace) t.probs.assign(heads, Matrix(n, P + n));
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t span = P + i + 1;
        scores.resize(span);
        const double* qi = t.q.ptr(i, off);
        for (std::size_t j = 0; j < span; ++j) {
          const double* kj = K.ptr(j, off);
          double acc = 0.0;
          for (std::size_t e = 0; e < dh; ++e) acc += qi[e] * kj[e];
          scores[j] = acc * scale;
        }
        numerics::softmax_inplace(scores);
        double* out = t.attn.ptr(i, off);
        for (std::size_t j = 0; j < span; ++j) {
          const double p = scores[j];
          const double* vj = V.ptr(j, off);
          for (std::size_t e = 0; e < dh; ++e) out[e] += p * vj[e];
        }
        if (trace) std::copy(scores.begin(), scores.end(), t.probs[h].row(i).begin());
      }
    }
    t.x_mid = linear(t.attn, view(model, s.wo), view(model, s.bo), d);
    for (std::size_t k = 0; k < x.size(); ++k) t.x_mid.values()[k] += x.values()[k];

    layer_norm_rows(t.x_mid, view(model, s.ln2_g), view(model, s.ln2_b), t.ln2_out, t.ln2_mean, t.ln2_rstd);
    t.h_pre = linear(t.ln2_out, view(model, s.w1), view(model, s.b1), ff);
    t.h_act = Matrix(n, ff);
    for (std::size_t k = 0; k < t.h_pre.size(); ++k) t.h_act.values()[k] = numerics::gelu(t.h_pre.values()[k]);
    Matrix y = linear(t.h_act, view(model, s.w2), view(model, s.b2), d);
    for (std::size_t k = 0; k < y.size(); ++k) y.values()[k] += t.x_mid.values()[k];

    if (trace) t.x_in = std::move(x);
    x = std::move(y);
    if (layer_outputs) layer_outputs->push_back(x);
  }
  if (trace) trace->output = x;
  return x;
}

std::vector<double> logits_at(const Model& model, std::span<const double> hidden) {
  const auto d = static_cast<std::size_t>(model.config().d_model);
  const std::size_t v = model.vocab().size();
  std::vector<double> z(v);
  gemm_bt(hidden, view(model, model.layout().head_w), z, 1, d, v, false);
  auto b = view(model, model.layout().head_b);
  for (std::size_t i = 0; i < v; ++i) z[i] += b[i];
  return z;
}

HiddenStateStack forward(const Model& model, const Matrix& inputs) {
  if (inputs.rows() == 0) throw ShapeError("forward: empty input sequence");
  HiddenStateStack stack;
  stack.inputs = inputs;
  KvCache cache = empty_cache(model);
  Matrix out = forward_segment(model, inputs, cache, nullptr, &stack.layers);
  stack.logits = logits_at(model, out.row(out.rows() - 1));
  return stack;
}

Matrix backward_segment(const Model& model, const SegmentTrace& trace, const KvCache& cache, const Matrix& d_output,
                        const KvGrads* extra, KvGrads* prefix_grads, std::span<double> param_grads,
                        const std::vector<Matrix>* d_layers) {
  const auto& c = model.config();
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.mlp_width());
  const auto heads = static_cast<std::size_t>(c.n_heads);
  const auto dh = static_cast<std::size_t>(c.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t P = trace.prefix_len;
  const std::size_t n = d_output.rows();
  const bool want_params = !param_grads.empty();

  Matrix dx = d_output;
  std::vector<double> dp;
  for (std::size_t li = static_cast<std::size_t>(c.n_layers); li-- > 0;) {
    const LayerSlots& s = model.layout().layers[li];
    const LayerTrace& t = trace.layers[li];
    const Matrix& K = cache.keys[li];
    const Matrix& V = cache.values[li];
    if (d_layers && li < d_layers->size() && !(*d_layers)[li].empty()) {
      auto src = (*d_layers)[li].values();
      auto dst = dx.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }

    // MLP block: x_out = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2
    Matrix d_hact(n, ff);
    gemm_bt(dx.values(), view(model, s.w2), d_hact.values(), n, d, ff, false);
    if (want_params) {
      gemm_at_acc(t.h_act.values(), dx.values(), gview(param_grads, s.w2), n, ff, d);
      sum_rows_into(dx, gview(param_grads, s.b2));
    }
    for (std::size_t k = 0; k < d_hact.size(); ++k) d_hact.values()[k] *= numerics::gelu_grad(t.h_pre.values()[k]);
    Matrix d_ln2(n, d);
    gemm_bt(d_hact.values(), view(model, s.w1), d_ln2.values(), n, ff, d, false);
    if (want_params) {
      gemm_at_acc(t.ln2_out.values(), d_hact.values(), gview(param_grads, s.w1), n, d, ff);
      sum_rows_into(d_hact, gview(param_grads, s.b1));
    }
    Matrix d_mid = dx;
    {
      std::vector<double> scratch_g(d), scratch_b(d), tmp(d);
      auto dg = want_params ? gview(param_grads, s.ln2_g) : std::span<double>(scratch_g);
      auto db = want_params ? gview(param_grads, s.ln2_b) : std::span<double>(scratch_b);
      for (std::size_t i = 0; i < n; ++i) {
        numerics::layer_norm_backward(t.x_mid.row(i), t.ln2_mean[i], t.ln2_rstd[i], view(model, s.ln2_g),
                                      d_ln2.row(i), tmp, dg, db);
        auto r = d_mid.row(i);
        for (std::size_t k = 0; k < d; ++k) r[k] += tmp[k];
      }
    }

    // Attention block: x_mid = x_in + attn Wo + bo
    Matrix d_attn(n, d);
    gemm_bt(d_mid.values(), view(model, s.wo), d_attn.values(), n, d, d, false);
    if (want_params) {
      gemm_at_acc(t.attn.values(), d_mid.values(), gview(param_grads, s.wo), n, d, d);
      sum_rows_into(d_mid, gview(param_grads, s.bo));
    }
    Matrix dq(n, d), dk(n, d), dv(n, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      const Matrix& probs = t.probs[h];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t span = P + i + 1;
        const double* da = d_attn.ptr(i, off);
        const double* p = probs.ptr(i, 0);
        dp.resize(span);
        double weighted = 0.0;
        for (std::size_t j = 0; j < span; ++j) {
          const double* vj = V.ptr(j, off);
          double acc = 0.0;
          for (std::size_t e = 0; e < dh; ++e) acc += da[e] * vj[e];
          dp[j] = acc;
          weighted += p[j] * acc;
        }
        const double* qi = t.q.ptr(i, off);
        double* dqi = dq.ptr(i, off);
        for (std::size_t j = 0; j < span; ++j) {
          const double ds = p[j] * (dp[j] - weighted) * scale;
          const double* kj = K.ptr(j, off);
          for (std::size_t e = 0; e < dh; ++e) dqi[e] += ds * kj[e];
          double* dkj;
          double* dvj;
          if (j < P) {
            if (!prefix_grads) continue;
            dkj = prefix_grads->keys[li].ptr(j, off);
            dvj = prefix_grads->values[li].ptr(j, off);
          } else {
            dkj = dk.ptr(j - P, off);
            dvj = dv.ptr(j - P, off);
          }
          for (std::size_t e = 0; e < dh; ++e) {
            dkj[e] += ds * qi[e];
            dvj[e] += p[j] * da[e];
          }
        }
      }
    }
    if (extra) {
      for (std::size_t k = 0; k < dk.size(); ++k) {
        dk.values()[k] += extra->keys[li].values()[k];
        dv.values()[k] += extra->values[li].values()[k];
      }
    }
    Matrix d_ln1(n, d);
    gemm_bt(dq.values(), view(model, s.wq), d_ln1.values(), n, d, d, true);
    gemm_bt(dk.values(), view(model, s.wk), d_ln1.values(), n, d, d, true);
    gemm_bt(dv.values(), view(model, s.wv), d_ln1.values(), n, d, d, true);
    if (want_params) {
      gemm_at_acc(t.ln1_out.values(), dq.values(), gview(param_grads, s.wq), n, d, d);
      gemm_at_acc(t.ln1_out.values(), dk.values(), gview(param_grads, s.wk), n, d, d);
      gemm_at_acc(t.ln1_out.values(), dv.values(), gview(param_grads, s.wv), n, d, d);
      sum_rows_into(dq, gview(param_grads, s.bq));
      sum_rows_into(dk, gview(param_grads, s.bk));
      sum_rows_into(dv, gview(param_grads, s.bv));
    }
    Matrix d_in = std::move(d_mid);
    {
      std::vector<double> scratch_g(d), scratch_b(d), tmp(d);
      auto dg = want_params ? gview(param_grads, s.ln1_g) : std::span<double>(scratch_g);
      auto db = want_params ? gview(param_grads, s.ln1_b) : std::span<double>(scratch_b);
      for (std::size_t i = 0; i < n; ++i) {
        numerics::layer_norm_backward(t.x_in.row(i), t.ln1_mean[i], t.ln1_rstd[i], view(model, s.ln1_g),
                                      d_ln1.row(i), tmp, dg, db);
        auto r = d_in.row(i);
        for (std::size_t k = 0; k < d; ++k) r[k] += tmp[k];
      }
    }
    dx = std::move(d_in);
  }
  return dx;
}

GradientReport grad_scalar_logit(const Model& model, const Matrix& inputs, int target_id) {
  const std::size_t v = model.vocab().size();
  if (target_id < 0 || static_cast<std::size_t>(target_id) >= v)
    throw IndexError("grad_scalar_logit: target id " + std::to_string(target_id) + " >= vocab size " +
                     std::to_string(v));
  if (inputs.rows() == 0) throw ShapeError("grad_scalar_logit: empty input sequence");
  const auto d = static_cast<std::size_t>(model.config().d_model);
  KvCache cache = empty_cache(model);
  SegmentTrace trace;
  Matrix out = forward_segment(model, inputs, cache, &trace);
  const std::size_t last = inputs.rows() - 1;
  GradientReport report;
  report.target_id = target_id;
  report.target_logit = logits_at(model, out.row(last))[static_cast<std::size_t>(target_id)];
  Matrix d_out(inputs.rows(), d);
  auto head_row = view(model, model.layout().head_w).subspan(static_cast<std::size_t>(target_id) * d, d);
  std::copy(head_row.begin(), head_row.end(), d_out.row(last).begin());
  report.grads = backward_segment(model, trace, cache, d_out, nullptr, nullptr, {});
  return report;
}

std::pair<int, RngStream> sample_next_token(std::span<const double> logits, double temperature, RngStream rng) {
  if (logits.empty()) throw ShapeError("sample_next_token: empty logits");
  if (!numerics::all_finite(logits)) throw NumericError("sample_next_token: non-finite logits");
  if (temperature < 0.0 || !std::isfinite(temperature)) throw ConfigError("sample_next_token: temperature must be >= 0");
  if (temperature == 0.0) {
    // max_element returns the first maximum, i.e. the lowest id.
    return {static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()), rng};
  }
  const std::vector<double> probs = numerics::stable_softmax(logits, temperature);
  const double u = rng.next_uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return {static_cast<int>(i), rng};
  }
  // Rounding left the cumulative sum just below 1; take the last nonzero entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return {static_cast<int>(i), rng};
  return {0, rng};
}

namespace {

// Log-probabilities at `targets` (positions relative to `base`) and the
// resulting hidden-state gradients; head parameter gradients are accumulated.
void head_backward(const Model& model, const Matrix& hidden, std::size_t base, std::span<const TokenTarget> targets,
                   std::size_t c, std::size_t t0, const LogProbGrad& grad, std::vector<double>& logps,
                   Matrix& d_hidden, std::span<double> param_grads) {
  const auto d = static_cast<std::size_t>(model.config().d_model);
  const std::size_t v = model.vocab().size();
  auto head_w = view(model, model.layout().head_w);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const std::size_t row = targets[t].position - base;
    auto h = hidden.row(row);
    std::vector<double> z = logits_at(model, h);
    const double lse = numerics::log_sum_exp(z);
    const auto tok = static_cast<std::size_t>(targets[t].token);
    const double logp = z[tok] - lse;
    logps.push_back(logp);
    const double g = grad(c, t0 + t, logp);
    if (g == 0.0) continue;
    // dL/dz = g * (onehot - softmax)
    std::vector<double> dz(v);
    for (std::size_t i = 0; i < v; ++i) dz[i] = -g * std::exp(z[i] - lse);
    dz[tok] += g;
    auto dh = d_hidden.row(row);
    gemm(dz, head_w, dh, 1, v, d, true);
    if (!param_grads.empty()) {
      gemm_at_acc(dz, h, gview(param_grads, model.layout().head_w), 1, v, d);
      auto hb = gview(param_grads, model.layout().head_b);
      for (std::size_t i = 0; i < v; ++i) hb[i] += dz[i];
    }
  }
}

}  // namespace

LogProbResult logprob_backward(const Model& model, const Matrix& prefix,
                               const std::vector<std::vector<TokenTarget>>& prefix_targets,
                               const std::vector<Continuation>& continuations, const LogProbGrad& grad,
                               std::span<double> param_grads) {
  const auto d = static_cast<std::size_t>(model.config().d_model);
  const std::size_t P = prefix.rows();
  const std::size_t nc = continuations.size();
  if (prefix_targets.size() != nc) throw ShapeError("logprob_backward: one prefix target list per continuation");

  KvCache prefix_cache = empty_cache(model);
  SegmentTrace prefix_trace;
  Matrix prefix_out = forward_segment(model, prefix, prefix_cache, &prefix_trace);

  LogProbResult result;
  result.logps.resize(nc);
  result.d_continuations.resize(nc);
  Matrix d_prefix_out(P, d);
  KvGrads prefix_kv = zero_kv_grads(model, P);

  for (std::size_t c = 0; c < nc; ++c) {
    for (const auto& t : prefix_targets[c])
      if (t.position >= P) throw ShapeError("logprob_backward: prefix target outside the prefix");
    head_backward(model, prefix_out, 0, prefix_targets[c], c, 0, grad, result.logps[c], d_prefix_out, param_grads);

    const Continuation& cont = continuations[c];
    if (cont.inputs.rows() == 0) continue;
    KvCache cache = prefix_cache;
    SegmentTrace trace;
    Matrix out = forward_segment(model, cont.inputs, cache, &trace);
    Matrix d_out(cont.inputs.rows(), d);
    for (const auto& t : cont.targets)
      if (t.position < P || t.position >= P + cont.inputs.rows())
        throw ShapeError("logprob_backward: continuation target outside its segment");
    head_backward(model, out, P, cont.targets, c, prefix_targets[c].size(), grad, result.logps[c], d_out,
                  param_grads);
    result.d_continuations[c] = backward_segment(model, trace, cache, d_out, nullptr, &prefix_kv, param_grads);
  }
  result.d_prefix = backward_segment(model, prefix_trace, prefix_cache, d_prefix_out, &prefix_kv, nullptr, param_grads);
  return result;
}

void embedding_backward(const Model& model, std::span<const RowSource> sources, const Matrix& d_inputs,
                        const Image* image, std::span<double> param_grads) {
  if (sources.size() != d_inputs.rows()) throw ShapeError("embedding_backward: one source per input row");
  const auto& c = model.config();
  const auto& L = model.layout();
  const auto d = static_cast<std::size_t>(c.d_model);
  auto tok = gview(param_grads, L.tok_emb);
  auto pos = gview(param_grads, L.pos_emb);
  auto pw = gview(param_grads, L.patch_w);
  auto pb = gview(param_grads, L.patch_b);
  const int g = c.grid_side();
  const int ps = c.patch_size;
  std::vector<double> pixels(static_cast<std::size_t>(c.patch_dim()));
  for (std::size_t r = 0; r < sources.size(); ++r) {
    const RowSource& src = sources[r];
    if (src.kind == RowSource::Kind::kFixed) continue;
    auto dr = d_inputs.row(r);
    numerics::axpy(1.0, dr, pos.subspan(src.position * d, d));
    if (src.kind == RowSource::Kind::kToken) {
      numerics::axpy(1.0, dr, tok.subspan(static_cast<std::size_t>(src.index) * d, d));
    } else {
      if (!image) throw ShapeError("embedding_backward: patch rows need the source image");
      // Rounding to float32 in embed_image is treated as identity here.
      const int pr = src.index / g;
      const int pc = src.index % g;
      std::size_t k = 0;
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x) {
          const Rgb px = image->at(pc * ps + x, pr * ps + y);
          pixels[k++] = px.r / 255.0;
          pixels[k++] = px.g / 255.0;
          pixels[k++] = px.b / 255.0;
        }
      gemm_at_acc(pixels, dr, pw, 1, pixels.size(), d);
      numerics::axpy(1.0, dr, pb);
    }
  }
}

}  // namespace sieve::vlm
