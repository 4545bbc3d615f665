#pragma once

// The two forecasters.
//
// SERT: triplet embeddings -> masked multi-head self-attention encoder
// blocks (pre-norm residual) -> padded rows zeroed -> flatten ->
// one-hidden-layer ReLU head -> K outputs. In separate-embedding location
// mode the location embedding is concatenated to the flattened encoder
// output before the head.
//
// SST-ANN: triplet embeddings -> direct affine map over the flattened
// (padded) embedding matrix. Because the map is affine with
// position-specific weights, every prediction decomposes exactly into
// per-triplet contribution scores plus the bias, which is what the
// interpretability report consumes.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sert/data.hpp"
#include "sert/encoding.hpp"
#include "sert/errors.hpp"
#include "sert/param_store.hpp"
#include "sert/tensor.hpp"

namespace sert {

enum class ModelKind { kSert, kSstAnn };

inline const char* model_kind_name(ModelKind k) {
  return k == ModelKind::kSert ? "sert" : "sstann";
}

inline ModelKind model_kind_from_name(const std::string& s) {
  if (s == "sert") return ModelKind::kSert;
  if (s == "sstann" || s == "sst-ann") return ModelKind::kSstAnn;
  throw UsageError("unknown model kind: " + s + " (expected sert|sstann)");
}

struct ModelConfig {
  std::size_t embed_dim = 60;
  std::size_t n_heads = 6;
  std::size_t n_blocks = 6;      // encoder depth (SERT only)
  std::size_t max_triplets = 0;  // fixed window capacity; padding beyond
  std::size_t n_targets = 0;
  std::int64_t lookback = 10;  // hours of input
  std::int64_t horizon = 1;    // hours ahead of the window end
  LocationMode location_mode = LocationMode::kNameConcat;
  double dropout = 0.1;

  void validate() const {
    if (embed_dim == 0 || n_heads == 0)
      throw UsageError("embed_dim and n_heads must be positive");
    if (embed_dim % n_heads != 0)
      throw UsageError("embed_dim (" + std::to_string(embed_dim) +
                       ") must be divisible by n_heads (" +
                       std::to_string(n_heads) + ")");
    if (n_blocks == 0) throw UsageError("n_blocks must be positive");
    if (max_triplets == 0) throw UsageError("max_triplets must be positive");
    if (n_targets == 0) throw UsageError("n_targets must be positive");
    if (lookback <= 0 || horizon <= 0)
      throw UsageError("lookback and horizon must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
      throw UsageError("dropout must lie in [0, 1)");
  }

  std::size_t head_dim() const { return embed_dim / n_heads; }
  std::size_t ffn_dim() const { return 4 * embed_dim; }
  bool separate_location() const {
    return location_mode == LocationMode::kSeparateEmbedding;
  }
  // Width of the flattened head input.
  std::size_t flat_width() const {
    return max_triplets * embed_dim + (separate_location() ? embed_dim : 0);
  }
  WindowingOptions windowing() const {
    return {lookback, horizon, location_mode, max_triplets};
  }
};

struct AttentionBlockParams {
  std::vector<Tensor> query_w, key_w, value_w;  // per head, [d, d/h]
  Tensor attn_out_w;                            // [d, d]
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1;  // [d, 4d], [4d]
  Tensor ffn_w2, ffn_b2;  // [4d, d], [d]
};

struct ModelParams {
  EncodingParams encoding;
  std::vector<AttentionBlockParams> blocks;  // SERT
  Tensor head_hidden_w, head_hidden_b;       // SERT head, [F, d], [d]
  Tensor head_out_w, head_out_b;             // SERT head, [d, K], [K]
  Tensor out_w, out_b;                       // SST-ANN, [F, K], [K]
};

// One window ready for a forward pass. Rows of `embeddings` beyond the real
// triplets are zero and masked out; real triplets occupy the first rows in
// canonical (time, variable) order.
struct PaddedWindow {
  Tensor embeddings;               // [max_triplets, d]
  std::vector<std::uint8_t> mask;  // 1 = real triplet
  Tensor location_embedding;       // [d]; defined in separate-embedding mode
};

// Training-only knobs threaded through forwards; null RNG = inference.
struct ForwardContext {
  Rng* dropout_rng = nullptr;
};

// --- parameter registration -------------------------------------------------

inline ModelParams register_model_params(ParameterStore& store,
                                         ModelKind kind,
                                         const ModelConfig& cfg,
                                         std::size_t vocab_size,
                                         std::size_t n_locations, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  ModelParams p;
  p.encoding = register_encoding_params(
      store, d, vocab_size, cfg.separate_location() ? n_locations : 0, rng);
  if (kind == ModelKind::kSert) {
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      const std::string pre = "enc" + std::to_string(b);
      AttentionBlockParams bp;
      bp.ln1_gain = store.add(pre + ".ln1.gain", Tensor::full({d}, 1.0, true));
      bp.ln1_bias = store.add(pre + ".ln1.bias", Tensor::zeros({d}, true));
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::string hp = pre + ".head" + std::to_string(h);
        bp.query_w.push_back(store.add(
            hp + ".query_w", init_uniform_fanin(rng, {d, cfg.head_dim()}, d)));
        bp.key_w.push_back(store.add(
            hp + ".key_w", init_uniform_fanin(rng, {d, cfg.head_dim()}, d)));
        bp.value_w.push_back(store.add(
            hp + ".value_w", init_uniform_fanin(rng, {d, cfg.head_dim()}, d)));
      }
      bp.attn_out_w =
          store.add(pre + ".attn.out_w", init_uniform_fanin(rng, {d, d}, d));
      bp.ln2_gain = store.add(pre + ".ln2.gain", Tensor::full({d}, 1.0, true));
      bp.ln2_bias = store.add(pre + ".ln2.bias", Tensor::zeros({d}, true));
      bp.ffn_w1 = store.add(pre + ".ffn.w1",
                            init_uniform_fanin(rng, {d, cfg.ffn_dim()}, d));
      bp.ffn_b1 = store.add(pre + ".ffn.b1",
                            init_uniform_fanin(rng, {cfg.ffn_dim()}, d));
      bp.ffn_w2 = store.add(
          pre + ".ffn.w2",
          init_uniform_fanin(rng, {cfg.ffn_dim(), d}, cfg.ffn_dim()));
      bp.ffn_b2 = store.add(pre + ".ffn.b2",
                            init_uniform_fanin(rng, {d}, cfg.ffn_dim()));
      p.blocks.push_back(std::move(bp));
    }
    const std::size_t f = cfg.flat_width();
    p.head_hidden_w =
        store.add("head.hidden_w", init_uniform_fanin(rng, {f, d}, f));
    p.head_hidden_b =
        store.add("head.hidden_b", init_uniform_fanin(rng, {d}, f));
    p.head_out_w = store.add("head.out_w",
                             init_uniform_fanin(rng, {d, cfg.n_targets}, d));
    p.head_out_b =
        store.add("head.out_b", init_uniform_fanin(rng, {cfg.n_targets}, d));
  } else {
    const std::size_t f = cfg.flat_width();
    p.out_w =
        store.add("out.w", init_uniform_fanin(rng, {f, cfg.n_targets}, f));
    p.out_b = store.add("out.b", init_uniform_fanin(rng, {cfg.n_targets}, f));
  }
  return p;
}

// Rebinds parameter handles by name (after loading a checkpoint).
inline ModelParams model_params_from(const ParameterStore& store,
                                     ModelKind kind, const ModelConfig& cfg) {
  ModelParams p;
  p.encoding = encoding_params_from(store);
  if (kind == ModelKind::kSert) {
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      const std::string pre = "enc" + std::to_string(b);
      AttentionBlockParams bp;
      bp.ln1_gain = store.at(pre + ".ln1.gain");
      bp.ln1_bias = store.at(pre + ".ln1.bias");
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::string hp = pre + ".head" + std::to_string(h);
        bp.query_w.push_back(store.at(hp + ".query_w"));
        bp.key_w.push_back(store.at(hp + ".key_w"));
        bp.value_w.push_back(store.at(hp + ".value_w"));
      }
      bp.attn_out_w = store.at(pre + ".attn.out_w");
      bp.ln2_gain = store.at(pre + ".ln2.gain");
      bp.ln2_bias = store.at(pre + ".ln2.bias");
      bp.ffn_w1 = store.at(pre + ".ffn.w1");
      bp.ffn_b1 = store.at(pre + ".ffn.b1");
      bp.ffn_w2 = store.at(pre + ".ffn.w2");
      bp.ffn_b2 = store.at(pre + ".ffn.b2");
      p.blocks.push_back(std::move(bp));
    }
    p.head_hidden_w = store.at("head.hidden_w");
    p.head_hidden_b = store.at("head.hidden_b");
    p.head_out_w = store.at("head.out_w");
    p.head_out_b = store.at("head.out_b");
  } else {
    p.out_w = store.at("out.w");
    p.out_b = store.at("out.b");
  }
  return p;
}

// --- window embedding --------------------------------------------------------

// Embeds a sample window into [max_triplets, d]. All triplets go through the
// lookup table and the two CVEs in one batched pass; padded rows are zeroed
// by construction (their gradients vanish with them).
inline PaddedWindow embed_window(const SampleWindow& window,
                                 const ModelParams& params,
                                 const NormStats& stats,
                                 const ModelConfig& cfg) {
  const std::size_t n = window.triplets.size();
  if (n == 0) throw DataError("cannot embed an empty window");
  if (n > cfg.max_triplets)
    throw DataError("window holds " + std::to_string(n) +
                    " triplets, config allows " +
                    std::to_string(cfg.max_triplets));

  std::vector<std::uint32_t> ids(cfg.max_triplets, 0);
  std::vector<double> t_norm(cfg.max_triplets, 0.0);
  std::vector<double> v_norm(cfg.max_triplets, 0.0);
  std::vector<double> row_mask(cfg.max_triplets, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Triplet& tr = window.triplets[i];
    ids[i] = tr.variable;
    auto [tn, vn] = normalize_inputs(tr.time_offset, tr.value, tr.variable,
                                     stats,
                                     static_cast<double>(cfg.lookback));
    t_norm[i] = tn;
    v_norm[i] = vn;
    row_mask[i] = 1.0;
  }

  Tensor e = add(embedding_rows(params.encoding.variable_table, ids),
                 add(cve_batch(t_norm, params.encoding.time_cve),
                     cve_batch(v_norm, params.encoding.value_cve)));

  PaddedWindow pw;
  pw.embeddings = scale_rows(e, row_mask);
  pw.mask.assign(cfg.max_triplets, 0);
  for (std::size_t i = 0; i < n; ++i) pw.mask[i] = 1;
  if (cfg.separate_location()) {
    if (!params.encoding.location_table.defined())
      throw DataError("model has no location table but config wants one");
    pw.location_embedding =
        embed_location(params.encoding.location_table, window.location);
  }
  return pw;
}

// --- attention ---------------------------------------------------------------

namespace detail {
inline std::vector<double> mask_as_weights(
    const std::vector<std::uint8_t>& mask) {
  std::vector<double> w(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? 1.0 : 0.0;
  return w;
}

// Additive key bias: 0 for real keys, a large negative constant for padded
// keys; after softmax, padded keys carry exactly zero attention weight.
inline Tensor key_bias(const std::vector<std::uint8_t>& mask) {
  std::vector<double> b(mask.size());
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    b[i] = mask[i] ? 0.0 : -1e30;
    any = any || mask[i];
  }
  if (!any)
    throw DataError("attention over an all-padded window is undefined");
  return Tensor::from({mask.size()}, std::move(b));
}
}  // namespace detail

struct AttentionBlockResult {
  Tensor output;                  // [N, d]
  std::vector<Tensor> attention;  // per head, [N, N]
};

// Pre-norm residual block: x + MHSA(LN(x)), then x + FFN(LN(x)).
inline AttentionBlockResult attention_block_detailed(
    const Tensor& x, const std::vector<std::uint8_t>& mask,
    const AttentionBlockParams& bp, const ModelConfig& cfg,
    const ForwardContext& ctx = {}) {
  const std::size_t n = x.shape().at(0);
  if (x.rank() != 2 || x.shape()[1] != cfg.embed_dim || mask.size() != n)
    throw DataError("attention_block: input shape mismatch");
  const Tensor bias = detail::key_bias(mask);
  const double inv_sqrt_dh =
      1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

  AttentionBlockResult res;
  Tensor normed = layernorm_lastdim(x, bp.ln1_gain, bp.ln1_bias);
  std::vector<Tensor> contexts;
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    Tensor q = matmul(normed, bp.query_w[h]);
    Tensor k = matmul(normed, bp.key_w[h]);
    Tensor v = matmul(normed, bp.value_w[h]);
    Tensor scores = scale(matmul(q, transpose_last2(k)), inv_sqrt_dh);
    Tensor weights = softmax_lastdim(add(scores, bias));
    res.attention.push_back(weights);
    contexts.push_back(matmul(weights, v));
  }
  Tensor attn = matmul(concat_lastdim(std::span<const Tensor>(contexts)),
                       bp.attn_out_w);
  if (ctx.dropout_rng && cfg.dropout > 0.0)
    attn = dropout(attn, cfg.dropout, *ctx.dropout_rng);
  Tensor mid = add(x, attn);

  Tensor f = layernorm_lastdim(mid, bp.ln2_gain, bp.ln2_bias);
  f = add(matmul(relu(add(matmul(f, bp.ffn_w1), bp.ffn_b1)), bp.ffn_w2),
          bp.ffn_b2);
  if (ctx.dropout_rng && cfg.dropout > 0.0)
    f = dropout(f, cfg.dropout, *ctx.dropout_rng);
  res.output = add(mid, f);
  return res;
}

inline Tensor attention_block(const Tensor& x,
                              const std::vector<std::uint8_t>& mask,
                              const AttentionBlockParams& bp,
                              const ModelConfig& cfg,
                              const ForwardContext& ctx = {}) {
  return attention_block_detailed(x, mask, bp, cfg, ctx).output;
}

// --- forward passes ----------------------------------------------------------

namespace detail {
inline void check_window(const PaddedWindow& pw, const ModelConfig& cfg) {
  if (pw.embeddings.rank() != 2 ||
      pw.embeddings.shape()[0] != cfg.max_triplets ||
      pw.embeddings.shape()[1] != cfg.embed_dim ||
      pw.mask.size() != cfg.max_triplets)
    throw DataError("window shape does not match model config");
  if (cfg.separate_location()) {
    if (!pw.location_embedding.defined() ||
        pw.location_embedding.size() != cfg.embed_dim)
      throw DataError("window lacks a location embedding");
  }
}

inline Tensor flat_head_input(const Tensor& contextual,
                              const PaddedWindow& pw, const ModelConfig& cfg) {
  Tensor flat = flatten(contextual);
  if (cfg.separate_location())
    flat = concat_lastdim({flat, pw.location_embedding});
  return reshape(flat, {1, cfg.flat_width()});
}
}  // namespace detail

// Predictions for one window, length K. Deterministic when ctx carries no
// dropout RNG.
inline Tensor sert_forward(const PaddedWindow& pw, const ModelParams& params,
                           const ModelConfig& cfg,
                           const ForwardContext& ctx = {}) {
  detail::check_window(pw, cfg);
  if (params.blocks.size() != cfg.n_blocks)
    throw DataError("parameter/block count mismatch");
  const auto row_weights = detail::mask_as_weights(pw.mask);
  Tensor x = scale_rows(pw.embeddings, row_weights);
  for (const auto& bp : params.blocks)
    x = attention_block(x, pw.mask, bp, cfg, ctx);
  x = scale_rows(x, row_weights);  // padded rows never reach the head
  Tensor flat = detail::flat_head_input(x, pw, cfg);
  Tensor hidden =
      relu(add(matmul(flat, params.head_hidden_w), params.head_hidden_b));
  Tensor out = add(matmul(hidden, params.head_out_w), params.head_out_b);
  return reshape(out, {cfg.n_targets});
}

inline Tensor sstann_forward(const PaddedWindow& pw, const ModelParams& params,
                             const ModelConfig& cfg,
                             const ForwardContext& = {}) {
  detail::check_window(pw, cfg);
  Tensor x = scale_rows(pw.embeddings, detail::mask_as_weights(pw.mask));
  Tensor flat = detail::flat_head_input(x, pw, cfg);
  Tensor out = add(matmul(flat, params.out_w), params.out_b);
  return reshape(out, {cfg.n_targets});
}

// Exact additive decomposition of an SST-ANN prediction:
//   prediction[k] = sum_i contribution[i][k] + location_contribution[k]
//                   + bias[k]
// with contribution[i][k] = dot(out_w rows of position i, e_i). Padded
// positions contribute exactly zero.
struct SstAnnDecomposition {
  std::vector<double> predictions;            // K
  std::vector<double> contributions;          // max_triplets x K, row-major
  std::vector<double> location_contribution;  // K (zero unless mode B)
  std::vector<double> bias;                   // K
};

inline SstAnnDecomposition sstann_decompose(const PaddedWindow& pw,
                                            const ModelParams& params,
                                            const ModelConfig& cfg) {
  detail::check_window(pw, cfg);
  const std::size_t n_max = cfg.max_triplets;
  const std::size_t d = cfg.embed_dim;
  const std::size_t kk = cfg.n_targets;
  const auto& e = pw.embeddings.data();
  const auto& w = params.out_w.data();

  SstAnnDecomposition dec;
  dec.contributions.assign(n_max * kk, 0.0);
  dec.location_contribution.assign(kk, 0.0);
  dec.bias = params.out_b.data();
  dec.predictions = dec.bias;
  for (std::size_t i = 0; i < n_max; ++i) {
    if (!pw.mask[i]) continue;
    for (std::size_t k = 0; k < kk; ++k) {
      double c = 0.0;
      for (std::size_t m = 0; m < d; ++m)
        c += e[i * d + m] * w[(i * d + m) * kk + k];
      dec.contributions[i * kk + k] = c;
      dec.predictions[k] += c;
    }
  }
  if (cfg.separate_location()) {
    const auto& loc = pw.location_embedding.data();
    for (std::size_t k = 0; k < kk; ++k) {
      double c = 0.0;
      for (std::size_t m = 0; m < d; ++m)
        c += loc[m] * w[(n_max * d + m) * kk + k];
      dec.location_contribution[k] = c;
      dec.predictions[k] += c;
    }
  }
  return dec;
}

inline Tensor model_forward(ModelKind kind, const PaddedWindow& pw,
                            const ModelParams& params, const ModelConfig& cfg,
                            const ForwardContext& ctx = {}) {
  return kind == ModelKind::kSert ? sert_forward(pw, params, cfg, ctx)
                                  : sstann_forward(pw, params, cfg, ctx);
}

}  // namespace sert
