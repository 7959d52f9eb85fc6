#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patcls/adam.hpp"
#include "patcls/autograd.hpp"
#include "patcls/rng.hpp"
#include "patcls/tokenizer.hpp"

namespace patcls {

struct EncoderConfig {
  size_t n_layers = 12;
  size_t hidden = 768;
  size_t n_heads = 12;
  size_t ff_dim = 3072;
  size_t vocab_size = 0;
  size_t max_positions = 512;
  double dropout_rate = 0.1;
  bool mean_pool = false;  // per-layer sentence vector: CLS position (default) or mean over content

  void validate() const {
    if (n_layers < 1 || hidden < 1 || n_heads < 1 || ff_dim < 1)
      throw InvalidConfig("encoder dimensions must be positive");
    if (hidden % n_heads != 0)
      throw InvalidConfig("hidden (" + std::to_string(hidden) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    if (vocab_size <= Vocab::kNumSpecials)
      throw InvalidConfig("vocab_size must exceed the special-token count");
    if (max_positions < 2) throw InvalidConfig("max_positions must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw InvalidConfig("dropout_rate must be in [0,1)");
  }
};

struct EncoderLayerParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter ln1_gain, ln1_bias;
  Parameter ff1_w, ff1_b, ff2_w, ff2_b;
  Parameter ln2_gain, ln2_bias;
};

/// Bidirectional transformer encoder with masked-LM and next-sentence heads.
///
/// Parameter count, with V = vocab_size, P = max_positions, H = hidden,
/// F = ff_dim and n = n_layers:
///
///   embeddings   V*H + P*H + 2*H + 2*H
///   per layer    4*(H^2 + H) + 2*H + H*F + F + F*H + H + 2*H
///   MLM head     H^2 + H + 2*H + H*V + V
///   NSP head     H^2 + H + 2*H + 2
class EncoderModel {
 public:
  EncoderModel(EncoderConfig config, uint64_t seed) : cfg_(config) {
    cfg_.validate();
    Rng rng = Rng(seed).fork(0x656e63);
    const size_t H = cfg_.hidden, F = cfg_.ff_dim, V = cfg_.vocab_size, P = cfg_.max_positions;
    tok_emb = weight(rng, "enc.tok_emb", {V, H});
    pos_emb = weight(rng, "enc.pos_emb", {P, H});
    seg_emb = weight(rng, "enc.seg_emb", {2, H});
    emb_ln_gain = ones("enc.emb_ln.gain", H);
    emb_ln_bias = zeros("enc.emb_ln.bias", {H});
    layers.reserve(cfg_.n_layers);
    for (size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "enc.layer" + std::to_string(l) + ".";
      EncoderLayerParams lp;
      lp.wq = weight(rng, p + "attn.wq", {H, H});
      lp.bq = zeros(p + "attn.bq", {H});
      lp.wk = weight(rng, p + "attn.wk", {H, H});
      lp.bk = zeros(p + "attn.bk", {H});
      lp.wv = weight(rng, p + "attn.wv", {H, H});
      lp.bv = zeros(p + "attn.bv", {H});
      lp.wo = weight(rng, p + "attn.wo", {H, H});
      lp.bo = zeros(p + "attn.bo", {H});
      lp.ln1_gain = ones(p + "ln1.gain", H);
      lp.ln1_bias = zeros(p + "ln1.bias", {H});
      lp.ff1_w = weight(rng, p + "ff1.w", {H, F});
      lp.ff1_b = zeros(p + "ff1.b", {F});
      lp.ff2_w = weight(rng, p + "ff2.w", {F, H});
      lp.ff2_b = zeros(p + "ff2.b", {H});
      lp.ln2_gain = ones(p + "ln2.gain", H);
      lp.ln2_bias = zeros(p + "ln2.bias", {H});
      layers.push_back(std::move(lp));
    }
    mlm_w = weight(rng, "mlm.transform.w", {H, H});
    mlm_b = zeros("mlm.transform.b", {H});
    mlm_ln_gain = ones("mlm.ln.gain", H);
    mlm_ln_bias = zeros("mlm.ln.bias", {H});
    mlm_dec_w = weight(rng, "mlm.decoder.w", {H, V});
    mlm_dec_b = zeros("mlm.decoder.b", {V});
    pool_w = weight(rng, "nsp.pooler.w", {H, H});
    pool_b = zeros("nsp.pooler.b", {H});
    nsp_w = weight(rng, "nsp.cls.w", {H, 2});
    nsp_b = zeros("nsp.cls.b", {2});
  }

  const EncoderConfig& config() const { return cfg_; }

  /// Embeddings and transformer stack; what fine-tuning updates.
  std::vector<Parameter*> core_parameters() {
    std::vector<Parameter*> out = {&tok_emb, &pos_emb, &seg_emb, &emb_ln_gain, &emb_ln_bias};
    for (auto& l : layers)
      for (Parameter* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gain,
                           &l.ln1_bias, &l.ff1_w, &l.ff1_b, &l.ff2_w, &l.ff2_b, &l.ln2_gain, &l.ln2_bias})
        out.push_back(p);
    return out;
  }

  /// Everything, including the pretraining heads; what checkpoints carry.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = core_parameters();
    for (Parameter* p : {&mlm_w, &mlm_b, &mlm_ln_gain, &mlm_ln_bias, &mlm_dec_w, &mlm_dec_b, &pool_w,
                         &pool_b, &nsp_w, &nsp_b})
      out.push_back(p);
    return out;
  }

  size_t parameter_count() {
    size_t n = 0;
    for (Parameter* p : parameters()) n += p->value().numel();
    return n;
  }

  Parameter tok_emb, pos_emb, seg_emb, emb_ln_gain, emb_ln_bias;
  std::vector<EncoderLayerParams> layers;
  Parameter mlm_w, mlm_b, mlm_ln_gain, mlm_ln_bias, mlm_dec_w, mlm_dec_b;
  Parameter pool_w, pool_b, nsp_w, nsp_b;

 private:
  static Parameter weight(Rng& rng, std::string name, Shape shape) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.truncated_normal(0.02);
    return Parameter(std::move(name), std::move(t));
  }
  static Parameter zeros(std::string name, Shape shape) {
    return Parameter(std::move(name), Tensor(std::move(shape)));
  }
  static Parameter ones(std::string name, size_t n) {
    return Parameter(std::move(name), Tensor(Shape{n}, 1.0));
  }

  EncoderConfig cfg_;
};

inline EncoderModel init_encoder(const EncoderConfig& config, uint64_t seed) {
  return EncoderModel(config, seed);
}

/// Tape-level view of one forward pass.
struct EncoderGraph {
  std::vector<Var> layer_states;              // per layer, (L,H)
  std::vector<Var> sentence_vecs;             // per layer, (1,H)
  std::vector<std::vector<Var>> attention;    // [layer][head], (L,L) post-softmax
  Var final_state;
};

namespace detail {

inline Var dropout(Tape& t, Var x, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  const Tensor& v = t.value(x);
  Tensor mask(v.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < mask.numel(); ++i) mask.at(i) = rng->uniform() < rate ? 0.0 : keep_scale;
  return t.mul(x, t.constant(std::move(mask)));
}

}  // namespace detail

/// Builds the forward graph for one sequence. Attention keys at padded
/// positions are masked additively before the softmax, so no non-pad output
/// depends on pad embeddings. Pass a dropout rng only when training.
inline EncoderGraph encoder_forward_graph(Tape& t, EncoderModel& m, const TokenSequence& seq,
                                          Rng* dropout_rng = nullptr) {
  const EncoderConfig& cfg = m.config();
  const size_t L = seq.length();
  if (L > cfg.max_positions)
    throw TokenOutOfRange("sequence length " + std::to_string(L) + " exceeds max_positions " +
                          std::to_string(cfg.max_positions));
  for (int id : seq.ids)
    if (id < 0 || static_cast<size_t>(id) >= cfg.vocab_size)
      throw TokenOutOfRange("token id " + std::to_string(id) + " outside vocab of size " +
                            std::to_string(cfg.vocab_size));

  std::vector<int> positions(L);
  for (size_t i = 0; i < L; ++i) positions[i] = static_cast<int>(i);
  Var x = t.add(t.embedding_lookup(t.param(m.tok_emb), seq.ids),
                t.embedding_lookup(t.param(m.pos_emb), positions));
  x = t.add(x, t.embedding_lookup(t.param(m.seg_emb), seq.segment_ids));
  x = t.layer_norm(x, t.param(m.emb_ln_gain), t.param(m.emb_ln_bias));

  // additive key mask: 0 for content, -1e30 for padding
  Tensor mask(Shape{L, L});
  for (size_t i = 0; i < L; ++i)
    for (size_t j = seq.true_len; j < L; ++j) mask(i, j) = -1e30;
  const Var mask_const = t.constant(std::move(mask));

  const size_t H = cfg.hidden, nh = cfg.n_heads, dh = H / nh;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  EncoderGraph g;
  for (EncoderLayerParams& lp : m.layers) {
    Var q = t.add_rowvec(t.matmul(x, t.param(lp.wq)), t.param(lp.bq));
    Var k = t.add_rowvec(t.matmul(x, t.param(lp.wk)), t.param(lp.bk));
    Var v = t.add_rowvec(t.matmul(x, t.param(lp.wv)), t.param(lp.bv));
    std::vector<Var> head_ctx;
    std::vector<Var> head_attn;
    for (size_t h = 0; h < nh; ++h) {
      Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
      Var kh = t.slice_cols(k, h * dh, (h + 1) * dh);
      Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
      Var scores = t.add(t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt_dh), mask_const);
      Var attn = t.softmax(scores);
      head_attn.push_back(attn);
      Var attn_used = detail::dropout(t, attn, cfg.dropout_rate, dropout_rng);
      head_ctx.push_back(t.matmul(attn_used, vh));
    }
    Var ctx = t.concat_cols(head_ctx);
    Var attn_out = t.add_rowvec(t.matmul(ctx, t.param(lp.wo)), t.param(lp.bo));
    x = t.layer_norm(t.add(x, attn_out), t.param(lp.ln1_gain), t.param(lp.ln1_bias));
    Var ff = t.add_rowvec(
        t.matmul(t.gelu(t.add_rowvec(t.matmul(x, t.param(lp.ff1_w)), t.param(lp.ff1_b))), t.param(lp.ff2_w)),
        t.param(lp.ff2_b));
    ff = detail::dropout(t, ff, cfg.dropout_rate, dropout_rng);
    x = t.layer_norm(t.add(x, ff), t.param(lp.ln2_gain), t.param(lp.ln2_bias));

    g.layer_states.push_back(x);
    g.sentence_vecs.push_back(cfg.mean_pool ? t.mean_rows(t.slice_rows(x, 0, seq.true_len))
                                            : t.slice_rows(x, 0, 1));
    g.attention.push_back(std::move(head_attn));
  }
  g.final_state = x;
  return g;
}

/// Value-level output of a forward pass.
struct EncoderOutput {
  std::vector<Tensor> layer_states;            // per layer, (L,H)
  std::vector<Tensor> cls_vectors;             // per layer, (H)
  std::vector<std::vector<Tensor>> attention;  // [layer][head], (L,L)
};

inline EncoderOutput encoder_forward(EncoderModel& m, const TokenSequence& seq) {
  Tape t;
  const EncoderGraph g = encoder_forward_graph(t, m, seq);
  EncoderOutput out;
  for (size_t l = 0; l < g.layer_states.size(); ++l) {
    out.layer_states.push_back(t.value(g.layer_states[l]));
    const Tensor& sv = t.value(g.sentence_vecs[l]);
    Tensor flat(Shape{sv.numel()});
    for (size_t i = 0; i < sv.numel(); ++i) flat.at(i) = sv.at(i);
    out.cls_vectors.push_back(std::move(flat));
    std::vector<Tensor> heads;
    for (Var a : g.attention[l]) heads.push_back(t.value(a));
    out.attention.push_back(std::move(heads));
  }
  return out;
}

inline std::vector<EncoderOutput> encoder_forward(EncoderModel& m,
                                                  const std::vector<TokenSequence>& batch) {
  std::vector<EncoderOutput> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) out.push_back(encoder_forward(m, seq));
  return out;
}

/// (hidden x n) matrix whose column j is the sentence vector of the j-th
/// layer from the top: column 0 is the topmost layer.
inline Tensor extract_top_layers(const EncoderOutput& out, size_t n = 4) {
  const size_t n_layers = out.cls_vectors.size();
  if (n < 1 || n > n_layers)
    throw NotEnoughLayers("asked for " + std::to_string(n) + " layers, encoder has " +
                          std::to_string(n_layers));
  const size_t H = out.cls_vectors[0].numel();
  Tensor mat(Shape{H, n});
  for (size_t j = 0; j < n; ++j) {
    const Tensor& v = out.cls_vectors[n_layers - 1 - j];
    for (size_t i = 0; i < H; ++i) mat(i, j) = v.at(i);
  }
  return mat;
}

/// Tape-level twin of extract_top_layers.
inline Var extract_top_layers_graph(Tape& t, const EncoderGraph& g, size_t n) {
  const size_t n_layers = g.sentence_vecs.size();
  if (n < 1 || n > n_layers)
    throw NotEnoughLayers("asked for " + std::to_string(n) + " layers, encoder has " +
                          std::to_string(n_layers));
  std::vector<Var> rows;
  for (size_t j = 0; j < n; ++j) rows.push_back(g.sentence_vecs[n_layers - 1 - j]);
  return t.transpose(t.concat_rows(rows));
}

/// Post-softmax attention dump for one (typically pair-encoded) sequence:
/// {tokens, layers: [{layer, heads: [{head, weights}]}]}, 1-based indices.
inline nlohmann::json export_attention(EncoderModel& m, const TokenSequence& seq, const Vocab& vocab) {
  const EncoderOutput out = encoder_forward(m, seq);
  nlohmann::json doc;
  nlohmann::json tokens = nlohmann::json::array();
  for (int id : seq.ids) tokens.push_back(vocab.token_of(id));
  doc["tokens"] = std::move(tokens);
  nlohmann::json layers = nlohmann::json::array();
  for (size_t l = 0; l < out.attention.size(); ++l) {
    nlohmann::json layer;
    layer["layer"] = l + 1;
    nlohmann::json heads = nlohmann::json::array();
    for (size_t h = 0; h < out.attention[l].size(); ++h) {
      const Tensor& w = out.attention[l][h];
      nlohmann::json rows = nlohmann::json::array();
      for (size_t i = 0; i < w.dim(0); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (size_t j = 0; j < w.dim(1); ++j) row.push_back(w(i, j));
        rows.push_back(std::move(row));
      }
      heads.push_back(nlohmann::json{{"head", h + 1}, {"weights", std::move(rows)}});
    }
    layer["heads"] = std::move(heads);
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

}  // namespace patcls
