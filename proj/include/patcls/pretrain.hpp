#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patcls/adam.hpp"
#include "patcls/encoder.hpp"
#include "patcls/tokenizer.hpp"

namespace patcls {

struct SentencePair {
  std::string a, b;
  int nsp_label = 0;  // 0 = is-next, 1 = not-next
};

namespace detail {

// Splits at Chinese sentence punctuation; a text without any yields its two
// token halves so every document can still produce a pair.
inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> sentences;
  std::string cur;
  size_t i = 0;
  while (i < text.size()) {
    const size_t start = i;
    const uint32_t cp = utf8_next(text, i);
    cur.append(text.substr(start, i - start));
    if (cp == 0x3002 || cp == 0xff1b || cp == 0xff01 || cp == 0xff1f) {  // 。；！？
      if (!trim(cur).empty()) sentences.push_back(trim(cur));
      cur.clear();
    }
  }
  if (!trim(cur).empty()) sentences.push_back(trim(cur));
  if (sentences.size() >= 2) return sentences;
  const auto words = tokenize_words(text);
  if (words.size() < 2) return sentences;
  std::string left, right;
  for (size_t w = 0; w < words.size(); ++w) {
    std::string& dst = w < words.size() / 2 ? left : right;
    if (!dst.empty()) dst += ' ';
    dst += words[w];
  }
  return {left, right};
}

}  // namespace detail

/// Adjacent-sentence pairs with half the second members swapped for a random
/// sentence from elsewhere (label not-next).
inline std::vector<SentencePair> build_nsp_pairs(const std::vector<std::string>& docs, Rng& rng) {
  std::vector<std::vector<std::string>> per_doc;
  std::vector<std::string> all_sentences;
  for (const auto& doc : docs) {
    auto s = detail::split_sentences(doc);
    for (const auto& sent : s) all_sentences.push_back(sent);
    if (s.size() >= 2) per_doc.push_back(std::move(s));
  }
  std::vector<SentencePair> pairs;
  if (all_sentences.size() < 2) return pairs;
  for (const auto& sents : per_doc)
    for (size_t i = 0; i + 1 < sents.size(); ++i) {
      SentencePair p{sents[i], sents[i + 1], 0};
      if (rng.uniform() < 0.5) {
        p.b = all_sentences[rng.below(all_sentences.size())];
        p.nsp_label = 1;
      }
      pairs.push_back(std::move(p));
    }
  return pairs;
}

inline MlmBatchItem make_pretrain_item(const SentencePair& pair, const Vocab& vocab, size_t max_len,
                                       double mask_rate, Rng& rng) {
  MlmBatchItem item = mask_for_mlm(encode_pair(pair.a, pair.b, vocab, max_len), vocab, mask_rate, rng);
  item.nsp_label = pair.nsp_label;
  return item;
}

struct PretrainStepResult {
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
  double total() const { return mlm_loss + nsp_loss; }
};

namespace detail {

// MLM logits for the predicted positions of one forward pass.
inline Var mlm_logits(Tape& t, EncoderModel& m, Var final_state, const std::vector<size_t>& positions) {
  std::vector<int> pos(positions.begin(), positions.end());
  Var h = t.embedding_lookup(final_state, pos);
  h = t.gelu(t.add_rowvec(t.matmul(h, t.param(m.mlm_w)), t.param(m.mlm_b)));
  h = t.layer_norm(h, t.param(m.mlm_ln_gain), t.param(m.mlm_ln_bias));
  return t.add_rowvec(t.matmul(h, t.param(m.mlm_dec_w)), t.param(m.mlm_dec_b));
}

inline Var nsp_logits(Tape& t, EncoderModel& m, Var final_state) {
  Var cls = t.slice_rows(final_state, 0, 1);
  Var pooled = t.tanh(t.add_rowvec(t.matmul(cls, t.param(m.pool_w)), t.param(m.pool_b)));
  return t.add_rowvec(t.matmul(pooled, t.param(m.nsp_w)), t.param(m.nsp_b));
}

}  // namespace detail

/// Joint masked-LM plus next-sentence loss over one batch, one Adam step
/// over all encoder and head parameters.
inline PretrainStepResult pretrain_step(EncoderModel& m, const std::vector<MlmBatchItem>& batch,
                                        AdamState& opt, Rng* dropout_rng = nullptr) {
  if (batch.empty()) throw EmptyCorpus("pretrain_step: empty batch");
  Tape t;
  std::vector<Var> mlm_losses, nsp_losses;
  for (const MlmBatchItem& item : batch) {
    const EncoderGraph g = encoder_forward_graph(t, m, item.input, dropout_rng);
    const auto positions = item.predicted_positions();
    std::vector<int> targets;
    for (size_t p : positions) targets.push_back(item.labels[p]);
    mlm_losses.push_back(t.cross_entropy(detail::mlm_logits(t, m, g.final_state, positions), targets));
    nsp_losses.push_back(t.cross_entropy(detail::nsp_logits(t, m, g.final_state), {item.nsp_label}));
  }
  Var mlm = t.mean_scalars(mlm_losses);
  Var nsp = t.mean_scalars(nsp_losses);
  Var total = t.add(mlm, nsp);
  PretrainStepResult res{t.value(mlm).item(), t.value(nsp).item()};
  const Gradients grads = t.backward(total);
  const auto params = m.parameters();
  opt.step(params, grads);
  return res;
}

struct PretrainOptions {
  size_t steps = 500;
  size_t batch_size = 24;
  size_t max_len = 200;
  double mask_rate = 0.15;
  AdamOptions adam{};
};

/// Seeded pretraining over raw texts; returns the per-step loss trajectory.
inline std::vector<PretrainStepResult> pretrain(EncoderModel& m, const std::vector<std::string>& texts,
                                                const Vocab& vocab, const PretrainOptions& opt,
                                                uint64_t seed) {
  Rng base(seed);
  Rng pair_rng = base.fork(1);
  Rng pick_rng = base.fork(2);
  Rng mask_rng = base.fork(3);
  Rng drop_rng = base.fork(4);
  const auto pairs = build_nsp_pairs(texts, pair_rng);
  if (pairs.empty()) throw EmptyCorpus("pretraining corpus yields no sentence pairs");
  AdamState adam(opt.adam);
  std::vector<PretrainStepResult> history;
  const bool use_dropout = m.config().dropout_rate > 0.0;
  for (size_t step = 0; step < opt.steps; ++step) {
    std::vector<MlmBatchItem> batch;
    for (size_t b = 0; b < opt.batch_size; ++b) {
      const auto& pair = pairs[pick_rng.below(pairs.size())];
      batch.push_back(make_pretrain_item(pair, vocab, opt.max_len, opt.mask_rate, mask_rng));
    }
    history.push_back(pretrain_step(m, batch, adam, use_dropout ? &drop_rng : nullptr));
  }
  return history;
}

/// NSP accuracy of the current model over a set of items; used as a sanity
/// metric during pretraining.
inline double nsp_accuracy(EncoderModel& m, const std::vector<MlmBatchItem>& items) {
  if (items.empty()) throw EmptyTestSet("nsp_accuracy: no items");
  size_t correct = 0;
  for (const auto& item : items) {
    Tape t;
    const EncoderGraph g = encoder_forward_graph(t, m, item.input);
    const Tensor& logits = t.value(detail::nsp_logits(t, m, g.final_state));
    const int pred = logits(0, 0) >= logits(0, 1) ? 0 : 1;
    if (pred == item.nsp_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

}  // namespace patcls
