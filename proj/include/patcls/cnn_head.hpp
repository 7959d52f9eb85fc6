#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patcls/adam.hpp"
#include "patcls/classifier.hpp"
#include "patcls/encoder.hpp"
#include "patcls/tokenizer.hpp"

namespace patcls {

struct HeadConfig {
  size_t n_filters = 32;
  size_t filter_rows = 3;
  size_t filter_cols = 4;  // must match the number of extracted layers
  size_t n_classes = 2;
  double dropout_rate = 0.0;

  void validate() const {
    if (n_filters < 1 || filter_rows < 1 || filter_cols < 1)
      throw InvalidConfig("head filter dimensions must be positive");
    if (n_classes < 2) throw InvalidConfig("head needs at least two classes");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InvalidConfig("head dropout must be in [0,1)");
  }
};

/// Convolutional softmax head over the (hidden x n) layer matrix: n_filters
/// independent filter_rows x n filters, stride 1 valid convolution, ReLU,
/// full max pool per map, then a dense projection to class logits.
class HeadModel {
 public:
  HeadModel(HeadConfig config, uint64_t seed) : cfg_(config) {
    cfg_.validate();
    Rng rng = Rng(seed).fork(0x68656164);
    Tensor f(Shape{cfg_.n_filters, cfg_.filter_rows, cfg_.filter_cols});
    for (size_t i = 0; i < f.numel(); ++i) f.at(i) = rng.truncated_normal(0.02);
    filters = Parameter("head.filters", std::move(f));
    filter_bias = Parameter("head.filter_bias", Tensor(Shape{cfg_.n_filters}));
    Tensor w(Shape{cfg_.n_filters, cfg_.n_classes});
    for (size_t i = 0; i < w.numel(); ++i) w.at(i) = rng.truncated_normal(0.02);
    proj_w = Parameter("head.proj_w", std::move(w));
    proj_b = Parameter("head.proj_b", Tensor(Shape{cfg_.n_classes}));
  }

  const HeadConfig& config() const { return cfg_; }

  std::vector<Parameter*> parameters() { return {&filters, &filter_bias, &proj_w, &proj_b}; }

  Parameter filters, filter_bias, proj_w, proj_b;

 private:
  HeadConfig cfg_;
};

/// Class logits for one (hidden x n) input matrix.
inline Var head_logits_graph(Tape& t, HeadModel& head, Var layer_matrix, Rng* dropout_rng = nullptr) {
  const Tensor& in = t.value(layer_matrix);
  if (in.rank() != 2 || in.dim(1) != head.config().filter_cols)
    throw ShapeMismatch("head expects (hidden," + std::to_string(head.config().filter_cols) +
                        "), got " + shape_str(in.shape()));
  Var maps = t.conv2d_valid(layer_matrix, t.param(head.filters), t.param(head.filter_bias));
  Var pooled = t.maxpool_per_map(t.relu(maps));
  Var row = t.reshape(pooled, Shape{1, head.config().n_filters});
  row = detail::dropout(t, row, head.config().dropout_rate, dropout_rng);
  return t.add_rowvec(t.matmul(row, t.param(head.proj_w)), t.param(head.proj_b));
}

/// Forward pass to class probabilities.
inline std::vector<double> head_forward(HeadModel& head, const Tensor& layer_matrix) {
  Tape t;
  Var probs = t.softmax(head_logits_graph(t, head, t.constant(layer_matrix)));
  const Tensor& v = t.value(probs);
  return std::vector<double>(v.data().begin(), v.data().end());
}

// ---------------------------------------------------------------------------
// Joint fine-tuning of encoder + head
// ---------------------------------------------------------------------------

struct FinetuneOptions {
  double lr = 2e-5;
  size_t batch_size = 24;
  size_t epochs = 20;
  size_t max_len = 200;
  size_t n_top_layers = 4;
  bool freeze_encoder = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {

inline Var example_logits(Tape& t, EncoderModel& enc, HeadModel& head, const TokenSequence& seq,
                          size_t n_top, Rng* dropout_rng) {
  const EncoderGraph g = encoder_forward_graph(t, enc, seq, dropout_rng);
  return head_logits_graph(t, head, extract_top_layers_graph(t, g, n_top), dropout_rng);
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline EvalResult evaluate_classifier(EncoderModel& enc, HeadModel& head, const Vocab& vocab,
                                      const std::vector<LabeledExample>& set,
                                      const FinetuneOptions& opt) {
  EvalResult out;
  for (const auto& ex : set) {
    Tape t;
    Var logits = example_logits(t, enc, head, encode(ex.text, vocab, opt.max_len), opt.n_top_layers,
                                nullptr);
    out.loss += t.value(t.cross_entropy(logits, {ex.label})).item();
    const Tensor& lv = t.value(logits);
    out.accuracy += argmax_lowest({lv.data().begin(), lv.data().end()}) == ex.label ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(set.size());
  out.loss /= n;
  out.accuracy /= n;
  return out;
}

}  // namespace detail

/// Cross-entropy fine-tuning; each Adam step updates the head and (unless
/// frozen) every encoder core parameter. Training-pass accuracy is measured
/// on the predictions made during the epoch; eval rows are computed after
/// each epoch with dropout off.
inline std::vector<EpochMetrics> finetune(EncoderModel& enc, HeadModel& head, const Vocab& vocab,
                                          const std::vector<LabeledExample>& train_set,
                                          const std::vector<LabeledExample>& eval_set,
                                          const FinetuneOptions& opt, uint64_t seed) {
  if (train_set.empty()) throw EmptyCorpus("finetune: empty training set");
  require_labels_in_range(train_set, static_cast<int>(head.config().n_classes));
  if (!eval_set.empty()) require_labels_in_range(eval_set, static_cast<int>(head.config().n_classes));

  std::vector<Parameter*> params = head.parameters();
  if (!opt.freeze_encoder)
    for (Parameter* p : enc.core_parameters()) params.push_back(p);
  AdamState adam(AdamOptions{opt.lr, opt.beta1, opt.beta2, opt.eps});

  Rng base(seed);
  Rng shuffle_rng = base.fork(1);
  Rng dropout_rng = base.fork(2);
  const bool use_dropout = enc.config().dropout_rate > 0.0 || head.config().dropout_rate > 0.0;

  std::vector<EpochMetrics> history;
  for (size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    size_t batches = 0, correct = 0;
    for (size_t start = 0; start < order.size(); start += opt.batch_size) {
      const size_t end = std::min(order.size(), start + opt.batch_size);
      Tape t;
      std::vector<Var> losses;
      for (size_t i = start; i < end; ++i) {
        const LabeledExample& ex = train_set[order[i]];
        Var logits = detail::example_logits(t, enc, head, encode(ex.text, vocab, opt.max_len),
                                            opt.n_top_layers, use_dropout ? &dropout_rng : nullptr);
        const Tensor& lv = t.value(logits);
        if (argmax_lowest({lv.data().begin(), lv.data().end()}) == ex.label) ++correct;
        losses.push_back(t.cross_entropy(logits, {ex.label}));
      }
      Var batch_loss = t.mean_scalars(losses);
      loss_sum += t.value(batch_loss).item();
      ++batches;
      adam.step(params, t.backward(batch_loss));
    }

    EpochMetrics m;
    m.epoch = static_cast<int>(epoch);
    m.train_loss = loss_sum / static_cast<double>(batches);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (!eval_set.empty()) {
      const auto ev = detail::evaluate_classifier(enc, head, vocab, eval_set, opt);
      m.eval_loss = ev.loss;
      m.eval_accuracy = ev.accuracy;
      m.has_eval = true;
    }
    history.push_back(m);
  }
  return history;
}

/// Single-text inference; argmax with lowest-index tie-break.
inline Prediction predict(EncoderModel& enc, HeadModel& head, const std::string& text,
                          const Vocab& vocab, size_t max_len, size_t n_top_layers) {
  Tape t;
  Var logits = detail::example_logits(t, enc, head, encode(text, vocab, max_len), n_top_layers, nullptr);
  const Tensor& probs = t.value(t.softmax(logits));
  Prediction out;
  out.probs.assign(probs.data().begin(), probs.data().end());
  out.label = argmax_lowest(out.probs);
  return out;
}

}  // namespace patcls
