#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patcls/adam.hpp"
#include "patcls/checkpoint.hpp"
#include "patcls/classifier.hpp"
#include "patcls/tokenizer.hpp"

namespace patcls {

/// Static-embedding comparison models over whitespace tokens: a 1-D
/// convolutional classifier and a gated recurrent one. Embeddings train
/// jointly from random init; the PAD row is pinned to zero.
struct BaselineConfig {
  enum class Kind { Cnn, Rnn };
  Kind kind = Kind::Cnn;
  size_t embed_dim = 300;
  size_t hidden = 128;       // rnn state size
  size_t n_filters = 32;     // cnn filter count
  size_t filter_width = 3;   // cnn window, in tokens
  size_t max_len = 200;      // tokens per example
  size_t min_freq = 1;
  double lr = 2e-5;
  size_t batch_size = 20;
  size_t epochs = 20;
  size_t n_classes = 2;

  void validate() const {
    if (embed_dim < 1 || hidden < 1 || n_filters < 1 || filter_width < 1 || max_len < filter_width)
      throw InvalidConfig("baseline dimensions must be positive and max_len >= filter_width");
    if (n_classes < 2) throw InvalidConfig("baseline needs at least two classes");
  }
};

class BaselineClassifier : public TextClassifier {
 public:
  BaselineClassifier(BaselineConfig config, int n_classes, uint64_t seed)
      : cfg_(config), seed_(seed) {
    cfg_.n_classes = static_cast<size_t>(n_classes);
    cfg_.validate();
  }

  std::vector<EpochMetrics> train(const std::vector<LabeledExample>& train_set,
                                  const std::vector<LabeledExample>& eval_set) override {
    if (train_set.empty()) throw EmptyCorpus("baseline: empty training set");
    require_labels_in_range(train_set, static_cast<int>(cfg_.n_classes));
    if (!eval_set.empty()) require_labels_in_range(eval_set, static_cast<int>(cfg_.n_classes));

    std::vector<std::string> texts;
    for (const auto& ex : train_set) texts.push_back(ex.text);
    vocab_ = Vocab::build_words(texts, cfg_.min_freq);

    Rng base(seed_);
    init_parameters(base.fork(1));
    Rng shuffle_rng = base.fork(2);

    AdamState adam(AdamOptions{cfg_.lr, 0.9, 0.999, 1e-8});
    std::vector<Parameter*> params = parameters();

    std::vector<EpochMetrics> history;
    for (size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      std::vector<size_t> order(train_set.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle_rng.shuffle(order);

      double loss_sum = 0.0;
      size_t batches = 0, correct = 0;
      for (size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        const size_t end = std::min(order.size(), start + cfg_.batch_size);
        Tape t;
        std::vector<Var> losses;
        for (size_t i = start; i < end; ++i) {
          const LabeledExample& ex = train_set[order[i]];
          Var logits = logits_graph(t, ex.text);
          const Tensor& lv = t.value(logits);
          if (argmax_lowest({lv.data().begin(), lv.data().end()}) == ex.label) ++correct;
          losses.push_back(t.cross_entropy(logits, {ex.label}));
        }
        Var batch_loss = t.mean_scalars(losses);
        loss_sum += t.value(batch_loss).item();
        ++batches;
        Gradients grads = t.backward(batch_loss);
        pin_pad_row(grads);
        adam.step(params, grads);
      }

      EpochMetrics m;
      m.epoch = static_cast<int>(epoch);
      m.train_loss = loss_sum / static_cast<double>(batches);
      m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
      if (!eval_set.empty()) {
        double eloss = 0.0;
        size_t ecorrect = 0;
        for (const auto& ex : eval_set) {
          Tape t;
          Var logits = logits_graph(t, ex.text);
          eloss += t.value(t.cross_entropy(logits, {ex.label})).item();
          const Tensor& lv = t.value(logits);
          if (argmax_lowest({lv.data().begin(), lv.data().end()}) == ex.label) ++ecorrect;
        }
        m.eval_loss = eloss / static_cast<double>(eval_set.size());
        m.eval_accuracy = static_cast<double>(ecorrect) / static_cast<double>(eval_set.size());
        m.has_eval = true;
      }
      history.push_back(m);
    }
    return history;
  }

  Prediction predict(const std::string& text) const override {
    if (!vocab_) throw Error("baseline: predict before train");
    auto* self = const_cast<BaselineClassifier*>(this);
    Tape t;
    const Tensor& probs = t.value(t.softmax(self->logits_graph(t, text)));
    Prediction out;
    out.probs.assign(probs.data().begin(), probs.data().end());
    out.label = argmax_lowest(out.probs);
    return out;
  }

  int n_classes() const override { return static_cast<int>(cfg_.n_classes); }
  std::string kind() const override { return cfg_.kind == BaselineConfig::Kind::Cnn ? "cnn" : "rnn"; }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out = {&embedding_};
    if (cfg_.kind == BaselineConfig::Kind::Cnn) {
      out.push_back(&filters_);
      out.push_back(&filter_bias_);
    } else {
      for (Parameter* p : {&wz_, &uz_, &bz_, &wr_, &ur_, &br_, &wn_, &un_, &bn_}) out.push_back(p);
    }
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
  }

  const Tensor& embedding_table() const { return embedding_.value(); }

  void save(const std::string& dir) const override {
    namespace fs = std::filesystem;
    if (!vocab_) throw Error("baseline: save before train");
    fs::create_directories(dir);
    vocab_->save(dir + "/vocab.json");
    std::vector<const Parameter*> params;
    for (Parameter* p : const_cast<BaselineClassifier*>(this)->parameters()) params.push_back(p);
    save_checkpoint(params, dir + "/model.bin", dir + "/model.json");
    nlohmann::json meta{{"kind", kind()},
                        {"embed_dim", cfg_.embed_dim},
                        {"hidden", cfg_.hidden},
                        {"n_filters", cfg_.n_filters},
                        {"filter_width", cfg_.filter_width},
                        {"max_len", cfg_.max_len},
                        {"min_freq", cfg_.min_freq},
                        {"lr", cfg_.lr},
                        {"batch_size", cfg_.batch_size},
                        {"epochs", cfg_.epochs},
                        {"n_classes", cfg_.n_classes}};
    std::ofstream out(dir + "/meta.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + dir + "/meta.json");
    out << meta.dump(2) << "\n";
  }

  static std::unique_ptr<BaselineClassifier> load(const std::string& dir) {
    std::ifstream in(dir + "/meta.json", std::ios::binary);
    if (!in) throw IoError("cannot open " + dir + "/meta.json");
    nlohmann::json meta;
    in >> meta;
    BaselineConfig cfg;
    const std::string kind = meta.at("kind").get<std::string>();
    if (kind == "cnn")
      cfg.kind = BaselineConfig::Kind::Cnn;
    else if (kind == "rnn")
      cfg.kind = BaselineConfig::Kind::Rnn;
    else
      throw ConfigError(dir + " does not hold a baseline model");
    cfg.embed_dim = meta.at("embed_dim").get<size_t>();
    cfg.hidden = meta.at("hidden").get<size_t>();
    cfg.n_filters = meta.at("n_filters").get<size_t>();
    cfg.filter_width = meta.at("filter_width").get<size_t>();
    cfg.max_len = meta.at("max_len").get<size_t>();
    cfg.min_freq = meta.at("min_freq").get<size_t>();
    cfg.lr = meta.at("lr").get<double>();
    cfg.batch_size = meta.at("batch_size").get<size_t>();
    cfg.epochs = meta.at("epochs").get<size_t>();
    auto model = std::make_unique<BaselineClassifier>(cfg, meta.at("n_classes").get<int>(), 0);
    model->vocab_ = Vocab::load(dir + "/vocab.json");
    Rng rng(0);
    model->init_parameters(rng);
    load_checkpoint(model->parameters(), dir + "/model.bin", dir + "/model.json");
    return model;
  }

 private:
  void init_parameters(Rng rng) {
    const size_t V = vocab_->size(), d = cfg_.embed_dim, H = cfg_.hidden, C = cfg_.n_classes;
    auto weight = [&](const std::string& name, Shape shape) {
      Tensor t(std::move(shape));
      for (size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.truncated_normal(0.02);
      return Parameter(name, std::move(t));
    };
    embedding_ = weight("baseline.embedding", {V, d});
    for (size_t j = 0; j < d; ++j) embedding_.value()(static_cast<size_t>(Vocab::kPad), j) = 0.0;
    if (cfg_.kind == BaselineConfig::Kind::Cnn) {
      filters_ = weight("baseline.filters", {cfg_.n_filters, cfg_.filter_width, d});
      filter_bias_ = Parameter("baseline.filter_bias", Tensor(Shape{cfg_.n_filters}));
      out_w_ = weight("baseline.out_w", {cfg_.n_filters, C});
    } else {
      wz_ = weight("baseline.gru.wz", {d, H});
      uz_ = weight("baseline.gru.uz", {H, H});
      bz_ = Parameter("baseline.gru.bz", Tensor(Shape{H}));
      wr_ = weight("baseline.gru.wr", {d, H});
      ur_ = weight("baseline.gru.ur", {H, H});
      br_ = Parameter("baseline.gru.br", Tensor(Shape{H}));
      wn_ = weight("baseline.gru.wn", {d, H});
      un_ = weight("baseline.gru.un", {H, H});
      bn_ = Parameter("baseline.gru.bn", Tensor(Shape{H}));
      out_w_ = weight("baseline.out_w", {H, C});
    }
    out_b_ = Parameter("baseline.out_b", Tensor(Shape{C}));
  }

  // token ids, padded/truncated to max_len
  std::pair<std::vector<int>, size_t> encode_tokens(const std::string& text) const {
    auto words = tokenize_words(text);
    if (words.size() > cfg_.max_len) words.resize(cfg_.max_len);
    std::vector<int> ids(cfg_.max_len, Vocab::kPad);
    for (size_t i = 0; i < words.size(); ++i) ids[i] = vocab_->id_of(words[i]);
    return {std::move(ids), words.size()};
  }

  Var logits_graph(Tape& t, const std::string& text) {
    const auto [ids, true_len] = encode_tokens(text);
    Var emb = t.embedding_lookup(t.param(embedding_), ids);
    if (cfg_.kind == BaselineConfig::Kind::Cnn) {
      Var maps = t.conv2d_valid(emb, t.param(filters_), t.param(filter_bias_));
      Var pooled = t.reshape(t.maxpool_per_map(t.relu(maps)), Shape{1, cfg_.n_filters});
      return t.add_rowvec(t.matmul(pooled, t.param(out_w_)), t.param(out_b_));
    }
    // gated recurrence over the content prefix; final state feeds the softmax
    const size_t H = cfg_.hidden;
    Var h = t.constant(Tensor(Shape{1, H}));
    const Var ones = t.constant(Tensor(Shape{1, H}, 1.0));
    for (size_t step = 0; step < true_len; ++step) {
      Var x = t.slice_rows(emb, step, step + 1);
      Var z = t.sigmoid(t.add_rowvec(t.add(t.matmul(x, t.param(wz_)), t.matmul(h, t.param(uz_))), t.param(bz_)));
      Var r = t.sigmoid(t.add_rowvec(t.add(t.matmul(x, t.param(wr_)), t.matmul(h, t.param(ur_))), t.param(br_)));
      Var n = t.tanh(t.add_rowvec(t.add(t.matmul(x, t.param(wn_)), t.matmul(t.mul(r, h), t.param(un_))), t.param(bn_)));
      h = t.add(t.mul(t.sub(ones, z), n), t.mul(z, h));
    }
    return t.add_rowvec(t.matmul(h, t.param(out_w_)), t.param(out_b_));
  }

  // PAD embeddings receive no updates
  void pin_pad_row(Gradients& grads) {
    if (const Tensor* g = grads.find(embedding_)) {
      Tensor zeroed = *g;
      for (size_t j = 0; j < cfg_.embed_dim; ++j) zeroed(static_cast<size_t>(Vocab::kPad), j) = 0.0;
      grads.put(&embedding_, std::move(zeroed));
    }
  }

  BaselineConfig cfg_;
  uint64_t seed_;
  std::optional<Vocab> vocab_;
  Parameter embedding_;
  Parameter filters_, filter_bias_;
  Parameter wz_, uz_, bz_, wr_, ur_, br_, wn_, un_, bn_;
  Parameter out_w_, out_b_;
};

inline ClassifierFactory baseline_factory(BaselineConfig config) {
  return [config](int n_classes, uint64_t seed) -> std::unique_ptr<TextClassifier> {
    return std::make_unique<BaselineClassifier>(config, n_classes, seed);
  };
}

inline std::unique_ptr<BaselineClassifier> train_baseline(BaselineConfig config,
                                                          const std::vector<LabeledExample>& train_set,
                                                          const std::vector<LabeledExample>& eval_set,
                                                          uint64_t seed) {
  auto model = std::make_unique<BaselineClassifier>(config, static_cast<int>(config.n_classes), seed);
  model->train(train_set, eval_set);
  return model;
}

}  // namespace patcls
