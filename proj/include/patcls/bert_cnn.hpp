#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patcls/checkpoint.hpp"
#include "patcls/classifier.hpp"
#include "patcls/cnn_head.hpp"
#include "patcls/pretrain.hpp"

namespace patcls {

struct BertCnnConfig {
  EncoderConfig encoder;      // vocab_size is filled in from the vocabulary
  HeadConfig head;            // n_classes is filled in by the factory
  FinetuneOptions finetune;
  size_t min_freq = 1;
};

namespace detail {

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"n_layers", c.n_layers},     {"hidden", c.hidden},
          {"n_heads", c.n_heads},       {"ff_dim", c.ff_dim},
          {"vocab_size", c.vocab_size}, {"max_positions", c.max_positions},
          {"dropout_rate", c.dropout_rate}, {"mean_pool", c.mean_pool}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.n_layers = j.at("n_layers").get<size_t>();
  c.hidden = j.at("hidden").get<size_t>();
  c.n_heads = j.at("n_heads").get<size_t>();
  c.ff_dim = j.at("ff_dim").get<size_t>();
  c.vocab_size = j.at("vocab_size").get<size_t>();
  c.max_positions = j.at("max_positions").get<size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.mean_pool = j.at("mean_pool").get<bool>();
  return c;
}

inline nlohmann::json head_config_to_json(const HeadConfig& c) {
  return {{"n_filters", c.n_filters}, {"filter_rows", c.filter_rows},
          {"filter_cols", c.filter_cols}, {"n_classes", c.n_classes},
          {"dropout_rate", c.dropout_rate}};
}

inline HeadConfig head_config_from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.n_filters = j.at("n_filters").get<size_t>();
  c.filter_rows = j.at("filter_rows").get<size_t>();
  c.filter_cols = j.at("filter_cols").get<size_t>();
  c.n_classes = j.at("n_classes").get<size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  return c;
}

inline nlohmann::json finetune_options_to_json(const FinetuneOptions& o) {
  return {{"lr", o.lr},           {"batch_size", o.batch_size}, {"epochs", o.epochs},
          {"max_len", o.max_len}, {"n_top_layers", o.n_top_layers},
          {"freeze_encoder", o.freeze_encoder}};
}

inline FinetuneOptions finetune_options_from_json(const nlohmann::json& j) {
  FinetuneOptions o;
  o.lr = j.at("lr").get<double>();
  o.batch_size = j.at("batch_size").get<size_t>();
  o.epochs = j.at("epochs").get<size_t>();
  o.max_len = j.at("max_len").get<size_t>();
  o.n_top_layers = j.at("n_top_layers").get<size_t>();
  o.freeze_encoder = j.at("freeze_encoder").get<bool>();
  return o;
}

}  // namespace detail

/// Encoder + convolutional head bundled behind the classifier contract.
/// Starts from a random encoder unless a locally pretrained one (and its
/// vocabulary) is adopted before training.
class BertCnnClassifier : public TextClassifier {
 public:
  BertCnnClassifier(BertCnnConfig config, int n_classes, uint64_t seed)
      : cfg_(std::move(config)), seed_(seed) {
    cfg_.head.n_classes = static_cast<size_t>(n_classes);
    cfg_.head.filter_cols = cfg_.finetune.n_top_layers;
  }

  void adopt_pretrained(const Vocab& vocab, const EncoderModel& pretrained) {
    vocab_ = vocab;
    cfg_.encoder = pretrained.config();
    encoder_.emplace(pretrained);  // copy of the pretrained weights
  }

  std::vector<EpochMetrics> train(const std::vector<LabeledExample>& train_set,
                                  const std::vector<LabeledExample>& eval_set) override {
    if (train_set.empty()) throw EmptyCorpus("bert-cnn: empty training set");
    Rng base(seed_);
    if (!encoder_) {
      std::vector<std::string> texts;
      for (const auto& ex : train_set) texts.push_back(ex.text);
      vocab_ = Vocab::build(texts, cfg_.min_freq);
      cfg_.encoder.vocab_size = vocab_->size();
      encoder_.emplace(cfg_.encoder, base.fork(1).next_u64());
    }
    head_.emplace(cfg_.head, base.fork(2).next_u64());
    return finetune(*encoder_, *head_, *vocab_, train_set, eval_set, cfg_.finetune,
                    base.fork(3).next_u64());
  }

  Prediction predict(const std::string& text) const override {
    if (!encoder_ || !head_ || !vocab_) throw Error("bert-cnn: predict before train");
    return patcls::predict(const_cast<EncoderModel&>(*encoder_), const_cast<HeadModel&>(*head_), text,
                           *vocab_, cfg_.finetune.max_len, cfg_.finetune.n_top_layers);
  }

  int n_classes() const override { return static_cast<int>(cfg_.head.n_classes); }
  std::string kind() const override { return "bert-cnn"; }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out;
    if (encoder_)
      for (Parameter* p : encoder_->parameters()) out.push_back(p);
    if (head_)
      for (Parameter* p : head_->parameters()) out.push_back(p);
    return out;
  }

  EncoderModel* encoder() { return encoder_ ? &*encoder_ : nullptr; }
  HeadModel* head() { return head_ ? &*head_ : nullptr; }
  const Vocab* vocab() const { return vocab_ ? &*vocab_ : nullptr; }

  void save(const std::string& dir) const override {
    namespace fs = std::filesystem;
    if (!encoder_ || !head_ || !vocab_) throw Error("bert-cnn: save before train");
    fs::create_directories(dir);
    vocab_->save(dir + "/vocab.json");
    std::vector<const Parameter*> params;
    for (Parameter* p : const_cast<BertCnnClassifier*>(this)->parameters()) params.push_back(p);
    save_checkpoint(params, dir + "/model.bin", dir + "/model.json");
    nlohmann::json meta{{"kind", "bert-cnn"},
                        {"encoder", detail::encoder_config_to_json(encoder_->config())},
                        {"head", detail::head_config_to_json(head_->config())},
                        {"finetune", detail::finetune_options_to_json(cfg_.finetune)},
                        {"min_freq", cfg_.min_freq}};
    std::ofstream out(dir + "/meta.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + dir + "/meta.json");
    out << meta.dump(2) << "\n";
  }

  static std::unique_ptr<BertCnnClassifier> load(const std::string& dir) {
    std::ifstream in(dir + "/meta.json", std::ios::binary);
    if (!in) throw IoError("cannot open " + dir + "/meta.json");
    nlohmann::json meta;
    in >> meta;
    if (meta.at("kind") != "bert-cnn") throw ConfigError(dir + " does not hold a bert-cnn model");
    BertCnnConfig cfg;
    cfg.encoder = detail::encoder_config_from_json(meta.at("encoder"));
    cfg.head = detail::head_config_from_json(meta.at("head"));
    cfg.finetune = detail::finetune_options_from_json(meta.at("finetune"));
    cfg.min_freq = meta.at("min_freq").get<size_t>();
    auto model = std::make_unique<BertCnnClassifier>(cfg, static_cast<int>(cfg.head.n_classes), 0);
    model->vocab_ = Vocab::load(dir + "/vocab.json");
    model->encoder_.emplace(cfg.encoder, 0);
    model->head_.emplace(cfg.head, 0);
    load_checkpoint(model->parameters(), dir + "/model.bin", dir + "/model.json");
    return model;
  }

 private:
  BertCnnConfig cfg_;
  uint64_t seed_;
  std::optional<Vocab> vocab_;
  std::optional<EncoderModel> encoder_;
  std::optional<HeadModel> head_;
};

inline ClassifierFactory bert_cnn_factory(BertCnnConfig config) {
  return [config](int n_classes, uint64_t seed) -> std::unique_ptr<TextClassifier> {
    return std::make_unique<BertCnnClassifier>(config, n_classes, seed);
  };
}

/// Factory whose classifiers all start from one locally pretrained encoder.
inline ClassifierFactory bert_cnn_factory(BertCnnConfig config, std::shared_ptr<const Vocab> vocab,
                                          std::shared_ptr<const EncoderModel> pretrained) {
  return [config, vocab, pretrained](int n_classes, uint64_t seed) -> std::unique_ptr<TextClassifier> {
    auto c = std::make_unique<BertCnnClassifier>(config, n_classes, seed);
    c->adopt_pretrained(*vocab, *pretrained);
    return c;
  };
}

}  // namespace patcls
