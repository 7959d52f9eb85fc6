#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "patcls/encoder.hpp"
#include "patcls/pretrain.hpp"
#include "patcls/synthetic.hpp"

#include "oracles.hpp"

using namespace patcls;

namespace {

EncoderConfig toy_config(size_t vocab_size, size_t n_layers = 2, size_t hidden = 32,
                         size_t n_heads = 4, size_t max_positions = 32) {
  EncoderConfig cfg;
  cfg.n_layers = n_layers;
  cfg.hidden = hidden;
  cfg.n_heads = n_heads;
  cfg.ff_dim = 2 * hidden;
  cfg.vocab_size = vocab_size;
  cfg.max_positions = max_positions;
  cfg.dropout_rate = 0.0;
  return cfg;
}

std::vector<std::string> toy_texts() {
  return {"本实用新型公开了一种固体绝缘开关柜结构。它包括隔离开关单元、接地装置和隔离插座装置。",
          "一种 集成电路 塑封 设备 树脂 料 移送 装置", "高频 感应 热浸 渗铝 工艺 步骤",
          "计算机 运行 速度 监测 控制系统"};
}

}  // namespace

TEST_CASE("init_encoder parameter count matches the closed-form formula") {
  const Vocab vocab = Vocab::build(toy_texts());
  const EncoderConfig cfg = toy_config(vocab.size());
  EncoderModel model(cfg, 7);

  // independent re-derivation of the documented formula
  const size_t V = cfg.vocab_size, P = cfg.max_positions, H = cfg.hidden, F = cfg.ff_dim,
               n = cfg.n_layers;
  const size_t embeddings = V * H + P * H + 2 * H + 2 * H;
  const size_t per_layer = 4 * (H * H + H) + 2 * H + H * F + F + F * H + H + 2 * H;
  const size_t mlm = H * H + H + 2 * H + H * V + V;
  const size_t nsp = H * H + H + 2 * H + 2;
  CHECK(model.parameter_count() == embeddings + n * per_layer + mlm + nsp);
}

TEST_CASE("init_encoder is deterministic per seed") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel a(toy_config(vocab.size()), 42);
  EncoderModel b(toy_config(vocab.size()), 42);
  EncoderModel c(toy_config(vocab.size()), 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool all_equal = true, any_diff_seed = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    for (size_t j = 0; j < pa[i]->value().numel(); ++j) {
      all_equal = all_equal && pa[i]->value().at(j) == pb[i]->value().at(j);
      any_diff_seed = any_diff_seed || pa[i]->value().at(j) != pc[i]->value().at(j);
    }
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
  // truncated normal init: weights within 2 sigma, layer-norm gains exactly 1
  for (size_t j = 0; j < a.tok_emb.value().numel(); ++j)
    CHECK(std::fabs(a.tok_emb.value().at(j)) <= 2.0 * 0.02 + 1e-12);
  for (size_t j = 0; j < a.emb_ln_gain.value().numel(); ++j)
    CHECK(a.emb_ln_gain.value().at(j) == 1.0);
}

TEST_CASE("invalid configs are rejected") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderConfig bad = toy_config(vocab.size());
  bad.hidden = 30;
  bad.n_heads = 4;
  CHECK_THROWS_AS(EncoderModel(bad, 1), InvalidConfig);
  EncoderConfig no_vocab = toy_config(vocab.size());
  no_vocab.vocab_size = 3;
  CHECK_THROWS_AS(EncoderModel(no_vocab, 1), InvalidConfig);
}

TEST_CASE("forward shapes on the toy config") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size(), 2, 32, 4, 16), 3);
  const TokenSequence seq = encode("一种集成电路", vocab, 16);
  const EncoderOutput out = encoder_forward(model, seq);
  REQUIRE(out.layer_states.size() == 2);
  for (const auto& s : out.layer_states) CHECK(s.shape() == Shape{16, 32});
  REQUIRE(out.cls_vectors.size() == 2);
  for (const auto& v : out.cls_vectors) CHECK(v.shape() == Shape{32});
  REQUIRE(out.attention.size() == 2);
  for (const auto& layer : out.attention) {
    REQUIRE(layer.size() == 4);
    for (const auto& head : layer) CHECK(head.shape() == Shape{16, 16});
  }
}

TEST_CASE("forward at the reference width: 12 layers of 768-dim vectors") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderConfig cfg = toy_config(vocab.size(), 12, 768, 12, 16);
  cfg.ff_dim = 128;  // keep the shape probe light; only hidden/layer counts matter here
  EncoderModel model(cfg, 5);
  const TokenSequence seq = encode("专利分类", vocab, 16);
  const EncoderOutput out = encoder_forward(model, seq);
  CHECK(out.cls_vectors.size() == 12);
  for (const auto& v : out.cls_vectors) CHECK(v.shape() == Shape{768});

  // top-4 extraction: a 768x4 matrix whose columns are layers 12, 11, 10, 9
  const Tensor top4 = extract_top_layers(out, 4);
  REQUIRE(top4.shape() == Shape{768, 4});
  for (size_t j = 0; j < 4; ++j)
    for (size_t i = 0; i < 768; i += 97) CHECK(top4(i, j) == out.cls_vectors[11 - j].at(i));
}

TEST_CASE("attention ignores padded keys") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size()), 11);
  const TokenSequence seq = encode("隔离开关", vocab, 20);
  REQUIRE(seq.true_len == 6);
  const EncoderOutput out = encoder_forward(model, seq);
  for (const auto& layer : out.attention)
    for (const auto& head : layer)
      for (size_t i = 0; i < head.dim(0); ++i) {
        double row_sum = 0.0;
        for (size_t j = 0; j < head.dim(1); ++j) {
          if (j >= seq.true_len) CHECK(head(i, j) == 0.0);  // exactly zero on pad keys
          else row_sum += head(i, j);
        }
        CHECK(std::fabs(row_sum - 1.0) <= 1e-6);
      }
}

TEST_CASE("pad embeddings cannot influence content positions") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size()), 17);
  const TokenSequence seq = encode("开关柜结构", vocab, 24);
  const EncoderOutput before = encoder_forward(model, seq);

  // perturb the embedding row used by every padded position
  for (size_t j = 0; j < model.config().hidden; ++j)
    model.tok_emb.value()(static_cast<size_t>(Vocab::kPad), j) += 3.21;
  const EncoderOutput after = encoder_forward(model, seq);

  for (size_t l = 0; l < before.layer_states.size(); ++l)
    for (size_t i = 0; i < seq.true_len; ++i)
      for (size_t j = 0; j < model.config().hidden; ++j)
        CHECK(std::fabs(before.layer_states[l](i, j) - after.layer_states[l](i, j)) <= 1e-9);
}

TEST_CASE("per-layer sentence vectors do not alias") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size(), 3), 23);
  const EncoderOutput out = encoder_forward(model, encode("接地装置和隔离插座装置", vocab, 24));
  for (size_t a = 0; a < out.cls_vectors.size(); ++a)
    for (size_t b = a + 1; b < out.cls_vectors.size(); ++b) {
      double diff = 0.0;
      for (size_t j = 0; j < out.cls_vectors[a].numel(); ++j)
        diff = std::max(diff, std::fabs(out.cls_vectors[a].at(j) - out.cls_vectors[b].at(j)));
      CHECK(diff > 1e-6);
    }
}

TEST_CASE("extract_top_layers column order is topmost-first") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size(), 2), 29);
  const EncoderOutput out = encoder_forward(model, encode("塑封设备", vocab, 16));

  const Tensor top1 = extract_top_layers(out, 1);
  REQUIRE(top1.shape() == Shape{32, 1});
  for (size_t i = 0; i < 32; ++i) CHECK(top1(i, 0) == out.cls_vectors[1].at(i));

  const Tensor top2 = extract_top_layers(out, 2);
  REQUIRE(top2.shape() == Shape{32, 2});
  for (size_t i = 0; i < 32; ++i) {
    CHECK(top2(i, 0) == out.cls_vectors[1].at(i));  // layer 2 first
    CHECK(top2(i, 1) == out.cls_vectors[0].at(i));  // then layer 1
  }
  CHECK_THROWS_AS(extract_top_layers(out, 3), NotEnoughLayers);
  CHECK_THROWS_AS(extract_top_layers(out, 0), NotEnoughLayers);

  // the tape-level twin produces the same matrix
  Tape t;
  const EncoderGraph g = encoder_forward_graph(t, model, encode("塑封设备", vocab, 16));
  const Tensor& mat = t.value(extract_top_layers_graph(t, g, 2));
  REQUIRE(mat.shape() == Shape{32, 2});
  for (size_t i = 0; i < 32; ++i)
    for (size_t j = 0; j < 2; ++j) CHECK(mat(i, j) == Catch::Approx(top2(i, j)).margin(1e-12));
}

TEST_CASE("forward rejects out-of-range tokens and overlong sequences") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size(), 2, 32, 4, 16), 31);
  TokenSequence seq = encode("设备", vocab, 16);
  seq.ids[1] = static_cast<int>(vocab.size()) + 5;
  CHECK_THROWS_AS(encoder_forward(model, seq), TokenOutOfRange);
  const TokenSequence too_long = encode("设备", vocab, 24);
  CHECK_THROWS_AS(encoder_forward(model, too_long), TokenOutOfRange);
}

TEST_CASE("mean-pool sentence vectors are a config alternative") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderConfig cfg = toy_config(vocab.size());
  cfg.mean_pool = true;
  EncoderModel model(cfg, 37);
  const TokenSequence seq = encode("开关", vocab, 16);
  const EncoderOutput out = encoder_forward(model, seq);
  // mean over content rows, not the CLS row alone
  Tape t;
  const EncoderGraph g = encoder_forward_graph(t, model, seq);
  const Tensor& state = t.value(g.layer_states.back());
  double mean0 = 0.0;
  for (size_t i = 0; i < seq.true_len; ++i) mean0 += state(i, 0);
  mean0 /= static_cast<double>(seq.true_len);
  CHECK(out.cls_vectors.back().at(0) == Catch::Approx(mean0).margin(1e-12));
}

TEST_CASE("export_attention document layout") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size(), 2, 32, 2, 8), 41);
  const std::string a = "本实用新型公开了一种固体绝缘开关柜结构。";
  const std::string b = "它包括隔离开关单元、接地装置和隔离插座装置。";
  const TokenSequence pair = encode_pair(a, b, vocab, 8);
  const nlohmann::json doc = export_attention(model, pair, vocab);

  const auto tokens = doc.at("tokens").get<std::vector<std::string>>();
  REQUIRE(tokens.size() == 8);
  CHECK(tokens[0] == "[CLS]");
  CHECK(std::count(tokens.begin(), tokens.end(), "[SEP]") == 2);

  REQUIRE(doc.at("layers").size() == 2);
  for (const auto& layer : doc.at("layers")) {
    REQUIRE(layer.at("heads").size() == 2);
    for (const auto& head : layer.at("heads")) {
      const auto& w = head.at("weights");
      REQUIRE(w.size() == 8);
      for (const auto& row : w) {
        REQUIRE(row.size() == 8);
        double sum = 0.0;
        for (size_t j = 0; j < pair.true_len; ++j) sum += row[j].get<double>();
        CHECK(std::fabs(sum - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("gradient flow through the full pretraining loss") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size(), 2, 32, 4, 16), 43);
  Rng mask_rng(7);
  const SentencePair sp{"固体绝缘开关柜", "隔离开关单元", 0};
  const MlmBatchItem item = make_pretrain_item(sp, vocab, 16, 0.2, mask_rng);

  auto build = [&](Tape& t) {
    const EncoderGraph g = encoder_forward_graph(t, model, item.input);
    const auto positions = item.predicted_positions();
    std::vector<int> targets;
    for (size_t p : positions) targets.push_back(item.labels[p]);
    Var mlm = t.cross_entropy(detail::mlm_logits(t, model, g.final_state, positions), targets);
    Var nsp = t.cross_entropy(detail::nsp_logits(t, model, g.final_state), {item.nsp_label});
    return t.add(mlm, nsp);
  };
  std::vector<Parameter*> sample = {&model.tok_emb,           &model.layers[0].wq,
                                    &model.layers[0].ff1_w,   &model.layers[1].wv,
                                    &model.layers[1].ln2_gain, &model.mlm_dec_w,
                                    &model.nsp_w,             &model.seg_emb};
  const auto res = oracles::check_gradients(sample, build, 6);
  INFO("pretrain-loss rel err " << res.max_rel_err << " over " << res.checked << " elements");
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("pretraining reduces the MLM loss and is bit-deterministic") {
  const auto corpus = generate_synthetic(SynthSpec{2, 2, 8, 10, 0.0}, 3);
  std::vector<std::string> texts;
  for (const auto& r : corpus) texts.push_back(r.abstract);
  const Vocab vocab = Vocab::build(texts);

  EncoderConfig cfg = toy_config(vocab.size(), 2, 32, 4, 32);
  PretrainOptions opt;
  opt.steps = 60;
  opt.batch_size = 8;
  opt.max_len = 32;
  opt.adam.lr = 1e-3;

  EncoderModel m1(cfg, 9);
  const auto h1 = pretrain(m1, texts, vocab, opt, 77);
  REQUIRE(h1.size() == 60);
  CHECK(h1.back().mlm_loss < h1.front().mlm_loss);

  EncoderModel m2(cfg, 9);
  const auto h2 = pretrain(m2, texts, vocab, opt, 77);
  for (size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].mlm_loss == h2[i].mlm_loss);  // bit-identical trajectory
    CHECK(h1[i].nsp_loss == h2[i].nsp_loss);
  }
}

TEST_CASE("a constant next-sentence head scores the label base rate") {
  const Vocab vocab = Vocab::build(toy_texts());
  EncoderModel model(toy_config(vocab.size()), 47);
  // force the head constant: zero weights, bias preferring label 0
  for (size_t i = 0; i < model.nsp_w.value().numel(); ++i) model.nsp_w.value().at(i) = 0.0;
  model.nsp_b.value().at(0) = 1.0;
  model.nsp_b.value().at(1) = 0.0;

  Rng rng(5);
  std::vector<MlmBatchItem> items;
  for (int i = 0; i < 10; ++i) {
    items.push_back(make_pretrain_item({"绝缘开关柜", "接地装置", 0}, vocab, 16, 0.15, rng));
  }
  CHECK(nsp_accuracy(model, items) == 1.0);  // all labels are is-next
}
