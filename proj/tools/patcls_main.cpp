// Command-line surface: corpus preparation, pretraining, flat and
// hierarchical training, evaluation, inference, attention export and the
// layer-count sweep. Every command is deterministic for a fixed config+seed.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patcls/corpus.hpp"
#include "patcls/hierarchy.hpp"
#include "patcls/model_io.hpp"
#include "patcls/pretrain.hpp"
#include "patcls/run_config.hpp"
#include "patcls/synthetic.hpp"

namespace fs = std::filesystem;
using namespace patcls;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value run config file");
  cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set lr=0.001")->take_all();
  cmd->add_option("--seed", opts.seed, "override the config seed");
}

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : RunConfig::from_file(opts.config_path);
  for (const auto& s : opts.overrides) cfg.apply_assignment(s);
  if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
  return cfg;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
}

void prepare_run_dir(const std::string& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_text_file(dir + "/config.echo", cfg.echo());
}

struct PretrainedBundle {
  std::shared_ptr<Vocab> vocab;
  std::shared_ptr<EncoderModel> encoder;
};

PretrainedBundle load_pretrained(const std::string& dir) {
  PretrainedBundle out;
  out.vocab = std::make_shared<Vocab>(Vocab::load(dir + "/vocab.json"));
  std::ifstream cfg_in(dir + "/encoder_config.json", std::ios::binary);
  if (!cfg_in) throw IoError("cannot open " + dir + "/encoder_config.json");
  nlohmann::json j;
  cfg_in >> j;
  out.encoder = std::make_shared<EncoderModel>(detail::encoder_config_from_json(j), 0);
  load_checkpoint(out.encoder->parameters(), dir + "/encoder.bin", dir + "/encoder.json");
  return out;
}

ClassifierFactory make_factory(const RunConfig& cfg, const std::string& init_dir) {
  if (cfg.model == "bert-cnn") {
    if (init_dir.empty()) return bert_cnn_factory(cfg.bert_cnn_config());
    const PretrainedBundle pre = load_pretrained(init_dir);
    return bert_cnn_factory(cfg.bert_cnn_config(), pre.vocab, pre.encoder);
  }
  return baseline_factory(cfg.baseline_config());
}

std::vector<std::string> label_names(const LabelTaxonomy& tax, const std::string& level) {
  std::vector<std::string> names;
  if (level == "section") {
    names = tax.sections();
  } else {
    for (const auto& sec : tax.sections())
      for (const auto& cls : tax.classes_in(sec)) names.push_back(sec + cls);
  }
  return names;
}

std::vector<LabeledExample> to_examples(const std::vector<PatentRecord>& records,
                                        const LabelTaxonomy& tax, const std::string& level,
                                        const std::vector<std::string>& names) {
  std::vector<LabeledExample> out;
  for (const auto& r : records) {
    const std::string want = level == "section" ? r.ipc.section_label() : r.ipc.class_label();
    int label = -1;
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == want) {
        label = static_cast<int>(i);
        break;
      }
    if (label < 0) throw LabelOutOfRange("label " + want + " missing from the label list");
    out.push_back({r.abstract, label});
  }
  return out;
}

// shared by train-flat and layer-sweep: train one flat classifier on a fixed
// split and return its final held-out accuracy
double train_flat_once(const RunConfig& cfg, const std::string& init_dir,
                       const std::vector<LabeledExample>& train_ex,
                       const std::vector<LabeledExample>& eval_ex, int n_classes,
                       std::unique_ptr<TextClassifier>* model_out,
                       std::vector<EpochMetrics>* history_out) {
  auto clf = make_factory(cfg, init_dir)(n_classes, cfg.seed);
  auto history = clf->train(train_ex, eval_ex);
  const double acc = history.empty() || !history.back().has_eval ? 0.0 : history.back().eval_accuracy;
  if (history_out) *history_out = std::move(history);
  if (model_out) *model_out = std::move(clf);
  return acc;
}

void run_ingest(const std::string& input, const std::string& output, const std::string& encoding,
                const std::string& abstract_col, const std::string& label_col, char delimiter) {
  IngestOptions opt;
  if (encoding == "gbk")
    opt.encoding = Encoding::Gbk;
  else if (encoding == "utf8")
    opt.encoding = Encoding::Utf8;
  else
    throw ConfigError("encoding must be utf8 or gbk, got '" + encoding + "'");
  opt.abstract_column = abstract_col;
  opt.label_column = label_col;
  opt.delimiter = delimiter;
  const IngestResult res = ingest_csv(input, opt);
  write_jsonl(res.records, output);
  std::cout << "ingested " << res.records.size() << " records, rejected " << res.rejected << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patcls: hierarchical patent abstract classification"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "convert a labeled CSV into the JSONL corpus format");
  std::string in_path, out_path, encoding = "utf8", abstract_col = "摘要", label_col = "专利分类";
  char delimiter = ',';
  ingest->add_option("--input", in_path, "CSV file")->required();
  ingest->add_option("--output", out_path, "JSONL output path")->required();
  ingest->add_option("--encoding", encoding, "utf8 or gbk (default utf8)");
  ingest->add_option("--abstract-col", abstract_col, "abstract column header");
  ingest->add_option("--label-col", label_col, "classification column header");
  ingest->add_option("--delimiter", delimiter, "field delimiter (default ,)");
  ingest->callback(
      [&]() { run_ingest(in_path, out_path, encoding, abstract_col, label_col, delimiter); });

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic keyword-separable corpus");
  std::string synth_out;
  SynthSpec spec;
  uint64_t synth_seed = 42;
  synth->add_option("--output", synth_out, "JSONL output path")->required();
  synth->add_option("--sections", spec.sections, "number of sections (1-8)");
  synth->add_option("--classes", spec.classes_per_section, "classes per section");
  synth->add_option("--docs", spec.docs_per_class, "documents per class");
  synth->add_option("--doc-len", spec.doc_len, "tokens per document");
  synth->add_option("--overlap", spec.vocab_overlap, "shared-vocabulary fraction [0,1]");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->callback([&]() {
    const auto records = generate_synthetic(spec, synth_seed);
    write_jsonl(records, synth_out);
    std::cout << "generated " << records.size() << " records\n";
  });

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "masked-LM + next-sentence pretraining on a corpus");
  std::string pre_corpus, pre_out;
  CommonOpts pre_common;
  pre->add_option("--corpus", pre_corpus, "JSONL corpus")->required();
  pre->add_option("--out", pre_out, "run output directory")->required();
  add_common(pre, pre_common);
  pre->callback([&]() {
    const RunConfig cfg = resolve_config(pre_common);
    prepare_run_dir(pre_out, cfg);
    const auto records = read_jsonl(pre_corpus);
    std::vector<std::string> texts;
    for (const auto& r : records) texts.push_back(r.abstract);
    const Vocab vocab = Vocab::build(texts, cfg.min_freq);
    EncoderModel model(cfg.encoder_config(vocab.size()), cfg.seed);
    PretrainOptions opt;
    opt.steps = cfg.pretrain_steps;
    opt.batch_size = cfg.batch;
    opt.max_len = cfg.max_len;
    opt.mask_rate = cfg.mask_rate;
    opt.adam.lr = cfg.lr;
    const auto history = pretrain(model, texts, vocab, opt, cfg.seed);

    vocab.save(pre_out + "/vocab.json");
    write_text_file(pre_out + "/encoder_config.json",
                    detail::encoder_config_to_json(model.config()).dump(2) + "\n");
    std::vector<const Parameter*> params;
    for (Parameter* p : model.parameters()) params.push_back(p);
    save_checkpoint(params, pre_out + "/encoder.bin", pre_out + "/encoder.json");
    std::ofstream metrics(pre_out + "/pretrain_metrics.jsonl", std::ios::binary);
    for (size_t i = 0; i < history.size(); ++i)
      metrics << nlohmann::json{{"step", i},
                                {"mlm_loss", history[i].mlm_loss},
                                {"nsp_loss", history[i].nsp_loss}}
                     .dump()
              << "\n";
    std::cout << "pretrained " << history.size() << " steps; mlm loss " << history.front().mlm_loss
              << " -> " << history.back().mlm_loss << "\n";
  });

  // train-flat
  auto* flat = app.add_subcommand("train-flat", "train one flat classifier at a label level");
  std::string flat_corpus, flat_out, flat_level = "section", flat_init;
  CommonOpts flat_common;
  flat->add_option("--corpus", flat_corpus, "JSONL corpus")->required();
  flat->add_option("--out", flat_out, "run output directory")->required();
  flat->add_option("--level", flat_level, "label level: section or class")
      ->check(CLI::IsMember({"section", "class"}));
  flat->add_option("--init", flat_init, "pretraining run directory to start from");
  add_common(flat, flat_common);
  flat->callback([&]() {
    const RunConfig cfg = resolve_config(flat_common);
    prepare_run_dir(flat_out, cfg);
    const auto records = read_jsonl(flat_corpus);
    const LabelTaxonomy tax = build_taxonomy(records);
    const auto names = label_names(tax, flat_level);
    if (names.size() < 2) throw EmptyCorpus("need at least two labels at level " + flat_level);
    const DatasetSplit parts = split(records, cfg.split_ratio, cfg.seed);
    const auto train_ex = to_examples(parts.train, tax, flat_level, names);
    const auto eval_ex = to_examples(parts.test, tax, flat_level, names);

    std::unique_ptr<TextClassifier> model;
    std::vector<EpochMetrics> history;
    const double acc = train_flat_once(cfg, flat_init, train_ex, eval_ex,
                                       static_cast<int>(names.size()), &model, &history);
    fs::create_directories(flat_out + "/model");
    model->save(flat_out + "/model");
    write_text_file(flat_out + "/labels.json", nlohmann::json(names).dump(2) + "\n");
    write_metrics_jsonl(history, flat_out + "/metrics.jsonl");
    write_text_file(flat_out + "/summary.json",
                    nlohmann::json{{"model", cfg.model},
                                   {"level", flat_level},
                                   {"n_classes", names.size()},
                                   {"eval_accuracy", acc}}
                            .dump(2) +
                        "\n");
    std::cout << "train-flat done; eval accuracy " << acc << "\n";
  });

  // train-hier
  auto* hier = app.add_subcommand("train-hier", "train the stacked two-level classifier");
  std::string hier_corpus, hier_out, hier_init;
  CommonOpts hier_common;
  hier->add_option("--corpus", hier_corpus, "JSONL corpus")->required();
  hier->add_option("--out", hier_out, "run output directory")->required();
  hier->add_option("--init", hier_init, "pretraining run directory to start from");
  add_common(hier, hier_common);
  hier->callback([&]() {
    const RunConfig cfg = resolve_config(hier_common);
    prepare_run_dir(hier_out, cfg);
    const auto records = read_jsonl(hier_corpus);
    const LabelTaxonomy tax = build_taxonomy(records);
    const DatasetSplit parts = split(records, cfg.split_ratio, cfg.seed);
    const HierarchicalModel model =
        train_hierarchical(parts.train, tax, make_factory(cfg, hier_init), cfg.seed, cfg.threads);
    save_hierarchical(model, hier_out + "/model");
    fs::create_directories(hier_out + "/metrics");
    for (const auto& [node, history] : model.history)
      write_metrics_jsonl(history, hier_out + "/metrics/" + node + ".jsonl");
    const HierarchicalMetrics metrics = evaluate(model, parts.test, tax);
    write_text_file(hier_out + "/report.json", metrics.to_json().dump(2) + "\n");
    write_text_file(hier_out + "/summary.csv",
                    HierarchicalMetrics::csv_header() + "\n" + metrics.csv_row() + "\n");
    std::cout << "train-hier done; acc_l1 " << metrics.acc_l1 << ", acc_l2_avg " << metrics.acc_l2_avg
              << ", acc_estimated " << metrics.acc_estimated << ", acc_empirical "
              << metrics.acc_empirical << "\n";
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained hierarchical run on a corpus");
  std::string eval_model, eval_corpus, eval_out;
  bool table2 = false;
  eval_cmd->add_option("--model", eval_model, "train-hier output directory");
  eval_cmd->add_option("--corpus", eval_corpus, "JSONL corpus to evaluate on");
  eval_cmd->add_option("--out", eval_out, "directory for report.json / summary.csv");
  eval_cmd->add_flag("--table2-check", table2,
                     "recompute the published weighted-accuracy figures from embedded constants");
  eval_cmd->callback([&]() {
    if (table2) {
      const ReferenceCheck check = reference_check();
      std::printf("Acc(L2_avg) = %.1f\n", check.acc_l2_avg_pct);
      std::printf("Acc(X)      = %.1f\n", check.acc_estimated_pct);
      std::printf("full-precision: Acc(L2_avg) = %.4f, Acc(X) = %.4f\n", check.acc_l2_avg_pct,
                  check.acc_estimated_full_pct);
      return;
    }
    if (eval_model.empty() || eval_corpus.empty())
      throw ConfigError("eval needs --model and --corpus (or --table2-check)");
    const std::string model_dir = is_hierarchical_dir(eval_model) ? eval_model : eval_model + "/model";
    const HierarchicalModel model = load_hierarchical(model_dir);
    const auto records = read_jsonl(eval_corpus);
    const HierarchicalMetrics metrics = evaluate(model, records, model.taxonomy);
    const std::string report = metrics.to_json().dump(2) + "\n";
    if (!eval_out.empty()) {
      fs::create_directories(eval_out);
      write_text_file(eval_out + "/report.json", report);
      write_text_file(eval_out + "/summary.csv",
                      HierarchicalMetrics::csv_header() + "\n" + metrics.csv_row() + "\n");
    }
    std::cout << report;
  });

  // predict
  auto* pred = app.add_subcommand("predict", "classify one abstract with a trained run");
  std::string pred_model, pred_text;
  pred->add_option("--model", pred_model, "train-hier or train-flat output directory")->required();
  pred->add_option("--text", pred_text, "abstract text")->required();
  pred->callback([&]() {
    const std::string base = fs::exists(pred_model + "/model") ? pred_model + "/model" : pred_model;
    if (is_hierarchical_dir(base)) {
      const HierarchicalModel model = load_hierarchical(base);
      const HierPrediction p = predict_hierarchical(model, pred_text);
      std::cout << nlohmann::json{{"section", p.section},
                                  {"class", p.class_num},
                                  {"label", p.section + p.class_num}}
                       .dump()
                << "\n";
      return;
    }
    auto clf = load_classifier(base);
    const Prediction p = clf->predict(pred_text);
    nlohmann::json out{{"label_index", p.label}, {"probs", p.probs}};
    const std::string labels_path =
        (fs::exists(pred_model + "/labels.json") ? pred_model : base) + "/labels.json";
    if (fs::exists(labels_path)) {
      std::ifstream lin(labels_path, std::ios::binary);
      nlohmann::json names;
      lin >> names;
      out["label"] = names.at(static_cast<size_t>(p.label)).get<std::string>();
    }
    std::cout << out.dump() << "\n";
  });

  // export-attention
  auto* att = app.add_subcommand("export-attention", "dump post-softmax attention weights as JSON");
  std::string att_a, att_b, att_out_path, att_model;
  CommonOpts att_common;
  att->add_option("--text-a", att_a, "first sentence")->required();
  att->add_option("--text-b", att_b, "optional second sentence (pair encoding)");
  att->add_option("--output", att_out_path, "JSON output path")->required();
  att->add_option("--model", att_model, "pretraining run directory (omit for a fresh seeded encoder)");
  add_common(att, att_common);
  att->callback([&]() {
    const RunConfig cfg = resolve_config(att_common);
    std::unique_ptr<Vocab> vocab;
    std::unique_ptr<EncoderModel> model;
    if (!att_model.empty()) {
      PretrainedBundle loaded = load_pretrained(att_model);
      vocab = std::make_unique<Vocab>(*loaded.vocab);
      model = std::make_unique<EncoderModel>(*loaded.encoder);
    } else {
      vocab = std::make_unique<Vocab>(Vocab::build({att_a, att_b.empty() ? att_a : att_b}));
      model = std::make_unique<EncoderModel>(cfg.encoder_config(vocab->size()), cfg.seed);
    }
    const size_t la = utf8_chars(att_a).size(), lb = utf8_chars(att_b).size();
    const size_t fit = att_b.empty() ? la + 2 : la + lb + 3;
    const size_t L = std::min(cfg.max_len, std::max<size_t>(4, fit));
    const TokenSequence seq =
        att_b.empty() ? encode(att_a, *vocab, L) : encode_pair(att_a, att_b, *vocab, L);
    const nlohmann::json doc = export_attention(*model, seq, *vocab);
    write_text_file(att_out_path, doc.dump() + "\n");
    std::cout << "wrote attention for " << doc.at("layers").size() << " layers x "
              << doc.at("layers")[0].at("heads").size() << " heads\n";
  });

  // layer-sweep
  auto* sweep = app.add_subcommand("layer-sweep", "held-out accuracy for every n_top_layers value");
  std::string sweep_corpus, sweep_out, sweep_level = "section", sweep_init;
  CommonOpts sweep_common;
  sweep->add_option("--corpus", sweep_corpus, "JSONL corpus")->required();
  sweep->add_option("--out", sweep_out, "run output directory")->required();
  sweep->add_option("--level", sweep_level, "label level: section or class")
      ->check(CLI::IsMember({"section", "class"}));
  sweep->add_option("--init", sweep_init, "pretraining run directory to start from");
  add_common(sweep, sweep_common);
  sweep->callback([&]() {
    RunConfig cfg = resolve_config(sweep_common);
    if (cfg.model != "bert-cnn") throw ConfigError("layer-sweep applies to the bert-cnn model");
    prepare_run_dir(sweep_out, cfg);
    const auto records = read_jsonl(sweep_corpus);
    const LabelTaxonomy tax = build_taxonomy(records);
    const auto names = label_names(tax, sweep_level);
    if (names.size() < 2) throw EmptyCorpus("need at least two labels at level " + sweep_level);
    // one split, reused for every sweep point
    const DatasetSplit parts = split(records, cfg.split_ratio, cfg.seed);
    const auto train_ex = to_examples(parts.train, tax, sweep_level, names);
    const auto eval_ex = to_examples(parts.test, tax, sweep_level, names);

    std::ofstream rows(sweep_out + "/sweep.jsonl", std::ios::binary);
    std::string csv = "n,accuracy\n";
    for (size_t n = 1; n <= cfg.n_layers; ++n) {
      RunConfig point = cfg;
      point.n_top_layers = n;
      const double acc = train_flat_once(point, sweep_init, train_ex, eval_ex,
                                         static_cast<int>(names.size()), nullptr, nullptr);
      rows << nlohmann::json{{"n", n}, {"accuracy", acc}}.dump() << "\n";
      char line[64];
      std::snprintf(line, sizeof(line), "%zu,%.6f\n", n, acc);
      csv += line;
      std::cout << "n=" << n << " accuracy=" << acc << "\n";
    }
    write_text_file(sweep_out + "/sweep.csv", csv);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
