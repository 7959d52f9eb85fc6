#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "patcls/baselines.hpp"
#include "patcls/bert_cnn.hpp"
#include "patcls/errors.hpp"

namespace patcls {

/// Flat key=value run configuration. Unknown keys are rejected; the resolved
/// config is echoed into every run directory. Defaults follow the reference
/// experiment setup (lr 2e-5, batches 24/20, 20 epochs, L=200, 300-dim
/// baseline embeddings); desk-scale runs override them.
struct RunConfig {
  // optimization
  double lr = 2e-5;
  size_t batch = 24;
  size_t epochs = 20;
  // sequence handling
  size_t max_len = 200;
  size_t n_top_layers = 4;
  // encoder
  size_t n_layers = 12;
  size_t hidden = 768;
  size_t n_heads = 12;
  size_t ff_dim = 3072;
  size_t max_positions = 512;
  double dropout = 0.1;
  bool mean_pool = false;
  // head
  size_t n_filters = 32;
  size_t filter_rows = 3;
  // baselines
  size_t embed_dim = 300;
  size_t rnn_hidden = 128;
  size_t baseline_batch = 20;
  // corpus
  double split_ratio = 0.9;
  size_t min_freq = 1;
  // pretraining
  size_t pretrain_steps = 500;
  double mask_rate = 0.15;
  // run
  uint64_t seed = 42;
  size_t threads = 1;
  std::string model = "bert-cnn";  // bert-cnn | cnn | rnn

  void apply(std::string_view key, const std::string& value) {
    const auto as_size = [&]() -> size_t {
      try {
        return std::stoull(value);
      } catch (...) {
        throw ConfigError("config key '" + std::string(key) + "': '" + value + "' is not an integer");
      }
    };
    const auto as_double = [&]() -> double {
      try {
        return std::stod(value);
      } catch (...) {
        throw ConfigError("config key '" + std::string(key) + "': '" + value + "' is not a number");
      }
    };
    const auto as_bool = [&]() -> bool {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw ConfigError("config key '" + std::string(key) + "': '" + value + "' is not a boolean");
    };
    if (key == "lr") lr = as_double();
    else if (key == "batch") batch = as_size();
    else if (key == "epochs") epochs = as_size();
    else if (key == "max_len") max_len = as_size();
    else if (key == "n_top_layers") n_top_layers = as_size();
    else if (key == "n_layers") n_layers = as_size();
    else if (key == "hidden") hidden = as_size();
    else if (key == "n_heads") n_heads = as_size();
    else if (key == "ff_dim") ff_dim = as_size();
    else if (key == "max_positions") max_positions = as_size();
    else if (key == "dropout") dropout = as_double();
    else if (key == "mean_pool") mean_pool = as_bool();
    else if (key == "n_filters") n_filters = as_size();
    else if (key == "filter_rows") filter_rows = as_size();
    else if (key == "embed_dim") embed_dim = as_size();
    else if (key == "rnn_hidden") rnn_hidden = as_size();
    else if (key == "baseline_batch") baseline_batch = as_size();
    else if (key == "split_ratio") split_ratio = as_double();
    else if (key == "min_freq") min_freq = as_size();
    else if (key == "pretrain_steps") pretrain_steps = as_size();
    else if (key == "mask_rate") mask_rate = as_double();
    else if (key == "seed") seed = as_size();
    else if (key == "threads") threads = as_size();
    else if (key == "model") {
      if (value != "bert-cnn" && value != "cnn" && value != "rnn")
        throw ConfigError("config key 'model' must be bert-cnn, cnn or rnn, got '" + value + "'");
      model = value;
    } else {
      throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
  }

  void apply_assignment(std::string_view line) {
    const size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("expected key=value, got '" + std::string(line) + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("expected key=value, got '" + std::string(line) + "'");
    apply(key, value);
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    RunConfig cfg;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string stripped = trim(line.substr(0, line.find('#')));
      if (stripped.empty()) continue;
      try {
        cfg.apply_assignment(stripped);
      } catch (const ConfigError& e) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return cfg;
  }

  /// Canonical resolved form, key = value per line.
  std::string echo() const {
    std::ostringstream out;
    const auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    out << "lr = " << num(lr) << "\n";
    out << "batch = " << batch << "\n";
    out << "epochs = " << epochs << "\n";
    out << "max_len = " << max_len << "\n";
    out << "n_top_layers = " << n_top_layers << "\n";
    out << "n_layers = " << n_layers << "\n";
    out << "hidden = " << hidden << "\n";
    out << "n_heads = " << n_heads << "\n";
    out << "ff_dim = " << ff_dim << "\n";
    out << "max_positions = " << max_positions << "\n";
    out << "dropout = " << num(dropout) << "\n";
    out << "mean_pool = " << (mean_pool ? "true" : "false") << "\n";
    out << "n_filters = " << n_filters << "\n";
    out << "filter_rows = " << filter_rows << "\n";
    out << "embed_dim = " << embed_dim << "\n";
    out << "rnn_hidden = " << rnn_hidden << "\n";
    out << "baseline_batch = " << baseline_batch << "\n";
    out << "split_ratio = " << num(split_ratio) << "\n";
    out << "min_freq = " << min_freq << "\n";
    out << "pretrain_steps = " << pretrain_steps << "\n";
    out << "mask_rate = " << num(mask_rate) << "\n";
    out << "seed = " << seed << "\n";
    out << "threads = " << threads << "\n";
    out << "model = " << model << "\n";
    return std::move(out).str();
  }

  EncoderConfig encoder_config(size_t vocab_size = 0) const {
    EncoderConfig c;
    c.n_layers = n_layers;
    c.hidden = hidden;
    c.n_heads = n_heads;
    c.ff_dim = ff_dim;
    c.vocab_size = vocab_size;
    c.max_positions = std::max(max_positions, max_len);
    c.dropout_rate = dropout;
    c.mean_pool = mean_pool;
    return c;
  }

  BertCnnConfig bert_cnn_config() const {
    BertCnnConfig c;
    c.encoder = encoder_config();
    c.head.n_filters = n_filters;
    c.head.filter_rows = filter_rows;
    c.head.filter_cols = n_top_layers;
    c.finetune.lr = lr;
    c.finetune.batch_size = batch;
    c.finetune.epochs = epochs;
    c.finetune.max_len = max_len;
    c.finetune.n_top_layers = n_top_layers;
    c.min_freq = min_freq;
    return c;
  }

  BaselineConfig baseline_config() const {
    BaselineConfig c;
    c.kind = model == "rnn" ? BaselineConfig::Kind::Rnn : BaselineConfig::Kind::Cnn;
    c.embed_dim = embed_dim;
    c.hidden = rnn_hidden;
    c.n_filters = n_filters;
    c.max_len = max_len;
    c.min_freq = min_freq;
    c.lr = lr;
    c.batch_size = baseline_batch;
    c.epochs = epochs;
    return c;
  }
};

}  // namespace patcls
