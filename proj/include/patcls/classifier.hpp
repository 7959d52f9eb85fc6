#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patcls/autograd.hpp"
#include "patcls/errors.hpp"

namespace patcls {

struct LabeledExample {
  std::string text;
  int label = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
  bool has_eval = false;
};

struct Prediction {
  int label = 0;
  std::vector<double> probs;
};

// Lowest index wins ties.
inline int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

/// The contract every level-1/level-2 classifier satisfies; the hierarchy is
/// agnostic to what sits behind it (BERT-CNN or a baseline).
class TextClassifier {
 public:
  virtual ~TextClassifier() = default;

  virtual std::vector<EpochMetrics> train(const std::vector<LabeledExample>& train_set,
                                          const std::vector<LabeledExample>& eval_set) = 0;
  virtual Prediction predict(const std::string& text) const = 0;
  virtual int n_classes() const = 0;
  virtual std::string kind() const = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual void save(const std::string& dir) const = 0;
};

using ClassifierFactory = std::function<std::unique_ptr<TextClassifier>(int n_classes, uint64_t seed)>;

/// Degenerate single-class branch: always predicts its only class.
class ConstantClassifier : public TextClassifier {
 public:
  std::vector<EpochMetrics> train(const std::vector<LabeledExample>&,
                                  const std::vector<LabeledExample>&) override {
    return {};
  }
  Prediction predict(const std::string&) const override { return Prediction{0, {1.0}}; }
  int n_classes() const override { return 1; }
  std::string kind() const override { return "constant"; }
  std::vector<Parameter*> parameters() override { return {}; }
  void save(const std::string& dir) const override;
};

inline void require_labels_in_range(const std::vector<LabeledExample>& set, int n_classes) {
  for (const auto& ex : set)
    if (ex.label < 0 || ex.label >= n_classes)
      throw LabelOutOfRange("label " + std::to_string(ex.label) + " outside [0," +
                            std::to_string(n_classes) + ")");
}

/// Per-epoch metrics as JSON Lines: {"epoch", "split", "loss", "accuracy"}.
inline void write_metrics_jsonl(const std::vector<EpochMetrics>& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& m : history) {
    nlohmann::json train{{"epoch", m.epoch}, {"split", "train"}, {"loss", m.train_loss},
                         {"accuracy", m.train_accuracy}};
    out << train.dump() << "\n";
    if (m.has_eval) {
      nlohmann::json eval{{"epoch", m.epoch}, {"split", "eval"}, {"loss", m.eval_loss},
                          {"accuracy", m.eval_accuracy}};
      out << eval.dump() << "\n";
    }
  }
}

inline void ConstantClassifier::save(const std::string& dir) const {
  std::ofstream out(dir + "/meta.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + dir + "/meta.json");
  out << nlohmann::json{{"kind", "constant"}, {"n_classes", 1}}.dump(2) << "\n";
}

}  // namespace patcls
