#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "patcls/baselines.hpp"
#include "patcls/bert_cnn.hpp"
#include "patcls/hierarchy.hpp"

namespace patcls {

/// Dispatches on meta.json's "kind".
inline std::unique_ptr<TextClassifier> load_classifier(const std::string& dir) {
  std::ifstream in(dir + "/meta.json", std::ios::binary);
  if (!in) throw IoError("cannot open " + dir + "/meta.json");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad meta.json in " + dir + ": " + e.what());
  }
  const std::string kind = meta.at("kind").get<std::string>();
  if (kind == "bert-cnn") return BertCnnClassifier::load(dir);
  if (kind == "cnn" || kind == "rnn") return BaselineClassifier::load(dir);
  if (kind == "constant") return std::make_unique<ConstantClassifier>();
  throw ConfigError("unknown classifier kind '" + kind + "' in " + dir);
}

inline void save_hierarchical(const HierarchicalModel& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream tax(dir + "/taxonomy.json", std::ios::binary);
  if (!tax) throw IoError("cannot write " + dir + "/taxonomy.json");
  tax << model.taxonomy.to_json().dump(2) << "\n";
  fs::create_directories(dir + "/l1");
  model.l1->save(dir + "/l1");
  for (const auto& [sec, clf] : model.l2_by_section) {
    const std::string sub = dir + "/l2_" + sec;
    fs::create_directories(sub);
    clf->save(sub);
  }
}

inline HierarchicalModel load_hierarchical(const std::string& dir) {
  std::ifstream tax_in(dir + "/taxonomy.json", std::ios::binary);
  if (!tax_in) throw IoError("cannot open " + dir + "/taxonomy.json (not a hierarchical model dir?)");
  nlohmann::json tax_json;
  try {
    tax_in >> tax_json;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad taxonomy.json in " + dir + ": " + e.what());
  }
  HierarchicalModel model;
  model.taxonomy = LabelTaxonomy::from_json(tax_json);
  model.l1 = load_classifier(dir + "/l1");
  for (const auto& sec : model.taxonomy.sections())
    model.l2_by_section[sec] = load_classifier(dir + "/l2_" + sec);
  return model;
}

inline bool is_hierarchical_dir(const std::string& dir) {
  return std::filesystem::exists(dir + "/taxonomy.json");
}

}  // namespace patcls
