#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "patcls/errors.hpp"
#include "patcls/rng.hpp"
#include "patcls/text.hpp"

namespace patcls {

/// One parsed IPC label, e.g. "A01D42/04": section A, class 01, subclass D,
/// group 42/04. Level-2 labels truncated after the class ("B65") are valid.
struct IpcCode {
  char section = '?';
  std::string class_num;               // exactly two digits
  std::optional<char> subclass;        // A-Z
  std::optional<std::string> group;    // "42/04"

  std::string section_label() const { return std::string(1, section); }
  std::string class_label() const { return section + class_num; }

  std::string str() const {
    std::string s = section_label() + class_num;
    if (subclass) {
      s += *subclass;
      if (group) s += *group;
    }
    return s;
  }

  friend bool operator==(const IpcCode& a, const IpcCode& b) {
    return a.section == b.section && a.class_num == b.class_num && a.subclass == b.subclass &&
           a.group == b.group;
  }
};

// Accepted grammar: ^[A-H][0-9]{2}([A-Z]([0-9]{1,4}/[0-9]{2,})?)?$
inline IpcCode parse_ipc(std::string_view code) {
  static const std::regex re("^[A-H][0-9]{2}([A-Z]([0-9]{1,4}/[0-9]{2,})?)?$");
  const std::string s(code);
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw MalformedIpc("not a valid IPC code: '" + s + "'");
  IpcCode out;
  out.section = s[0];
  out.class_num = s.substr(1, 2);
  if (m[1].matched) {
    out.subclass = *m[1].first;
    if (m[2].matched) out.group = m[2].str();
  }
  return out;
}

inline std::string format_ipc(const IpcCode& code) { return code.str(); }

struct PatentRecord {
  std::string id;
  std::string abstract;
  IpcCode ipc;
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

enum class Encoding { Utf8, Gbk };

struct IngestOptions {
  Encoding encoding = Encoding::Utf8;
  std::string abstract_column = "摘要";
  std::string label_column = "专利分类";
  char delimiter = ',';
};

struct IngestResult {
  std::vector<PatentRecord> records;
  size_t rejected = 0;
};

namespace detail {

// RFC-4180 style parse of a whole buffer: quoted fields may contain the
// delimiter, doubled quotes and newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text, char delim) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
      any = true;
    } else if (c == delim) {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        field.clear();
        rows.push_back(std::move(row));
        row.clear();
        any = false;
      }
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace detail

/// Reads a labeled CSV (header required). Rows whose label is not strict IPC
/// or whose abstract is blank are counted in `rejected` and dropped.
inline IngestResult ingest_csv(const std::string& path, const IngestOptions& opt = {}) {
  std::string bytes = detail::read_file_bytes(path);
  std::string text = opt.encoding == Encoding::Gbk ? gbk_to_utf8(bytes) : std::move(bytes);
  if (opt.encoding == Encoding::Utf8) {
    if (text.size() >= 3 && text.compare(0, 3, "\xef\xbb\xbf") == 0) text.erase(0, 3);
    if (!utf8_valid(text)) throw DecodeError(path + " is not valid UTF-8");
  }
  const auto rows = detail::parse_csv(text, opt.delimiter);
  if (rows.empty()) throw MissingColumn(path + " has no header row");
  const auto& header = rows[0];
  auto col_of = [&](const std::string& name) -> size_t {
    for (size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    throw MissingColumn("column '" + name + "' not found in " + path);
  };
  const size_t abstract_col = col_of(opt.abstract_column);
  const size_t label_col = col_of(opt.label_column);

  IngestResult out;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() <= std::max(abstract_col, label_col)) {
      ++out.rejected;
      continue;
    }
    const std::string abstract = trim(row[abstract_col]);
    const std::string label = trim(row[label_col]);
    if (abstract.empty()) {
      ++out.rejected;
      continue;
    }
    try {
      PatentRecord rec{"row-" + std::to_string(r), abstract, parse_ipc(label)};
      out.records.push_back(std::move(rec));
    } catch (const MalformedIpc&) {
      ++out.rejected;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical corpus format: JSON Lines {id, abstract, ipc}
// ---------------------------------------------------------------------------

inline void write_jsonl(const std::vector<PatentRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["abstract"] = r.abstract;
    j["ipc"] = r.ipc.str();
    out << j.dump() << "\n";
  }
  out.flush();
  if (!out) throw IoError("short write to " + path);
}

inline std::vector<PatentRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<PatentRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    PatentRecord rec;
    rec.id = j.value("id", "line-" + std::to_string(lineno));
    rec.abstract = j.at("abstract").get<std::string>();
    rec.ipc = parse_ipc(j.at("ipc").get<std::string>());
    if (trim(rec.abstract).empty())
      throw IoError(path + ":" + std::to_string(lineno) + ": blank abstract");
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Taxonomy
// ---------------------------------------------------------------------------

/// Two-level label tree over the records: sections (level 1) and the classes
/// within each section (level 2), with per-node record counts.
class LabelTaxonomy {
 public:
  static LabelTaxonomy build(const std::vector<PatentRecord>& records) {
    if (records.empty()) throw EmptyCorpus("cannot build a taxonomy from zero records");
    LabelTaxonomy tax;
    std::map<std::string, std::map<std::string, size_t>> tree;  // section -> class_num -> count
    for (const auto& r : records) ++tree[r.ipc.section_label()][r.ipc.class_num];
    for (auto& [sec, classes] : tree) {
      tax.sections_.push_back(sec);
      size_t sec_count = 0;
      std::vector<std::string> cls_list;
      for (auto& [cls, count] : classes) {
        cls_list.push_back(cls);
        tax.class_counts_[sec + cls] = count;
        sec_count += count;
      }
      tax.classes_by_section_[sec] = std::move(cls_list);
      tax.section_counts_[sec] = sec_count;
      tax.total_ += sec_count;
    }
    return tax;
  }

  const std::vector<std::string>& sections() const { return sections_; }
  size_t n_sections() const { return sections_.size(); }

  const std::vector<std::string>& classes_in(const std::string& section) const {
    auto it = classes_by_section_.find(section);
    if (it == classes_by_section_.end())
      throw LabelOutOfRange("unknown section '" + section + "'");
    return it->second;
  }

  size_t n_classes() const {
    size_t n = 0;
    for (const auto& [sec, cls] : classes_by_section_) n += cls.size();
    return n;
  }

  int section_index(std::string_view section) const {
    for (size_t i = 0; i < sections_.size(); ++i)
      if (sections_[i] == section) return static_cast<int>(i);
    return -1;
  }

  int class_index(const std::string& section, std::string_view class_num) const {
    const auto& cls = classes_in(section);
    for (size_t i = 0; i < cls.size(); ++i)
      if (cls[i] == class_num) return static_cast<int>(i);
    return -1;
  }

  size_t section_count(const std::string& section) const {
    auto it = section_counts_.find(section);
    return it == section_counts_.end() ? 0 : it->second;
  }

  size_t class_count(const std::string& section, const std::string& class_num) const {
    auto it = class_counts_.find(section + class_num);
    return it == class_counts_.end() ? 0 : it->second;
  }

  size_t total() const { return total_; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["sections"] = sections_;
    j["classes_by_section"] = classes_by_section_;
    j["section_counts"] = section_counts_;
    j["class_counts"] = class_counts_;
    j["total"] = total_;
    return j;
  }

  static LabelTaxonomy from_json(const nlohmann::json& j) {
    LabelTaxonomy tax;
    tax.sections_ = j.at("sections").get<std::vector<std::string>>();
    tax.classes_by_section_ = j.at("classes_by_section").get<std::map<std::string, std::vector<std::string>>>();
    tax.section_counts_ = j.at("section_counts").get<std::map<std::string, size_t>>();
    tax.class_counts_ = j.at("class_counts").get<std::map<std::string, size_t>>();
    tax.total_ = j.at("total").get<size_t>();
    return tax;
  }

 private:
  std::vector<std::string> sections_;
  std::map<std::string, std::vector<std::string>> classes_by_section_;
  std::map<std::string, size_t> section_counts_;
  std::map<std::string, size_t> class_counts_;
  size_t total_ = 0;
};

inline LabelTaxonomy build_taxonomy(const std::vector<PatentRecord>& records) {
  return LabelTaxonomy::build(records);
}

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<PatentRecord> train;
  std::vector<PatentRecord> test;
  uint64_t seed = 0;
};

/// Shuffle-then-split. Deterministic for a (records, seed) pair on every
/// platform; `ratio` is the train fraction.
inline DatasetSplit split(const std::vector<PatentRecord>& records, double ratio, uint64_t seed) {
  if (records.empty()) throw EmptyCorpus("cannot split zero records");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("split ratio must be in (0,1), got " + std::to_string(ratio));
  std::vector<size_t> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const size_t n_train = static_cast<size_t>(
      std::llround(ratio * static_cast<double>(records.size())));
  DatasetSplit out;
  out.seed = seed;
  for (size_t i = 0; i < order.size(); ++i)
    (i < n_train ? out.train : out.test).push_back(records[order[i]]);
  return out;
}

}  // namespace patcls
