#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "patcls/errors.hpp"
#include "patcls/rng.hpp"
#include "patcls/text.hpp"

namespace patcls {

/// Character-level vocabulary. Ids 0-4 are reserved for the special tokens;
/// real tokens are ordered by frequency (descending), ties by byte order, so
/// the same corpus always yields the same mapping.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  static Vocab build(const std::vector<std::string>& corpus, size_t min_freq = 1) {
    return build_tokenized(corpus, min_freq, [](const std::string& text) { return utf8_chars(text); });
  }

  /// Word-level variant (whitespace tokens) used by the baseline models.
  static Vocab build_words(const std::vector<std::string>& corpus, size_t min_freq = 1) {
    return build_tokenized(corpus, min_freq, [](const std::string& text) { return tokenize_words(text); });
  }

  size_t size() const { return tokens_.size(); }

  int id_of(std::string_view token) const {
    auto it = to_id_.find(std::string(token));
    return it == to_id_.end() ? kUnk : it->second;
  }

  const std::string& token_of(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
      throw TokenOutOfRange("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
  }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    v.tokens_.assign(j.size(), "");
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it.value().get<size_t>();
      if (id >= v.tokens_.size() || !v.tokens_[id].empty())
        throw ConfigError("vocab json ids are not a bijection onto 0..n-1");
      v.tokens_[id] = it.key();
      v.to_id_[it.key()] = static_cast<int>(id);
    }
    static const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (int i = 0; i < kNumSpecials; ++i)
      if (v.tokens_.size() <= static_cast<size_t>(i) || v.tokens_[static_cast<size_t>(i)] != kSpecials[i])
        throw ConfigError("vocab json is missing special token " + std::string(kSpecials[i]));
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << to_json().dump(2) << "\n";
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad vocab file " + path + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  template <class TokenizeFn>
  static Vocab build_tokenized(const std::vector<std::string>& corpus, size_t min_freq,
                               TokenizeFn&& tokenize) {
    if (corpus.empty()) throw EmptyCorpus("cannot build a vocabulary from zero texts");
    std::map<std::string, size_t> freq;
    for (const auto& text : corpus)
      for (auto& tok : tokenize(text)) ++freq[tok];
    std::vector<std::pair<std::string, size_t>> entries(freq.begin(), freq.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    v.tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (const auto& [tok, count] : entries)
      if (count >= min_freq) v.tokens_.push_back(tok);
    for (size_t i = 0; i < v.tokens_.size(); ++i) v.to_id_[v.tokens_[i]] = static_cast<int>(i);
    return v;
  }

  std::unordered_map<std::string, int> to_id_;
  std::vector<std::string> tokens_;
};

/// Fixed-length id sequence: [CLS] content [SEP] ... PAD. Positions at or
/// beyond true_len are PAD.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> segment_ids;
  size_t true_len = 0;

  size_t length() const { return ids.size(); }
};

namespace detail {

inline TokenSequence blank_sequence(size_t max_len) {
  TokenSequence seq;
  seq.ids.assign(max_len, Vocab::kPad);
  seq.segment_ids.assign(max_len, 0);
  return seq;
}

}  // namespace detail

/// Single-text encoding; the tail beyond max_len - 2 characters is dropped.
inline TokenSequence encode(std::string_view text, const Vocab& vocab, size_t max_len = 200) {
  if (max_len < 2) throw ConfigError("encode: max_len must be >= 2");
  auto chars = utf8_chars(text);
  if (chars.size() > max_len - 2) chars.resize(max_len - 2);
  TokenSequence seq = detail::blank_sequence(max_len);
  size_t pos = 0;
  seq.ids[pos++] = Vocab::kCls;
  for (const auto& c : chars) seq.ids[pos++] = vocab.id_of(c);
  seq.ids[pos++] = Vocab::kSep;
  seq.true_len = pos;
  return seq;
}

/// Pair encoding [CLS] A [SEP] B [SEP]; segment 1 covers B and its trailing
/// [SEP]. Overflow is resolved by repeatedly dropping the last character of
/// the currently longer segment (ties drop from A).
inline TokenSequence encode_pair(std::string_view a, std::string_view b, const Vocab& vocab,
                                 size_t max_len = 200) {
  if (max_len < 3) throw ConfigError("encode_pair: max_len must be >= 3");
  auto ca = utf8_chars(a);
  auto cb = utf8_chars(b);
  const size_t budget = max_len - 3;
  while (ca.size() + cb.size() > budget) {
    if (cb.size() > ca.size())
      cb.pop_back();
    else
      ca.pop_back();
  }
  TokenSequence seq = detail::blank_sequence(max_len);
  size_t pos = 0;
  seq.ids[pos] = Vocab::kCls;
  seq.segment_ids[pos++] = 0;
  for (const auto& c : ca) {
    seq.ids[pos] = vocab.id_of(c);
    seq.segment_ids[pos++] = 0;
  }
  seq.ids[pos] = Vocab::kSep;
  seq.segment_ids[pos++] = 0;
  for (const auto& c : cb) {
    seq.ids[pos] = vocab.id_of(c);
    seq.segment_ids[pos++] = 1;
  }
  seq.ids[pos] = Vocab::kSep;
  seq.segment_ids[pos++] = 1;
  seq.true_len = pos;
  return seq;
}

/// Non-special tokens joined back together; UNK positions come back as the
/// [UNK] marker.
inline std::string decode(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (size_t i = 0; i < seq.true_len; ++i) {
    const int id = seq.ids[i];
    if (id == Vocab::kCls || id == Vocab::kSep || id == Vocab::kPad) continue;
    out += vocab.token_of(id);
  }
  return out;
}

/// Masked-LM instance: the corrupted input plus per-position original ids
/// (kNotPredicted where the position was not selected).
struct MlmBatchItem {
  static constexpr int kNotPredicted = -1;

  TokenSequence input;
  std::vector<int> labels;
  int nsp_label = 0;  // 0 = is-next, 1 = not-next

  std::vector<size_t> predicted_positions() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < labels.size(); ++i)
      if (labels[i] != kNotPredicted) out.push_back(i);
    return out;
  }
};

/// Selects round(rate * content_len) content positions (never specials or
/// padding, at least one) and applies the 80/10/10 mask / random / keep rule.
inline MlmBatchItem mask_for_mlm(const TokenSequence& seq, const Vocab& vocab, double rate, Rng& rng) {
  std::vector<size_t> candidates;
  for (size_t i = 0; i < seq.true_len; ++i) {
    const int id = seq.ids[i];
    if (id != Vocab::kCls && id != Vocab::kSep && id != Vocab::kPad) candidates.push_back(i);
  }
  if (candidates.empty()) throw Error("mask_for_mlm: sequence has no content tokens");
  size_t n_sel = static_cast<size_t>(std::llround(rate * static_cast<double>(candidates.size())));
  n_sel = std::clamp<size_t>(n_sel, 1, candidates.size());
  rng.shuffle(candidates);
  candidates.resize(n_sel);

  MlmBatchItem item;
  item.input = seq;
  item.labels.assign(seq.length(), MlmBatchItem::kNotPredicted);
  const size_t n_regular = vocab.size() > Vocab::kNumSpecials ? vocab.size() - Vocab::kNumSpecials : 0;
  for (size_t pos : candidates) {
    item.labels[pos] = seq.ids[pos];
    const double u = rng.uniform();
    if (u < 0.8) {
      item.input.ids[pos] = Vocab::kMask;
    } else if (u < 0.9 && n_regular > 0) {
      item.input.ids[pos] = Vocab::kNumSpecials + static_cast<int>(rng.below(n_regular));
    }
    // else: keep the original token
  }
  return item;
}

inline MlmBatchItem mask_for_mlm(const TokenSequence& seq, const Vocab& vocab, double rate,
                                 uint64_t seed) {
  Rng rng(seed);
  return mask_for_mlm(seq, vocab, rate, rng);
}

}  // namespace patcls
