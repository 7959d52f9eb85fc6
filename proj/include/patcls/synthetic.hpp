#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "patcls/corpus.hpp"
#include "patcls/rng.hpp"
#include "patcls/text.hpp"

namespace patcls {

/// Desk-scale corpus generator. Every class owns a private alphabet of CJK
/// codepoints and a keyword set built from it, so with vocab_overlap = 0 the
/// classes are separable by keyword match alone (the test-side oracle).
/// vocab_overlap is the probability that a token is drawn from a shared pool
/// instead of the class pool.
struct SynthSpec {
  size_t sections = 2;
  size_t classes_per_section = 2;
  size_t docs_per_class = 5;
  size_t doc_len = 20;  // tokens per document
  double vocab_overlap = 0.0;
};

struct SynthCorpus {
  std::vector<PatentRecord> records;
  // class label ("A01") -> its keyword set
  std::map<std::string, std::vector<std::string>> keywords_by_class;
  std::vector<std::string> shared_keywords;
};

inline SynthCorpus generate_synthetic_full(const SynthSpec& spec, uint64_t seed) {
  if (spec.sections < 1 || spec.sections > 8)
    throw ConfigError("synthetic sections must be 1..8 (IPC sections A-H)");
  if (spec.classes_per_section < 1 || spec.classes_per_section > 99)
    throw ConfigError("synthetic classes_per_section must be 1..99");
  if (spec.docs_per_class < 1 || spec.doc_len < 1)
    throw ConfigError("synthetic docs_per_class and doc_len must be >= 1");
  if (spec.vocab_overlap < 0.0 || spec.vocab_overlap > 1.0)
    throw ConfigError("vocab_overlap must be in [0,1]");

  constexpr uint32_t kClassBase = 0x4e00;   // per-class alphabets, 4 codepoints each
  constexpr uint32_t kSharedBase = 0x7100;  // shared-pool alphabet
  constexpr size_t kAlphabet = 4;
  constexpr size_t kKeywordsPerClass = 8;
  constexpr size_t kKeywordLen = 3;
  constexpr size_t kSharedKeywords = 16;

  Rng rng(seed);
  Rng kw_rng = rng.fork(1);
  Rng doc_rng = rng.fork(2);

  SynthCorpus out;
  auto make_keywords = [&](uint32_t base, size_t count) {
    std::vector<std::string> words;
    std::set<std::string> seen;
    while (words.size() < count) {
      std::string w;
      for (size_t c = 0; c < kKeywordLen; ++c)
        utf8_append(w, base + static_cast<uint32_t>(kw_rng.below(kAlphabet)));
      if (seen.insert(w).second) words.push_back(std::move(w));
    }
    return words;
  };

  std::vector<std::string> class_labels;
  size_t class_idx = 0;
  for (size_t s = 0; s < spec.sections; ++s) {
    const char section = static_cast<char>('A' + s);
    for (size_t c = 0; c < spec.classes_per_section; ++c, ++class_idx) {
      char buf[3];
      std::snprintf(buf, sizeof(buf), "%02zu", c + 1);
      const std::string label = std::string(1, section) + buf;
      class_labels.push_back(label);
      out.keywords_by_class[label] =
          make_keywords(kClassBase + static_cast<uint32_t>(class_idx * kAlphabet), kKeywordsPerClass);
    }
  }
  out.shared_keywords = make_keywords(kSharedBase, kSharedKeywords);

  size_t next_id = 0;
  for (const auto& label : class_labels) {
    const auto& kws = out.keywords_by_class[label];
    for (size_t d = 0; d < spec.docs_per_class; ++d) {
      std::vector<std::string> tokens;
      bool has_class_token = false;
      for (size_t k = 0; k < spec.doc_len; ++k) {
        const bool shared = doc_rng.uniform() < spec.vocab_overlap;
        if (shared) {
          tokens.push_back(out.shared_keywords[doc_rng.below(out.shared_keywords.size())]);
        } else {
          tokens.push_back(kws[doc_rng.below(kws.size())]);
          has_class_token = true;
        }
      }
      if (!has_class_token) tokens[0] = kws[doc_rng.below(kws.size())];
      std::string abstract;
      for (size_t k = 0; k < tokens.size(); ++k) {
        if (k) abstract += ' ';
        abstract += tokens[k];
      }
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "synth-%06zu", next_id++);
      out.records.push_back(PatentRecord{idbuf, std::move(abstract), parse_ipc(label)});
    }
  }
  return out;
}

inline std::vector<PatentRecord> generate_synthetic(const SynthSpec& spec, uint64_t seed) {
  return generate_synthetic_full(spec, seed).records;
}

}  // namespace patcls
