#pragma once

#include <cerrno>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <iconv.h>

#include "patcls/errors.hpp"

namespace patcls {

inline void utf8_append(std::string& out, uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

// Strict UTF-8 decode of the codepoint starting at s[i]; advances i.
// Rejects overlong forms, surrogates and values beyond U+10FFFF.
inline uint32_t utf8_next(std::string_view s, size_t& i) {
  const auto bad = [&]() -> uint32_t {
    throw DecodeError("invalid UTF-8 byte sequence at offset " + std::to_string(i));
  };
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len;
  uint32_t cp;
  if ((b0 & 0xe0) == 0xc0) {
    len = 2;
    cp = b0 & 0x1f;
  } else if ((b0 & 0xf0) == 0xe0) {
    len = 3;
    cp = b0 & 0x0f;
  } else if ((b0 & 0xf8) == 0xf0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return bad();
  }
  if (i + static_cast<size_t>(len) > s.size()) return bad();
  for (int k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + static_cast<size_t>(k)]);
    if ((b & 0xc0) != 0x80) return bad();
    cp = (cp << 6) | (b & 0x3f);
  }
  static constexpr uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return bad();
  i += static_cast<size_t>(len);
  return cp;
}

/// Splits valid UTF-8 into single-codepoint strings.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    const size_t start = i;
    utf8_next(s, i);
    out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

inline bool utf8_valid(std::string_view s) {
  size_t i = 0;
  try {
    while (i < s.size()) utf8_next(s, i);
  } catch (const DecodeError&) {
    return false;
  }
  return true;
}

/// GBK bytes to UTF-8 via iconv; throws DecodeError on any invalid sequence.
inline std::string gbk_to_utf8(std::string_view bytes) {
  iconv_t cd = iconv_open("UTF-8", "GBK");
  if (cd == reinterpret_cast<iconv_t>(-1)) throw DecodeError("iconv has no GBK converter");
  std::string out;
  out.reserve(bytes.size() * 2);
  std::vector<char> in(bytes.begin(), bytes.end());
  char* src = in.data();
  size_t src_left = in.size();
  char buf[4096];
  while (src_left > 0) {
    char* dst = buf;
    size_t dst_left = sizeof(buf);
    const size_t rc = iconv(cd, &src, &src_left, &dst, &dst_left);
    out.append(buf, sizeof(buf) - dst_left);
    if (rc == static_cast<size_t>(-1)) {
      if (errno == E2BIG) continue;
      iconv_close(cd);
      throw DecodeError("invalid GBK byte sequence at offset " +
                        std::to_string(bytes.size() - src_left));
    }
  }
  iconv_close(cd);
  return out;
}

inline bool is_space_cp(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
         cp == 0x3000;  // ideographic space
}

/// Whitespace-run word split. Text without any whitespace degrades to
/// single characters; empty text gives an empty list.
inline std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  size_t i = 0;
  bool saw_space = false;
  while (i < text.size()) {
    const size_t start = i;
    const uint32_t cp = utf8_next(text, i);
    if (is_space_cp(cp)) {
      saw_space = true;
      if (!cur.empty()) {
        words.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.append(text.substr(start, i - start));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  if (!saw_space && words.size() == 1) return utf8_chars(words[0]);
  return words;
}

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && (static_cast<unsigned char>(s[b]) <= ' ')) ++b;
  while (e > b && (static_cast<unsigned char>(s[e - 1]) <= ' ')) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace patcls
