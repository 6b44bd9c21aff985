#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "vidcap/error.hpp"
#include "vidcap/rng.hpp"

namespace vidcap {

// Devanagari-aware tokenization and vocabulary handling. Captions are NFC
// normalized, split on whitespace, and danda / double danda / a small ASCII
// punctuation set are detached as standalone tokens.

namespace utf8 {

inline std::vector<char32_t> decode(const std::string& s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = s[i];
    char32_t cp = 0;
    int extra = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1f;
      extra = 1;
    } else if ((c >> 4) == 0xe) {
      cp = c & 0x0f;
      extra = 2;
    } else if ((c >> 3) == 0x1e) {
      cp = c & 0x07;
      extra = 3;
    } else {
      throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + extra >= s.size()) throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (int k = 1; k <= extra; ++k) {
      const unsigned char cc = s[i + k];
      if ((cc >> 6) != 0x2)
        throw DataError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      cp = (cp << 6) | (cc & 0x3f);
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

inline void append(std::string& s, char32_t cp) {
  if (cp < 0x80) {
    s += static_cast<char>(cp);
  } else if (cp < 0x800) {
    s += static_cast<char>(0xc0 | (cp >> 6));
    s += static_cast<char>(0x80 | (cp & 0x3f));
  } else if (cp < 0x10000) {
    s += static_cast<char>(0xe0 | (cp >> 12));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    s += static_cast<char>(0x80 | (cp & 0x3f));
  } else {
    s += static_cast<char>(0xf0 | (cp >> 18));
    s += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    s += static_cast<char>(0x80 | (cp & 0x3f));
  }
}

inline std::string encode(const std::vector<char32_t>& cps) {
  std::string s;
  s.reserve(cps.size() * 3);
  for (char32_t cp : cps) append(s, cp);
  return s;
}

}  // namespace utf8

namespace devanagari {

// Canonical decompositions in the Devanagari block; all are base + nukta.
inline bool decompose(char32_t cp, char32_t& base) {
  switch (cp) {
    case 0x0929: base = 0x0928; return true;
    case 0x0931: base = 0x0930; return true;
    case 0x0934: base = 0x0933; return true;
    case 0x0958: base = 0x0915; return true;
    case 0x0959: base = 0x0916; return true;
    case 0x095A: base = 0x0917; return true;
    case 0x095B: base = 0x091C; return true;
    case 0x095C: base = 0x0921; return true;
    case 0x095D: base = 0x0922; return true;
    case 0x095E: base = 0x092A; return true;
    case 0x095F: base = 0x092F; return true;
    default: return false;
  }
}

// U+0958..U+095F are composition exclusions, so only these three pairs
// recompose under NFC.
inline char32_t compose(char32_t base, char32_t mark) {
  if (mark != 0x093C) return 0;
  switch (base) {
    case 0x0928: return 0x0929;
    case 0x0930: return 0x0931;
    case 0x0933: return 0x0934;
    default: return 0;
  }
}

inline int combining_class(char32_t cp) {
  switch (cp) {
    case 0x093C: return 7;    // nukta
    case 0x094D: return 9;    // virama
    case 0x0952: return 220;  // anudatta
    case 0x0951:
    case 0x0953:
    case 0x0954: return 230;  // udatta and accents
    default: return 0;
  }
}

}  // namespace devanagari

// NFC covering the Devanagari block's canonical decompositions, combining
// mark reordering, and (exclusion-aware) recomposition. Codepoints from other
// scripts pass through unchanged; ASCII is NFC-invariant anyway.
inline std::vector<char32_t> nfc_normalize(const std::vector<char32_t>& in) {
  std::vector<char32_t> buf;
  buf.reserve(in.size() + 4);
  for (char32_t cp : in) {
    char32_t base;
    if (devanagari::decompose(cp, base)) {
      buf.push_back(base);
      buf.push_back(0x093C);
    } else {
      buf.push_back(cp);
    }
  }
  // canonical ordering: stable sort runs of nonzero combining class
  std::size_t i = 0;
  while (i < buf.size()) {
    if (devanagari::combining_class(buf[i]) == 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < buf.size() && devanagari::combining_class(buf[j]) != 0) ++j;
    std::stable_sort(buf.begin() + i, buf.begin() + j, [](char32_t a, char32_t b) {
      return devanagari::combining_class(a) < devanagari::combining_class(b);
    });
    i = j;
  }
  // canonical composition
  std::vector<char32_t> out;
  out.reserve(buf.size());
  int last_starter = -1;
  int last_cc = 0;
  for (char32_t cp : buf) {
    const int cc = devanagari::combining_class(cp);
    if (last_starter >= 0 && cc > 0 && last_cc < cc) {
      if (char32_t comp = devanagari::compose(out[last_starter], cp)) {
        out[last_starter] = comp;
        continue;
      }
    }
    if (cc == 0) {
      last_starter = static_cast<int>(out.size());
      last_cc = 0;
    } else {
      last_cc = cc;
    }
    out.push_back(cp);
  }
  return out;
}

inline std::string nfc_normalize(const std::string& s) {
  return utf8::encode(nfc_normalize(utf8::decode(s)));
}

inline bool is_detached_punct(char32_t cp) {
  switch (cp) {
    case 0x0964:  // danda
    case 0x0965:  // double danda
    case '.':
    case ',':
    case '!':
    case '?':
    case ';':
    case ':':
      return true;
    default:
      return false;
  }
}

inline bool is_space(char32_t cp) { return cp <= 0x20 || cp == 0x00A0; }

// NFC normalize, split on whitespace, detach danda and ASCII punctuation as
// standalone tokens. Empty input yields an empty list.
inline std::vector<std::string> tokenize(const std::string& text) {
  const std::vector<char32_t> cps = nfc_normalize(utf8::decode(text));
  std::vector<std::string> tokens;
  std::vector<char32_t> cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(utf8::encode(cur));
      cur.clear();
    }
  };
  for (char32_t cp : cps) {
    if (is_space(cp)) {
      flush();
    } else if (is_detached_punct(cp)) {
      flush();
      tokens.push_back(utf8::encode({cp}));
    } else {
      cur.push_back(cp);
    }
  }
  flush();
  return tokens;
}

// Bidirectional token <-> id map with reserved ids 0..3.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnk = 3;

  Vocab() { for (const char* s : {"<pad>", "<start>", "<end>", "<unk>"}) push(s); }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw UsageError("vocab: id " + std::to_string(id) + " out of range (size " +
                       std::to_string(size()) + ")");
    return id_to_token_[id];
  }

  void push(const std::string& token) {
    token_to_id_.emplace(token, size());
    id_to_token_.push_back(token);
  }

  std::string serialize() const {
    std::string out;
    for (int i = 0; i < size(); ++i) {
      out += id_to_token_[i];
      out += '\t';
      out += std::to_string(i);
      out += '\n';
    }
    return out;
  }

  std::uint64_t hash() const { return fnv1a64(serialize()); }

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct CaptionRecord {
  std::string video_id;
  std::string text;
  std::vector<std::string> tokens;
  std::vector<int> ids;
};

// Specials plus the (max_size - 4) most frequent tokens; ties broken by
// codepoint order (== byte order for valid UTF-8). Independent of corpus
// iteration order.
inline Vocab build_vocab(const std::vector<std::vector<std::string>>& token_lists, int max_size) {
  if (max_size < 5) throw UsageError("build_vocab: max_size must be at least 5");
  std::map<std::string, std::size_t> counts;
  for (const auto& tokens : token_lists)
    for (const auto& tok : tokens) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [tok, n] : ranked) {
    (void)n;
    if (v.size() >= max_size) break;
    if (!v.contains(tok)) v.push(tok);
  }
  return v;
}

inline Vocab build_vocab(const std::vector<CaptionRecord>& corpus, int max_size) {
  std::vector<std::vector<std::string>> lists;
  lists.reserve(corpus.size());
  for (const auto& rec : corpus) lists.push_back(rec.tokens);
  return build_vocab(lists, max_size);
}

inline std::vector<int> ids_for(const std::vector<std::string>& tokens, const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) ids.push_back(vocab.id(tok));
  return ids;
}

struct EncodedCaption {
  std::vector<int> input;   // <start> + tokens, padded to T
  std::vector<int> target;  // tokens + <end>, padded to T
  std::vector<int> mask;    // 1 at non-pad target positions
};

inline EncodedCaption encode_caption(const std::vector<std::string>& tokens, const Vocab& vocab,
                                     int t_dec_max) {
  if (t_dec_max < 1) throw UsageError("encode_caption: t_dec_max must be positive");
  const int content = std::min<int>(static_cast<int>(tokens.size()), t_dec_max - 1);
  EncodedCaption ec;
  ec.input.assign(t_dec_max, Vocab::kPad);
  ec.target.assign(t_dec_max, Vocab::kPad);
  ec.mask.assign(t_dec_max, 0);
  ec.input[0] = Vocab::kStart;
  for (int i = 0; i < content; ++i) {
    const int id = vocab.id(tokens[i]);
    ec.input[i + 1] = id;
    ec.target[i] = id;
    ec.mask[i] = 1;
  }
  ec.target[content] = Vocab::kEnd;
  ec.mask[content] = 1;
  return ec;
}

// Drops the reserved specials and joins with single spaces.
inline std::string decode_tokens(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (id == Vocab::kPad || id == Vocab::kStart || id == Vocab::kEnd || id == Vocab::kUnk) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

}  // namespace vidcap
