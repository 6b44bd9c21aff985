// Brute-force reference implementations of the caption metrics, used by the
// unit and acceptance suites. Written directly against the documented
// formulas and kept independent of the library implementations.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vidcap/metrics.hpp"
#include "vidcap/rng.hpp"

namespace oracle {

using Sent = std::vector<std::string>;

inline std::map<std::string, int> ngrams(const Sent& s, int n) {
  std::map<std::string, int> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) key += s[i + k] + "\x02";
    ++out[key];
  }
  return out;
}

inline std::vector<double> bleu(const std::vector<vidcap::EvalPair>& pairs, int n_max) {
  double c_total = 0.0, r_total = 0.0;
  std::vector<double> num(n_max, 0.0), den(n_max, 0.0);
  for (const auto& pair : pairs) {
    const int c = static_cast<int>(pair.candidate.size());
    c_total += c;
    int best_len = static_cast<int>(pair.references[0].size());
    for (const auto& ref : pair.references) {
      const int len = static_cast<int>(ref.size());
      const bool closer = std::abs(len - c) < std::abs(best_len - c);
      const bool tie_shorter = std::abs(len - c) == std::abs(best_len - c) && len < best_len;
      if (closer || tie_shorter) best_len = len;
    }
    r_total += best_len;
    for (int n = 1; n <= n_max; ++n) {
      auto cand = ngrams(pair.candidate, n);
      for (const auto& [gram, cnt] : cand) {
        den[n - 1] += cnt;
        int best = 0;
        for (const auto& ref : pair.references) {
          auto counts = ngrams(ref, n);
          auto it = counts.find(gram);
          if (it != counts.end()) best = std::max(best, it->second);
        }
        num[n - 1] += std::min(cnt, best);
      }
    }
  }
  std::vector<double> out(n_max, 0.0);
  const double bp = c_total == 0 ? 0.0 : (c_total > r_total ? 1.0 : std::exp(1.0 - r_total / c_total));
  for (int k = 1; k <= n_max; ++k) {
    double prod = 1.0;
    for (int n = 1; n <= k; ++n) {
      const double p = den[n - 1] > 0 ? num[n - 1] / den[n - 1] : 0.0;
      prod *= std::pow(p, 1.0 / k);
    }
    out[k - 1] = bp * prod;
  }
  return out;
}

// recursive memoized LCS, distinct from the iterative DP in the library
inline int lcs(const Sent& a, const Sent& b) {
  std::map<std::pair<int, int>, int> memo;
  std::function<int(int, int)> go = [&](int i, int j) -> int {
    if (i == static_cast<int>(a.size()) || j == static_cast<int>(b.size())) return 0;
    auto key = std::make_pair(i, j);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    int best = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[key] = best;
    return best;
  };
  return go(0, 0);
}

inline double rouge(const std::vector<vidcap::EvalPair>& pairs, double beta) {
  double total = 0.0;
  for (const auto& pair : pairs) {
    double best = 0.0;
    if (!pair.candidate.empty()) {
      for (const auto& ref : pair.references) {
        if (ref.empty()) continue;
        const int l = lcs(pair.candidate, ref);
        if (l == 0) continue;
        const double p = double(l) / pair.candidate.size();
        const double r = double(l) / ref.size();
        best = std::max(best, (1 + beta * beta) * p * r / (r + beta * beta * p));
      }
    }
    total += best;
  }
  return total / pairs.size();
}

// plain recursion over all maximal alignments, no memoization
inline void chunks_rec(const Sent& cand, const Sent& ref, std::size_t pos, std::vector<bool>& used,
                       std::map<std::string, int>& quota, std::map<std::string, int>& avail,
                       int last_ref, int chunks, int& best) {
  bool quota_left = false;
  for (const auto& [tok, q] : quota) quota_left = quota_left || q > 0;
  if (!quota_left) {
    best = std::min(best, chunks);
    return;
  }
  if (pos >= cand.size()) return;
  const std::string& tok = cand[pos];
  avail[tok] -= 1;
  if (quota[tok] <= 0 || avail[tok] >= quota[tok])
    chunks_rec(cand, ref, pos + 1, used, quota, avail, -5, chunks, best);
  if (quota[tok] > 0) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (used[j] || ref[j] != tok) continue;
      used[j] = true;
      quota[tok] -= 1;
      const int add = static_cast<int>(j) == last_ref + 1 ? 0 : 1;
      chunks_rec(cand, ref, pos + 1, used, quota, avail, static_cast<int>(j), chunks + add, best);
      quota[tok] += 1;
      used[j] = false;
    }
  }
  avail[tok] += 1;
}

inline double meteor(const std::vector<vidcap::EvalPair>& pairs) {
  double total = 0.0;
  for (const auto& pair : pairs) {
    double best_score = 0.0;
    for (const auto& ref : pair.references) {
      std::map<std::string, int> cand_cnt, ref_cnt, quota, avail;
      for (const auto& t : pair.candidate) ++cand_cnt[t];
      for (const auto& t : ref) ++ref_cnt[t];
      int m = 0;
      for (const auto& [tok, c] : cand_cnt) {
        quota[tok] = std::min(c, ref_cnt.count(tok) ? ref_cnt[tok] : 0);
        m += quota[tok];
      }
      avail = cand_cnt;
      if (m == 0) continue;
      int chunks = 1 << 20;
      std::vector<bool> used(ref.size(), false);
      chunks_rec(pair.candidate, ref, 0, used, quota, avail, -5, 0, chunks);
      const double p = double(m) / pair.candidate.size();
      const double r = double(m) / ref.size();
      const double f = 10.0 * p * r / (r + 9.0 * p);
      const double pen = 0.5 * std::pow(double(chunks) / m, 3.0);
      best_score = std::max(best_score, f * (1.0 - pen));
    }
    total += best_score;
  }
  return total / pairs.size();
}

inline double cider(const std::vector<vidcap::EvalPair>& pairs, int n_max) {
  std::set<std::string> vids;
  for (const auto& p : pairs) vids.insert(p.video_id);
  const double n_videos = static_cast<double>(vids.size());
  double corpus = 0.0;
  for (const auto& pair : pairs) {
    double pair_score = 0.0;
    for (int n = 1; n <= n_max; ++n) {
      auto idf_of = [&](const std::string& gram) {
        int df = 0;
        for (const auto& q : pairs) {
          bool found = false;
          for (const auto& ref : q.references) found = found || ngrams(ref, n).count(gram);
          df += found;
        }
        return std::log(n_videos / std::max(1, df));
      };
      auto cand = ngrams(pair.candidate, n);
      double ref_mean = 0.0;
      for (const auto& ref : pair.references) {
        auto rg = ngrams(ref, n);
        double dot = 0.0, na = 0.0, nb = 0.0;
        std::set<std::string> grams;
        for (const auto& [g, c] : cand) grams.insert(g);
        for (const auto& [g, c] : rg) grams.insert(g);
        for (const auto& g : grams) {
          const double idf = idf_of(g);
          const double wc = (cand.count(g) ? cand.at(g) : 0) * idf;
          const double wr = (rg.count(g) ? rg.at(g) : 0) * idf;
          dot += wc * wr;
          na += wc * wc;
          nb += wr * wr;
        }
        if (na > 0 && nb > 0) ref_mean += dot / (std::sqrt(na) * std::sqrt(nb));
      }
      pair_score += ref_mean / pair.references.size();
    }
    corpus += 10.0 * pair_score / n_max;
  }
  return corpus / pairs.size();
}

inline std::vector<vidcap::EvalPair> random_corpus(vidcap::Rng& rng, int n_pairs, int max_len = 7) {
  static const std::vector<std::string> alphabet = {"a", "b", "c", "d", "e"};
  std::vector<vidcap::EvalPair> pairs;
  for (int i = 0; i < n_pairs; ++i) {
    vidcap::EvalPair p;
    p.video_id = "v" + std::to_string(i);
    const int clen = 1 + static_cast<int>(rng.bounded(max_len));
    for (int j = 0; j < clen; ++j) p.candidate.push_back(alphabet[rng.bounded(alphabet.size())]);
    const int n_refs = 1 + static_cast<int>(rng.bounded(3));
    for (int r = 0; r < n_refs; ++r) {
      Sent ref;
      const int rlen = 1 + static_cast<int>(rng.bounded(max_len));
      for (int j = 0; j < rlen; ++j) ref.push_back(alphabet[rng.bounded(alphabet.size())]);
      p.references.push_back(std::move(ref));
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace oracle
