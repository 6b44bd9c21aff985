#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "vidcap/error.hpp"

namespace vidcap {

// Corpus caption scoring: BLEU-1..4 (corpus-level, clipped, no smoothing),
// ROUGE-L (LCS F-measure, beta = 1.2, max over references), exact-match
// METEOR, and plain CIDEr (TF-IDF n-gram cosine). All pure functions of the
// token lists.

struct EvalPair {
  std::string video_id;
  std::vector<std::string> candidate;
  std::vector<std::vector<std::string>> references;
};

namespace detail {

inline std::map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key += '\x1f';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

// closest reference length to c; ties go to the shorter reference
inline int closest_ref_length(int c, const std::vector<std::vector<std::string>>& refs) {
  int best = static_cast<int>(refs[0].size());
  for (const auto& r : refs) {
    const int len = static_cast<int>(r.size());
    if (std::abs(len - c) < std::abs(best - c) || (std::abs(len - c) == std::abs(best - c) && len < best))
      best = len;
  }
  return best;
}

inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t m = a.size(), n = b.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[n];
}

}  // namespace detail

inline void require_pairs(const std::vector<EvalPair>& pairs, const char* who) {
  if (pairs.empty()) throw UsageError(std::string(who) + ": empty candidate corpus");
  for (const auto& p : pairs)
    if (p.references.empty())
      throw UsageError(std::string(who) + ": pair " + p.video_id + " has no references");
}

// Corpus BLEU: clipped n-gram precisions summed over the corpus, uniform
// geometric mean, brevity penalty exp(1 - r/c) with per-sentence closest
// reference lengths. Returns BLEU-1..n_max; any zero precision zeroes the
// affected orders (no smoothing).
inline std::vector<double> bleu(const std::vector<EvalPair>& pairs, int n_max = 4) {
  require_pairs(pairs, "bleu");
  if (n_max < 1 || n_max > 4) throw UsageError("bleu: n_max must be in 1..4");
  std::vector<double> matched(n_max, 0.0), total(n_max, 0.0);
  long long c_total = 0, r_total = 0;
  for (const auto& pair : pairs) {
    const int c = static_cast<int>(pair.candidate.size());
    c_total += c;
    r_total += detail::closest_ref_length(c, pair.references);
    for (int n = 1; n <= n_max; ++n) {
      auto cand = detail::ngram_counts(pair.candidate, n);
      std::map<std::string, int> best_ref;
      for (const auto& ref : pair.references)
        for (const auto& [gram, cnt] : detail::ngram_counts(ref, n))
          best_ref[gram] = std::max(best_ref[gram], cnt);
      for (const auto& [gram, cnt] : cand) {
        total[n - 1] += cnt;
        auto it = best_ref.find(gram);
        if (it != best_ref.end()) matched[n - 1] += std::min(cnt, it->second);
      }
    }
  }
  const double bp = (c_total == 0)                ? 0.0
                    : (c_total > r_total)         ? 1.0
                                                  : std::exp(1.0 - static_cast<double>(r_total) / c_total);
  std::vector<double> scores(n_max, 0.0);
  for (int k = 1; k <= n_max; ++k) {
    double log_sum = 0.0;
    bool zero = false;
    for (int n = 1; n <= k; ++n) {
      const double p = total[n - 1] > 0 ? matched[n - 1] / total[n - 1] : 0.0;
      if (p <= 0.0) {
        zero = true;
        break;
      }
      log_sum += std::log(p);
    }
    scores[k - 1] = zero ? 0.0 : bp * std::exp(log_sum / k);
  }
  return scores;
}

inline double rouge_l_pair(const std::vector<std::string>& cand,
                           const std::vector<std::vector<std::string>>& refs, double beta = 1.2) {
  double best = 0.0;
  if (cand.empty()) return 0.0;
  for (const auto& ref : refs) {
    if (ref.empty()) continue;
    const int lcs = detail::lcs_length(cand, ref);
    if (lcs == 0) continue;
    const double p = static_cast<double>(lcs) / cand.size();
    const double r = static_cast<double>(lcs) / ref.size();
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
  }
  return best;
}

inline double rouge_l(const std::vector<EvalPair>& pairs, double beta = 1.2) {
  require_pairs(pairs, "rouge_l");
  double sum = 0.0;
  for (const auto& pair : pairs) sum += rouge_l_pair(pair.candidate, pair.references, beta);
  return sum / pairs.size();
}

namespace detail {

// Exact minimum chunk count over maximal exact-unigram alignments, via
// memoized search over (candidate position, used reference positions). Meant
// for short captions; state space is 2^matchable_ref_positions.
struct ChunkSearch {
  const std::vector<int>& cand;  // token ids, -1 where unmatched in ref
  std::vector<int> ref;
  std::vector<int> quota;          // per token id, matches still required
  std::vector<int> suffix_avail;   // per (pos, token) availability handled via counts
  std::unordered_map<std::uint64_t, int> memo;
  std::vector<int> match_pos;  // indices into ref that are matchable
  int m = 0;

  ChunkSearch(const std::vector<int>& cand_ids, const std::vector<int>& ref_ids, int n_tokens)
      : cand(cand_ids), ref(ref_ids) {
    std::vector<int> cand_cnt(n_tokens, 0), ref_cnt(n_tokens, 0);
    for (int t : cand) cand_cnt[t]++;
    for (int t : ref) ref_cnt[t]++;
    quota.resize(n_tokens);
    for (int t = 0; t < n_tokens; ++t) {
      quota[t] = std::min(cand_cnt[t], ref_cnt[t]);
      m += quota[t];
    }
    for (std::size_t j = 0; j < ref.size(); ++j)
      if (quota[ref[j]] > 0 && cand_cnt[ref[j]] > 0) match_pos.push_back(static_cast<int>(j));
    if (match_pos.size() > 40 || cand.size() > 1000 || ref.size() > 1000)
      throw UsageError("meteor: sentences too long for the exact chunk search");
  }

  int solve() {
    if (m == 0) return 0;
    std::vector<int> remaining(quota);
    return rec(0, 0, -2, remaining);
  }

  int rec(std::size_t pos, std::uint64_t used, int last_ref, std::vector<int>& remaining) {
    int need = 0;
    for (int q : remaining) need += q;
    if (need == 0) return 0;
    if (pos >= cand.size()) return 1 << 20;  // infeasible branch
    const std::uint64_t key = (used << 22) | (static_cast<std::uint64_t>(pos) << 11) |
                              static_cast<std::uint64_t>(last_ref + 2);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;

    const int tok = cand[pos];
    int best = 1 << 20;
    // remaining candidate occurrences of tok at or after pos
    int avail = 0;
    for (std::size_t i = pos; i < cand.size(); ++i) avail += cand[i] == tok;
    // skip this position if the quota can still be met later
    if (remaining[tok] == 0 || avail - 1 >= remaining[tok])
      best = std::min(best, rec(pos + 1, used, -2, remaining));
    if (remaining[tok] > 0) {
      for (std::size_t mi = 0; mi < match_pos.size(); ++mi) {
        const int j = match_pos[mi];
        if (ref[j] != tok || (used >> mi) & 1) continue;
        remaining[tok]--;
        const int new_chunk = (j == last_ref + 1) ? 0 : 1;
        best = std::min(best, new_chunk + rec(pos + 1, used | (1ULL << mi), j, remaining));
        remaining[tok]++;
      }
    }
    memo.emplace(key, best);
    return best;
  }
};

inline std::pair<int, int> meteor_alignment(const std::vector<std::string>& cand,
                                            const std::vector<std::string>& ref) {
  std::map<std::string, int> dict;
  auto intern = [&](const std::string& s) {
    auto [it, fresh] = dict.emplace(s, static_cast<int>(dict.size()));
    (void)fresh;
    return it->second;
  };
  std::vector<int> c, r;
  for (const auto& t : cand) c.push_back(intern(t));
  for (const auto& t : ref) r.push_back(intern(t));
  ChunkSearch search(c, r, static_cast<int>(dict.size()));
  const int m = search.m;
  if (m == 0) return {0, 0};
  return {m, search.solve()};
}

}  // namespace detail

// Exact-match METEOR: F_mean = 10PR / (R + 9P), penalty = 0.5 (chunks/m)^3,
// maximal alignment with minimum chunk count, max over references.
inline double meteor_exact_pair(const std::vector<std::string>& cand,
                                const std::vector<std::vector<std::string>>& refs) {
  double best = 0.0;
  if (cand.empty()) return 0.0;
  for (const auto& ref : refs) {
    if (ref.empty()) continue;
    auto [m, chunks] = detail::meteor_alignment(cand, ref);
    if (m == 0) continue;
    const double p = static_cast<double>(m) / cand.size();
    const double r = static_cast<double>(m) / ref.size();
    const double f_mean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(chunks) / m;
    best = std::max(best, f_mean * (1.0 - 0.5 * frag * frag * frag));
  }
  return best;
}

inline double meteor_exact(const std::vector<EvalPair>& pairs) {
  require_pairs(pairs, "meteor_exact");
  double sum = 0.0;
  for (const auto& pair : pairs) sum += meteor_exact_pair(pair.candidate, pair.references);
  return sum / pairs.size();
}

// Plain CIDEr: per n in 1..n_max, mean over references of the cosine between
// count*idf vectors, idf = log(N / max(1, #videos whose references contain
// the n-gram)); score = 10 * mean over n, averaged over pairs.
inline std::vector<double> cider_scores(const std::vector<EvalPair>& pairs, int n_max = 4) {
  require_pairs(pairs, "cider");
  std::set<std::string> distinct;
  for (const auto& p : pairs) distinct.insert(p.video_id);
  if (distinct.size() < 2)
    throw UsageError("cider: IDF is degenerate with a single video; need at least 2 distinct ids");
  const double n_videos = static_cast<double>(distinct.size());

  std::vector<std::map<std::string, int>> df(n_max);
  for (int n = 1; n <= n_max; ++n) {
    std::map<std::string, std::set<std::string>> seen_in;
    for (const auto& p : pairs)
      for (const auto& ref : p.references)
        for (const auto& [gram, cnt] : detail::ngram_counts(ref, n)) {
          (void)cnt;
          seen_in[gram].insert(p.video_id);
        }
    for (const auto& [gram, vids] : seen_in) df[n - 1][gram] = static_cast<int>(vids.size());
  }
  auto idf = [&](int n, const std::string& gram) {
    auto it = df[n - 1].find(gram);
    const int d = it == df[n - 1].end() ? 0 : it->second;
    return std::log(n_videos / std::max(1, d));
  };
  auto cosine = [&](int n, const std::map<std::string, int>& a, const std::map<std::string, int>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [gram, cnt] : a) {
      const double w = cnt * idf(n, gram);
      na += w * w;
      auto it = b.find(gram);
      if (it != b.end()) dot += w * (it->second * idf(n, gram));
    }
    for (const auto& [gram, cnt] : b) {
      const double w = cnt * idf(n, gram);
      nb += w * w;
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& pair : pairs) {
    double acc = 0.0;
    for (int n = 1; n <= n_max; ++n) {
      auto cand = detail::ngram_counts(pair.candidate, n);
      double ref_mean = 0.0;
      for (const auto& ref : pair.references)
        ref_mean += cosine(n, cand, detail::ngram_counts(ref, n));
      acc += ref_mean / pair.references.size();
    }
    scores.push_back(10.0 * acc / n_max);
  }
  return scores;
}

inline double cider(const std::vector<EvalPair>& pairs, int n_max = 4) {
  const std::vector<double> scores = cider_scores(pairs, n_max);
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / scores.size();
}

struct ScoreReport {
  std::vector<double> bleu;  // BLEU-1..4
  double meteor = 0.0;
  double rouge = 0.0;
  double cider = 0.0;

  struct PerVideo {
    std::string video_id;
    std::vector<double> bleu;
    double meteor = 0.0;
    double rouge = 0.0;
    double cider = 0.0;
  };
  std::vector<PerVideo> per_video;
};

inline ScoreReport evaluate_corpus(const std::vector<EvalPair>& pairs) {
  require_pairs(pairs, "evaluate_corpus");
  ScoreReport rep;
  rep.bleu = bleu(pairs, 4);
  rep.meteor = meteor_exact(pairs);
  rep.rouge = rouge_l(pairs);
  const std::vector<double> cider_per = cider_scores(pairs, 4);
  double cider_sum = 0.0;
  for (double s : cider_per) cider_sum += s;
  rep.cider = cider_sum / cider_per.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ScoreReport::PerVideo pv;
    pv.video_id = pairs[i].video_id;
    pv.bleu = bleu({pairs[i]}, 4);
    pv.meteor = meteor_exact_pair(pairs[i].candidate, pairs[i].references);
    pv.rouge = rouge_l_pair(pairs[i].candidate, pairs[i].references);
    pv.cider = cider_per[i];
    rep.per_video.push_back(std::move(pv));
  }
  return rep;
}

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// One row per model run, columns following the usual greedy-search comparison
// table layout.
inline std::string report_tsv(const std::vector<std::pair<std::string, ScoreReport>>& rows) {
  std::string out = "RNN\tBleu1\tBleu2\tBleu3\tBleu4\tMETEOR-ex\tROUGE_L\tCIDEr\n";
  for (const auto& [label, rep] : rows) {
    out += label;
    for (double b : rep.bleu) out += '\t' + format_score(b);
    out += '\t' + format_score(rep.meteor);
    out += '\t' + format_score(rep.rouge);
    out += '\t' + format_score(rep.cider);
    out += '\n';
  }
  return out;
}

inline std::string per_video_tsv(const ScoreReport& rep) {
  std::string out = "video_id\tBleu1\tBleu2\tBleu3\tBleu4\tMETEOR-ex\tROUGE_L\tCIDEr\n";
  for (const auto& pv : rep.per_video) {
    out += pv.video_id;
    for (double b : pv.bleu) out += '\t' + format_score(b);
    out += '\t' + format_score(pv.meteor);
    out += '\t' + format_score(pv.rouge);
    out += '\t' + format_score(pv.cider);
    out += '\n';
  }
  return out;
}

}  // namespace vidcap
