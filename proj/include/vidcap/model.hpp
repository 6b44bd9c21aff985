#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vidcap/attention.hpp"
#include "vidcap/cells.hpp"
#include "vidcap/text.hpp"

namespace vidcap {

// Encoder-decoder assembly: encode a feature sequence, decode a caption with
// teacher forcing, greedy search, or beam search. The decoder is initialised
// from the encoder's final state; with attention on, the query is the decoder
// state from the previous step and the context vector is concatenated with
// the cell output before the output projection.

struct ModelConfig {
  CellKind cell = CellKind::Lstm;
  bool attention = true;
  int d_feat = 4096;
  int t_enc = 28;
  int d_h = 512;
  int d_emb = 256;
  int vocab_size = 1500;
  int t_dec_max = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (d_feat < 1 || t_enc < 1 || d_h < 1 || d_emb < 1 || t_dec_max < 1)
      throw UsageError("model config: all dimensions must be positive");
    if (vocab_size < 4) throw UsageError("model config: vocab_size must be at least 4");
  }

  std::string variant_label() const {
    std::string s = cell == CellKind::Lstm ? "LSTM" : "GRU";
    if (attention) s += "+ATTENTION";
    return s;
  }
};

struct ModelParams {
  CellParams encoder;
  CellParams decoder;
  std::optional<AttentionParams> attn;
  Tensor embedding;  // [vocab_size, d_emb]
  Tensor W_out;      // [d_h or 2*d_h, vocab_size]
  Tensor b_out;      // [1, vocab_size]

  static ModelParams init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    if (cfg.cell == CellKind::Lstm) {
      p.encoder = LstmParams::init(cfg.d_feat, cfg.d_h, rng);
      p.decoder = LstmParams::init(cfg.d_emb, cfg.d_h, rng);
    } else {
      p.encoder = GruParams::init(cfg.d_feat, cfg.d_h, rng);
      p.decoder = GruParams::init(cfg.d_emb, cfg.d_h, rng);
    }
    if (cfg.attention) p.attn = AttentionParams::init(cfg.d_h, cfg.d_h, rng);
    const double k = 1.0 / std::sqrt(static_cast<double>(cfg.d_h));
    auto u = [&](Shape s) {
      Tensor t(std::move(s));
      for (double& v : t.data) v = rng.uniform(-k, k);
      return t;
    };
    p.embedding = u({cfg.vocab_size, cfg.d_emb});
    p.W_out = u({cfg.attention ? 2 * cfg.d_h : cfg.d_h, cfg.vocab_size});
    p.b_out = u({1, cfg.vocab_size});
    return p;
  }

  // Zero-valued parameters with the shapes the config dictates.
  static ModelParams blank(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    auto zero_lstm = [](int d_in, int d_h) {
      LstmParams q;
      for (Tensor* t : {&q.U_i, &q.U_f, &q.U_o, &q.U_g}) *t = Tensor::zeros({d_in, d_h});
      for (Tensor* t : {&q.W_i, &q.W_f, &q.W_o, &q.W_g}) *t = Tensor::zeros({d_h, d_h});
      for (Tensor* t : {&q.b_i, &q.b_f, &q.b_o, &q.b_g}) *t = Tensor::zeros({1, d_h});
      return q;
    };
    auto zero_gru = [](int d_in, int d_h) {
      GruParams q;
      for (Tensor* t : {&q.W_zx, &q.W_rx, &q.W_hx}) *t = Tensor::zeros({d_in, d_h});
      for (Tensor* t : {&q.W_zh, &q.W_rh, &q.W_hh}) *t = Tensor::zeros({d_h, d_h});
      for (Tensor* t : {&q.b_z, &q.b_r, &q.b_h}) *t = Tensor::zeros({1, d_h});
      return q;
    };
    if (cfg.cell == CellKind::Lstm) {
      p.encoder = zero_lstm(cfg.d_feat, cfg.d_h);
      p.decoder = zero_lstm(cfg.d_emb, cfg.d_h);
    } else {
      p.encoder = zero_gru(cfg.d_feat, cfg.d_h);
      p.decoder = zero_gru(cfg.d_emb, cfg.d_h);
    }
    if (cfg.attention) {
      AttentionParams a;
      a.W_dec = Tensor::zeros({cfg.d_h, cfg.d_h});
      a.W_enc = Tensor::zeros({cfg.d_h, cfg.d_h});
      a.v = Tensor::zeros({cfg.d_h, 1});
      p.attn = std::move(a);
    }
    p.embedding = Tensor::zeros({cfg.vocab_size, cfg.d_emb});
    p.W_out = Tensor::zeros({cfg.attention ? 2 * cfg.d_h : cfg.d_h, cfg.vocab_size});
    p.b_out = Tensor::zeros({1, cfg.vocab_size});
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> named() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto absorb = [&](const std::string& prefix, std::vector<std::pair<std::string, Tensor*>> list) {
      for (auto& [name, t] : list) out.emplace_back(prefix + name, t);
    };
    std::visit([&](auto& c) { absorb("encoder.", c.named()); }, encoder);
    std::visit([&](auto& c) { absorb("decoder.", c.named()); }, decoder);
    if (attn) absorb("attention.", attn->named());
    out.emplace_back("embedding", &embedding);
    out.emplace_back("W_out", &W_out);
    out.emplace_back("b_out", &b_out);
    return out;
  }

  // Per-tape copy with every parameter watched as a leaf; the original stays
  // untracked and read-only, so concurrent tapes can share it.
  ModelParams tracked_on(Tape& tape) const {
    ModelParams copy = *this;
    for (auto& [name, t] : copy.named()) {
      (void)name;
      *t = tape.watch(*t);
    }
    return copy;
  }
};

struct EncodeResult {
  Tensor states;  // [T_enc, d_h]
  CellState final_state;
};

inline EncodeResult encode(const Tensor& features, const ModelParams& params,
                           const ModelConfig& cfg) {
  if (features.shape != Shape{cfg.t_enc, cfg.d_feat})
    throw DimensionError("encode: features " + shape_str(features.shape) +
                         " do not match configured [" + std::to_string(cfg.t_enc) + "," +
                         std::to_string(cfg.d_feat) + "]");
  UnrollResult u = unroll(params.encoder, features, zero_state(params.encoder));
  return EncodeResult{std::move(u.states), std::move(u.final_state)};
}

struct DecodeStep {
  Tensor logits;  // [1, vocab_size], unnormalized
  CellState state;
};

inline DecodeStep decode_step(int prev_token, const CellState& state, const Tensor& encoder_states,
                              const ModelParams& params, const ModelConfig& cfg) {
  if (prev_token < 0 || prev_token >= cfg.vocab_size)
    throw UsageError("decode_step: token id " + std::to_string(prev_token) + " out of range");
  Tensor embedded = embedding_lookup(params.embedding, {prev_token});
  std::optional<Tensor> context;
  if (cfg.attention) {
    Tensor weights = attention_weights(state.h, encoder_states, *params.attn);
    context = context_vector(weights, encoder_states);
  }
  CellState next = cell_step(embedded, state, params.decoder);
  Tensor out = context ? concat(next.h, *context, 1) : next.h;
  Tensor logits = add(matmul(out, params.W_out), params.b_out);
  return DecodeStep{std::move(logits), std::move(next)};
}

// Runs the decoder over an explicit input id sequence, stacking the per-step
// logits into [T, vocab_size].
inline Tensor forced_logits(const Tensor& features, const std::vector<int>& input_ids,
                            const ModelParams& params, const ModelConfig& cfg) {
  if (input_ids.empty()) throw UsageError("forced_logits: empty input sequence");
  EncodeResult enc = encode(features, params, cfg);
  CellState state = std::move(enc.final_state);
  Tensor logits;
  for (std::size_t t = 0; t < input_ids.size(); ++t) {
    DecodeStep step = decode_step(input_ids[t], state, enc.states, params, cfg);
    state = std::move(step.state);
    logits = (t == 0) ? std::move(step.logits) : concat(logits, step.logits, 0);
  }
  return logits;
}

// Teacher forcing: step 1 consumes <start>, step t > 1 consumes the ground
// truth target_ids[t-1].
inline Tensor teacher_forced_forward(const Tensor& features, const std::vector<int>& target_ids,
                                     const ModelParams& params, const ModelConfig& cfg) {
  const int t_steps = static_cast<int>(target_ids.size());
  if (t_steps < 1) throw UsageError("teacher_forced_forward: empty target sequence");
  if (t_steps > cfg.t_dec_max)
    throw UsageError("teacher_forced_forward: " + std::to_string(t_steps) +
                     " steps exceed t_dec_max " + std::to_string(cfg.t_dec_max));
  std::vector<int> inputs(target_ids.size());
  inputs[0] = Vocab::kStart;
  std::copy(target_ids.begin(), target_ids.end() - 1, inputs.begin() + 1);
  return forced_logits(features, inputs, params, cfg);
}

// <pad> and <start> are never candidates during decoding; ties break toward
// the lowest token id.
inline int argmax_token(const Tensor& logits) {
  int best = -1;
  double best_v = 0.0;
  for (int v = 0; v < logits.cols(); ++v) {
    if (v == Vocab::kPad || v == Vocab::kStart) continue;
    if (best < 0 || logits.data[v] > best_v) {
      best = v;
      best_v = logits.data[v];
    }
  }
  if (best < 0) throw UsageError("argmax_token: vocabulary too small");
  return best;
}

// Greedy search; the returned sequence excludes <start> and <end>.
inline std::vector<int> greedy_decode(const Tensor& features, const ModelParams& params,
                                      const ModelConfig& cfg) {
  EncodeResult enc = encode(features, params, cfg);
  CellState state = std::move(enc.final_state);
  std::vector<int> tokens;
  int prev = Vocab::kStart;
  for (int t = 0; t < cfg.t_dec_max; ++t) {
    DecodeStep step = decode_step(prev, state, enc.states, params, cfg);
    state = std::move(step.state);
    const int next = argmax_token(step.logits);
    if (next == Vocab::kEnd) break;
    tokens.push_back(next);
    prev = next;
  }
  return tokens;
}

struct Hypothesis {
  std::vector<int> tokens;  // content tokens, no specials
  double log_prob = 0.0;
  bool complete = false;
};

namespace detail {

struct BeamEntry {
  std::vector<int> tokens;
  double log_prob = 0.0;
  CellState state;
  int prev_token = Vocab::kStart;
};

// score desc, then lexicographically smaller token sequence; pins ranking
// under exact ties
inline bool beam_better(double sa, const std::vector<int>& ta, double sb,
                        const std::vector<int>& tb) {
  if (sa != sb) return sa > sb;
  return ta < tb;
}

inline double final_score(const Hypothesis& h, bool length_norm) {
  if (!length_norm) return h.log_prob;
  const std::size_t len = h.tokens.size() + (h.complete ? 1 : 0);
  return h.log_prob / static_cast<double>(std::max<std::size_t>(1, len));
}

}  // namespace detail

// Standard beam search scored by summed stepwise log-probabilities. A
// hypothesis reaching <end> retires to the completed pool (its log_prob
// includes the <end> step); the best completed hypothesis wins, otherwise the
// best incomplete one at t_dec_max. length_norm divides by the step count.
inline Hypothesis beam_decode(const Tensor& features, const ModelParams& params,
                              const ModelConfig& cfg, int beam_width, bool length_norm) {
  if (beam_width < 1) throw UsageError("beam_decode: beam width must be at least 1");
  EncodeResult enc = encode(features, params, cfg);

  std::vector<detail::BeamEntry> live;
  live.push_back(detail::BeamEntry{{}, 0.0, std::move(enc.final_state), Vocab::kStart});
  std::vector<Hypothesis> completed;

  std::vector<double> lsm(static_cast<std::size_t>(cfg.vocab_size));
  for (int t = 0; t < cfg.t_dec_max && !live.empty(); ++t) {
    struct Cand {
      std::size_t parent;
      int token;
      double log_prob;
      std::vector<int> tokens;
    };
    std::vector<Cand> cands;
    std::vector<CellState> next_states(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      DecodeStep step = decode_step(live[i].prev_token, live[i].state, enc.states, params, cfg);
      next_states[i] = std::move(step.state);
      detail::stable_log_softmax_row(step.logits.data.data(), cfg.vocab_size, lsm.data());
      for (int v = 0; v < cfg.vocab_size; ++v) {
        if (v == Vocab::kPad || v == Vocab::kStart) continue;
        Cand c{i, v, live[i].log_prob + lsm[v], live[i].tokens};
        if (v != Vocab::kEnd) c.tokens.push_back(v);
        cands.push_back(std::move(c));
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      return detail::beam_better(a.log_prob, a.tokens, b.log_prob, b.tokens);
    });
    // top beam_width candidates overall; finished ones retire to the pool
    const std::size_t take = std::min<std::size_t>(beam_width, cands.size());
    std::vector<detail::BeamEntry> next_live;
    for (std::size_t idx = 0; idx < take; ++idx) {
      Cand& c = cands[idx];
      if (c.token == Vocab::kEnd)
        completed.push_back(Hypothesis{std::move(c.tokens), c.log_prob, true});
      else
        next_live.push_back(
            detail::BeamEntry{std::move(c.tokens), c.log_prob, next_states[c.parent], c.token});
    }
    live = std::move(next_live);
  }

  auto pick_best = [&](const std::vector<Hypothesis>& pool) {
    const Hypothesis* best = nullptr;
    for (const Hypothesis& h : pool) {
      if (best == nullptr ||
          detail::beam_better(detail::final_score(h, length_norm), h.tokens,
                              detail::final_score(*best, length_norm), best->tokens))
        best = &h;
    }
    return *best;
  };
  if (!completed.empty()) return pick_best(completed);
  std::vector<Hypothesis> leftovers;
  for (const auto& e : live) leftovers.push_back(Hypothesis{e.tokens, e.log_prob, false});
  if (leftovers.empty()) throw UsageError("beam_decode: no hypotheses produced");
  return pick_best(leftovers);
}

}  // namespace vidcap
