#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "vidcap/rng.hpp"
#include "vidcap/tensor.hpp"

namespace vidcap {

// Single-step LSTM and GRU cells plus sequence unrolling. State vectors are
// kept as [1, d_h] rows so every intermediate is a rank-2 tensor.

enum class CellKind { Lstm, Gru };

inline const char* cell_name(CellKind k) { return k == CellKind::Lstm ? "lstm" : "gru"; }

struct LstmParams {
  Tensor U_i, U_f, U_o, U_g;  // input-to-gate, [d_in, d_h]
  Tensor W_i, W_f, W_o, W_g;  // hidden-to-gate, [d_h, d_h]
  Tensor b_i, b_f, b_o, b_g;  // [1, d_h]

  int d_in() const { return U_i.shape.empty() ? 0 : U_i.shape[0]; }
  int d_h() const { return U_i.shape.empty() ? 0 : U_i.shape[1]; }

  static LstmParams init(int d_in, int d_h, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(d_h));
    auto u = [&](Shape s) {
      Tensor t(std::move(s));
      for (double& v : t.data) v = rng.uniform(-k, k);
      return t;
    };
    LstmParams p;
    p.U_i = u({d_in, d_h});
    p.U_f = u({d_in, d_h});
    p.U_o = u({d_in, d_h});
    p.U_g = u({d_in, d_h});
    p.W_i = u({d_h, d_h});
    p.W_f = u({d_h, d_h});
    p.W_o = u({d_h, d_h});
    p.W_g = u({d_h, d_h});
    p.b_i = u({1, d_h});
    p.b_f = u({1, d_h});
    p.b_o = u({1, d_h});
    p.b_g = u({1, d_h});
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> named() {
    return {{"U_i", &U_i}, {"U_f", &U_f}, {"U_o", &U_o}, {"U_g", &U_g},
            {"W_i", &W_i}, {"W_f", &W_f}, {"W_o", &W_o}, {"W_g", &W_g},
            {"b_i", &b_i}, {"b_f", &b_f}, {"b_o", &b_o}, {"b_g", &b_g}};
  }
};

struct GruParams {
  Tensor W_zx, W_rx, W_hx;  // [d_in, d_h]
  Tensor W_zh, W_rh, W_hh;  // [d_h, d_h]
  Tensor b_z, b_r, b_h;     // [1, d_h]

  int d_in() const { return W_zx.shape.empty() ? 0 : W_zx.shape[0]; }
  int d_h() const { return W_zx.shape.empty() ? 0 : W_zx.shape[1]; }

  static GruParams init(int d_in, int d_h, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(d_h));
    auto u = [&](Shape s) {
      Tensor t(std::move(s));
      for (double& v : t.data) v = rng.uniform(-k, k);
      return t;
    };
    GruParams p;
    p.W_zx = u({d_in, d_h});
    p.W_rx = u({d_in, d_h});
    p.W_hx = u({d_in, d_h});
    p.W_zh = u({d_h, d_h});
    p.W_rh = u({d_h, d_h});
    p.W_hh = u({d_h, d_h});
    p.b_z = u({1, d_h});
    p.b_r = u({1, d_h});
    p.b_h = u({1, d_h});
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> named() {
    return {{"W_zx", &W_zx}, {"W_rx", &W_rx}, {"W_hx", &W_hx},
            {"W_zh", &W_zh}, {"W_rh", &W_rh}, {"W_hh", &W_hh},
            {"b_z", &b_z},   {"b_r", &b_r},   {"b_h", &b_h}};
  }
};

using CellParams = std::variant<LstmParams, GruParams>;

inline CellKind kind_of(const CellParams& p) {
  return std::holds_alternative<LstmParams>(p) ? CellKind::Lstm : CellKind::Gru;
}

struct LstmState {
  Tensor h;  // [1, d_h]
  Tensor c;  // [1, d_h]
};

// Hidden state threaded through either cell; c is empty for a GRU.
struct CellState {
  Tensor h;
  Tensor c;
  bool has_c() const { return !c.shape.empty(); }
};

// Gate activations captured during one step, for range assertions and
// inspection. Plain values, never tape-tracked.
struct GateTrace {
  CellKind kind = CellKind::Lstm;
  std::vector<double> i, f, o, c_cand;  // LSTM
  std::vector<double> z, r, h_cand;     // GRU
};

inline std::pair<LstmState, GateTrace> lstm_step(const Tensor& x, const LstmState& prev,
                                                 const LstmParams& p) {
  Tensor i = sigmoid(add(add(matmul(x, p.U_i), matmul(prev.h, p.W_i)), p.b_i));
  Tensor f = sigmoid(add(add(matmul(x, p.U_f), matmul(prev.h, p.W_f)), p.b_f));
  Tensor o = sigmoid(add(add(matmul(x, p.U_o), matmul(prev.h, p.W_o)), p.b_o));
  Tensor c_cand = tanh(add(add(matmul(x, p.U_g), matmul(prev.h, p.W_g)), p.b_g));
  Tensor c = add(mul(f, prev.c), mul(i, c_cand));
  Tensor h = mul(tanh(c), o);
  GateTrace trace;
  trace.kind = CellKind::Lstm;
  trace.i = i.data;
  trace.f = f.data;
  trace.o = o.data;
  trace.c_cand = c_cand.data;
  return {LstmState{std::move(h), std::move(c)}, std::move(trace)};
}

inline std::pair<Tensor, GateTrace> gru_step(const Tensor& x, const Tensor& h_prev,
                                             const GruParams& p) {
  Tensor z = sigmoid(add(add(matmul(x, p.W_zx), matmul(h_prev, p.W_zh)), p.b_z));
  Tensor r = sigmoid(add(add(matmul(x, p.W_rx), matmul(h_prev, p.W_rh)), p.b_r));
  Tensor h_cand = tanh(add(add(matmul(x, p.W_hx), matmul(mul(r, h_prev), p.W_hh)), p.b_h));
  Tensor keep = mul(z, h_prev);
  Tensor blend = mul(sub(Tensor::ones(z.shape), z), h_cand);
  Tensor h = add(keep, blend);
  GateTrace trace;
  trace.kind = CellKind::Gru;
  trace.z = z.data;
  trace.r = r.data;
  trace.h_cand = h_cand.data;
  return {std::move(h), std::move(trace)};
}

inline CellState cell_step(const Tensor& x, const CellState& prev, const CellParams& p,
                           GateTrace* trace = nullptr) {
  if (const auto* lstm = std::get_if<LstmParams>(&p)) {
    auto [state, tr] = lstm_step(x, LstmState{prev.h, prev.c}, *lstm);
    if (trace) *trace = std::move(tr);
    return CellState{std::move(state.h), std::move(state.c)};
  }
  const auto& gru = std::get<GruParams>(p);
  auto [h, tr] = gru_step(x, prev.h, gru);
  if (trace) *trace = std::move(tr);
  return CellState{std::move(h), Tensor{}};
}

inline CellState zero_state(const CellParams& p) {
  const int d_h = std::visit([](const auto& q) { return q.d_h(); }, p);
  CellState s;
  s.h = Tensor::zeros({1, d_h});
  if (kind_of(p) == CellKind::Lstm) s.c = Tensor::zeros({1, d_h});
  return s;
}

struct UnrollResult {
  Tensor states;  // [T, d_h], one row per step
  CellState final_state;
  std::vector<GateTrace> traces;
};

// Sequential fold over the rows of inputs [T, d_in]; state at step t depends
// only on inputs 1..t.
inline UnrollResult unroll(const CellParams& p, const Tensor& inputs, const CellState& init) {
  detail::require_rank2(inputs, "unroll");
  const int t_steps = inputs.shape[0];
  if (t_steps < 1) throw DimensionError("unroll: need at least one time step");
  UnrollResult out;
  CellState state = init;
  for (int t = 0; t < t_steps; ++t) {
    GateTrace trace;
    state = cell_step(slice_row(inputs, t), state, p, &trace);
    out.traces.push_back(std::move(trace));
    out.states = (t == 0) ? state.h : concat(out.states, state.h, 0);
  }
  out.final_state = std::move(state);
  return out;
}

}  // namespace vidcap
