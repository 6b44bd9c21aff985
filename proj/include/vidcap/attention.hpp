#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vidcap/rng.hpp"
#include "vidcap/tensor.hpp"

namespace vidcap {

// Additive attention: e_j = v . tanh(s W_dec + H_j W_enc), weights = softmax(e).
// The broadcast of the projected query over the T encoder rows and the
// weighted sum are both expressed as matmuls against constant ones matrices,
// keeping everything inside the primitive set.

struct AttentionParams {
  Tensor W_dec;  // [d_h, d_a]
  Tensor W_enc;  // [d_h, d_a]
  Tensor v;      // [d_a, 1]

  int d_a() const { return W_dec.shape.empty() ? 0 : W_dec.shape[1]; }

  static AttentionParams init(int d_h, int d_a, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(d_h));
    auto u = [&](Shape s) {
      Tensor t(std::move(s));
      for (double& val : t.data) val = rng.uniform(-k, k);
      return t;
    };
    AttentionParams p;
    p.W_dec = u({d_h, d_a});
    p.W_enc = u({d_h, d_a});
    p.v = u({d_a, 1});
    return p;
  }

  std::vector<std::pair<std::string, Tensor*>> named() {
    return {{"W_dec", &W_dec}, {"W_enc", &W_enc}, {"v", &v}};
  }
};

// s: decoder state [1, d_h]; H: encoder states [T, d_h]. Returns weights as a
// [T, 1] column, positive and summing to 1.
inline Tensor attention_weights(const Tensor& s, const Tensor& H, const AttentionParams& p) {
  detail::require_rank2(H, "attention_weights");
  detail::require_rank2(s, "attention_weights");
  if (H.shape[0] < 1) throw DimensionError("attention_weights: no encoder states");
  if (s.shape[1] != H.shape[1])
    throw DimensionError("attention_weights: state/encoder widths differ, " +
                         shape_str(s.shape) + " vs " + shape_str(H.shape));
  const int t_steps = H.shape[0];
  Tensor enc_proj = matmul(H, p.W_enc);                                   // [T, d_a]
  Tensor dec_proj = matmul(s, p.W_dec);                                   // [1, d_a]
  Tensor dec_rep = matmul(Tensor::ones({t_steps, 1}), dec_proj);          // [T, d_a]
  Tensor scores = matmul(tanh(add(enc_proj, dec_rep)), p.v);              // [T, 1]
  return softmax(scores);
}

// Convex combination of encoder rows: sum_j weights_j * H_j.
inline Tensor context_vector(const Tensor& weights, const Tensor& H) {
  detail::require_rank2(weights, "context_vector");
  detail::require_rank2(H, "context_vector");
  if (weights.shape[0] != H.shape[0] || weights.shape[1] != 1)
    throw DimensionError("context_vector: weights " + shape_str(weights.shape) +
                         " do not match encoder states " + shape_str(H.shape));
  double total = 0.0;
  for (double w : weights.data) total += w;
  if (std::abs(total - 1.0) > 1e-9)
    throw UsageError("context_vector: weights sum to " + std::to_string(total) + ", expected 1");
  const int t_steps = H.shape[0], d_h = H.shape[1];
  Tensor spread = matmul(weights, Tensor::ones({1, d_h}));  // weight per row, [T, d_h]
  Tensor weighted = mul(spread, H);
  return matmul(Tensor::ones({1, t_steps}), weighted);  // column sums, [1, d_h]
}

}  // namespace vidcap
