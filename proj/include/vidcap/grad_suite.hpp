#pragma once

#include <string>
#include <vector>

#include "vidcap/grad_check.hpp"
#include "vidcap/model.hpp"
#include "vidcap/train.hpp"

namespace vidcap {

// End-to-end gradient verification of the teacher-forced loss on a tiny
// configuration, for all four model variants.

inline ModelConfig tiny_grad_config(CellKind cell, bool attention) {
  ModelConfig cfg;
  cfg.cell = cell;
  cfg.attention = attention;
  cfg.d_feat = 6;
  cfg.t_enc = 4;
  cfg.d_h = 5;
  cfg.d_emb = 4;
  cfg.vocab_size = 12;
  cfg.t_dec_max = 3;
  return cfg;
}

struct GradSuiteEntry {
  std::string variant;
  double max_rel_err = 0.0;
};

inline double teacher_forced_loss_grad_error(const ModelConfig& cfg, std::uint64_t seed,
                                             double eps = 1e-5) {
  Rng rng = derive_stream(seed, "init");
  ModelParams base = ModelParams::init(cfg, rng);

  Tensor features({cfg.t_enc, cfg.d_feat});
  for (double& v : features.data) v = rng.uniform(-1.0, 1.0);
  std::vector<int> targets(cfg.t_dec_max);
  std::vector<int> mask(cfg.t_dec_max, 1);
  for (int& t : targets)
    t = 4 + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(cfg.vocab_size - 4)));

  std::vector<Tensor> inputs;
  {
    auto named = base.named();
    for (auto& [name, t] : named) {
      (void)name;
      inputs.push_back(*t);
    }
  }
  TensorProgram program = [&](Tape* tape, std::vector<Tensor>& ts) {
    (void)tape;  // tracked-ness travels with the tensors themselves
    ModelParams p = base;
    auto named = p.named();
    for (std::size_t k = 0; k < named.size(); ++k) *named[k].second = ts[k];
    Tensor logits = teacher_forced_forward(features, targets, p, cfg);
    return masked_cross_entropy(logits, targets, mask);
  };
  return grad_check(program, inputs, eps);
}

inline std::vector<GradSuiteEntry> gradient_suite(std::uint64_t seed, double eps = 1e-5) {
  std::vector<GradSuiteEntry> out;
  for (CellKind cell : {CellKind::Lstm, CellKind::Gru})
    for (bool attention : {false, true}) {
      ModelConfig cfg = tiny_grad_config(cell, attention);
      GradSuiteEntry e;
      e.variant = cfg.variant_label();
      e.max_rel_err = teacher_forced_loss_grad_error(cfg, seed, eps);
      out.push_back(std::move(e));
    }
  return out;
}

}  // namespace vidcap
