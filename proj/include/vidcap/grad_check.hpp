#pragma once

#include <functional>
#include <vector>

#include "vidcap/tensor.hpp"

namespace vidcap {

// A tensor program maps a set of inputs to a scalar. It is evaluated twice by
// the checker: once on a tape with watched inputs (analytic path) and many
// times with tape == nullptr on perturbed copies (numeric path).
using TensorProgram = std::function<Tensor(Tape*, std::vector<Tensor>&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

inline std::vector<Tensor> analytic_gradients(const TensorProgram& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Tensor> tracked;
  tracked.reserve(inputs.size());
  for (const Tensor& t : inputs) tracked.push_back(tape.watch(t));
  Tensor loss = f(&tape, tracked);
  if (!loss.is_scalar()) throw UsageError("grad_check: program must return a scalar");
  std::vector<Tensor> grads;
  grads.reserve(tracked.size());
  if (!loss.tracked()) {  // constant program: every leaf gradient is zero
    for (const Tensor& t : tracked) grads.push_back(Tensor::zeros(t.shape));
    return grads;
  }
  tape.backward(loss);
  for (const Tensor& t : tracked) grads.push_back(tape.grad(t));
  return grads;
}

inline std::vector<Tensor> numeric_gradients(const TensorProgram& f, const std::vector<Tensor>& inputs,
                                             double eps = 1e-5) {
  std::vector<Tensor> grads;
  grads.reserve(inputs.size());
  std::vector<Tensor> work = inputs;
  for (std::size_t i = 0; i < work.size(); ++i) {
    Tensor g(work[i].shape);
    for (std::size_t j = 0; j < work[i].size(); ++j) {
      const double orig = work[i].data[j];
      work[i].data[j] = orig + eps;
      Tensor up = f(nullptr, work);
      work[i].data[j] = orig - eps;
      Tensor down = f(nullptr, work);
      work[i].data[j] = orig;
      g.data[j] = (up.data[0] - down.data[0]) / (2.0 * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// Max over all input entries of |g_analytic - g_numeric| / max(1, |g_a|, |g_n|)
// with central finite differences.
inline double grad_check(const TensorProgram& f, const std::vector<Tensor>& inputs,
                         double eps = 1e-5) {
  std::vector<Tensor> analytic = analytic_gradients(f, inputs);
  std::vector<Tensor> numeric = numeric_gradients(f, inputs, eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    for (std::size_t j = 0; j < analytic[i].size(); ++j)
      worst = std::max(worst, relative_error(analytic[i].data[j], numeric[i].data[j]));
  return worst;
}

}  // namespace vidcap
