#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vidcap/error.hpp"

namespace vidcap {

// Dense row-major 64-bit tensor plus a reverse-mode tape over a fixed
// primitive set: matmul, add/sub/mul, tanh/sigmoid/exp/log, softmax, concat,
// slice-row, sum, mean, embedding-lookup, and a fused masked cross-entropy
// (the stable log-softmax form used by the loss). Tensors created outside a
// tape are plain values; an op records itself when any operand is tracked.
// Tape construction is single-threaded per model instance.

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("tensor shape has non-positive dimension " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

class Tape;

struct Tensor {
  Shape shape;
  std::vector<double> data;
  Tape* tape = nullptr;
  int node = -1;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    for (double v : data)
      if (!std::isfinite(v)) throw NumericError("tensor constructed with non-finite value");
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor ones(Shape s) { return full(std::move(s), 1.0); }

  std::size_t size() const { return data.size(); }
  bool tracked() const { return tape != nullptr; }
  bool is_scalar() const { return data.size() == 1; }

  int rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? 1 : 0); }
  int cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? shape[0] : 0); }

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }
};

enum class OpKind : std::uint8_t {
  Leaf,
  Matmul,
  Add,
  Sub,
  Mul,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Softmax,
  ConcatRows,
  ConcatCols,
  SliceRow,
  Sum,
  Mean,
  Embedding,
  CrossEntropy,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Matmul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Softmax: return "softmax";
    case OpKind::ConcatRows: return "concat(rows)";
    case OpKind::ConcatCols: return "concat(cols)";
    case OpKind::SliceRow: return "slice_row";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Embedding: return "embedding_lookup";
    case OpKind::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

inline void ensure_finite(const std::vector<double>& v, OpKind op) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite value produced by ") + op_name(op));
}

// Ordered list of recorded primitives. Every record's operands precede it, so
// a reverse sweep from the loss node is a valid reverse-topological order.
class Tape {
 public:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::array<int, 2> arg{-1, -1};
    Shape shape;
    std::vector<double> value;  // saved forward values for the backward rule
    std::vector<double> grad;
    std::vector<int> aux;  // op-specific ints (row index, token ids, targets+mask)
  };

  // Registers t as a differentiable leaf and returns a tracked handle to it.
  Tensor watch(const Tensor& t) {
    if (t.tape == this) return t;
    if (t.tape != nullptr) throw UsageError("watch: tensor already tracked on another tape");
    Tensor out = t;
    out.tape = this;
    out.node = push(OpKind::Leaf, -1, -1, t.shape, t.data, {});
    return out;
  }

  // Populates gradients for every node at or before the loss by reverse
  // traversal. Leaves that do not reach the loss keep a zero gradient.
  void backward(const Tensor& loss) {
    if (loss.tape != this || loss.node < 0)
      throw UsageError("backward: loss was not produced on this tape");
    if (!loss.is_scalar())
      throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape));
    has_grads_ = true;
    for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
    nodes_[loss.node].grad[0] = 1.0;
    for (int id = loss.node; id >= 0; --id) apply_backward(id);
  }

  Tensor grad(const Tensor& t) const {
    if (t.tape != this || t.node < 0) throw UsageError("grad: tensor is not tracked on this tape");
    if (!has_grads_) throw UsageError("grad: backward() has not been run");
    const Node& n = nodes_[t.node];
    return Tensor(n.shape, n.grad);
  }

  std::size_t size() const { return nodes_.size(); }

  int push(OpKind op, int a, int b, Shape shape, std::vector<double> value, std::vector<int> aux) {
    Node n;
    n.op = op;
    n.arg = {a, b};
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.aux = std::move(aux);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Untracked operands of a tracked op become implicit leaves; their
  // gradients are computed and discarded.
  int ensure_node(const Tensor& t) {
    if (t.tape == this) return t.node;
    if (t.tape != nullptr) throw UsageError("operands live on different tapes");
    return push(OpKind::Leaf, -1, -1, t.shape, t.data, {});
  }

  const Node& node(int id) const { return nodes_[id]; }

 private:
  void apply_backward(int id);

  std::vector<Node> nodes_;
  bool has_grads_ = false;
};

namespace detail {

inline Tape* result_tape(const Tensor& a, const Tensor* b) {
  if (b != nullptr && a.tape != nullptr && b->tape != nullptr && a.tape != b->tape)
    throw UsageError("operands live on different tapes");
  if (a.tape != nullptr) return a.tape;
  return b != nullptr ? b->tape : nullptr;
}

inline Tensor finish(OpKind op, const Tensor& a, const Tensor* b, Shape shape,
                     std::vector<double> value, std::vector<int> aux = {}) {
  ensure_finite(value, op);
  Tensor out;
  out.shape = std::move(shape);
  out.data = std::move(value);
  if (Tape* tp = result_tape(a, b)) {
    int ia = tp->ensure_node(a);
    int ib = b != nullptr ? tp->ensure_node(*b) : -1;
    out.node = tp->push(op, ia, ib, out.shape, out.data, std::move(aux));
    out.tape = tp;
  }
  return out;
}

inline void require_rank2(const Tensor& t, const char* who) {
  if (t.shape.size() != 2)
    throw DimensionError(std::string(who) + ": expected a rank-2 tensor, got shape " + shape_str(t.shape));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.shape[1] != b.shape[0])
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = a.data[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      const double* brow = &b.data[static_cast<std::size_t>(p) * n];
      double* orow = &out[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return detail::finish(OpKind::Matmul, a, &b, {m, n}, std::move(out));
}

enum class EwOp { Add, Sub, Mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, EwOp op) {
  if (a.shape != b.shape)
    throw DimensionError("elementwise: shapes differ, " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  std::vector<double> out(a.size());
  switch (op) {
    case EwOp::Add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] + b.data[i];
      return detail::finish(OpKind::Add, a, &b, a.shape, std::move(out));
    case EwOp::Sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] - b.data[i];
      return detail::finish(OpKind::Sub, a, &b, a.shape, std::move(out));
    case EwOp::Mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data[i] * b.data[i];
      return detail::finish(OpKind::Mul, a, &b, a.shape, std::move(out));
  }
  throw UsageError("elementwise: unknown op");
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwOp::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwOp::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwOp::Mul); }

enum class UnaryOp { Tanh, Sigmoid, Exp, Log };

inline Tensor map_unary(const Tensor& t, UnaryOp f) {
  std::vector<double> out(t.size());
  switch (f) {
    case UnaryOp::Tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(t.data[i]);
      return detail::finish(OpKind::Tanh, t, nullptr, t.shape, std::move(out));
    case UnaryOp::Sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-t.data[i]));
      return detail::finish(OpKind::Sigmoid, t, nullptr, t.shape, std::move(out));
    case UnaryOp::Exp:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(t.data[i]);
      return detail::finish(OpKind::Exp, t, nullptr, t.shape, std::move(out));
    case UnaryOp::Log:
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (t.data[i] <= 0.0) throw NumericError("log: non-positive input value");
        out[i] = std::log(t.data[i]);
      }
      return detail::finish(OpKind::Log, t, nullptr, t.shape, std::move(out));
  }
  throw UsageError("map_unary: unknown op");
}

inline Tensor tanh(const Tensor& t) { return map_unary(t, UnaryOp::Tanh); }
inline Tensor sigmoid(const Tensor& t) { return map_unary(t, UnaryOp::Sigmoid); }
inline Tensor exp(const Tensor& t) { return map_unary(t, UnaryOp::Exp); }
inline Tensor log(const Tensor& t) { return map_unary(t, UnaryOp::Log); }

// Vector softmax with max subtraction. Accepts any tensor holding one vector
// (rank-1 [n], row [1,n], or column [n,1]) and normalizes over all entries,
// preserving the input shape.
inline Tensor softmax(const Tensor& t) {
  if (t.size() == 0 || t.shape.empty()) throw DimensionError("softmax: empty input");
  const double m = *std::max_element(t.data.begin(), t.data.end());
  std::vector<double> out(t.size());
  double den = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(t.data[i] - m);
    den += out[i];
  }
  for (double& v : out) v /= den;
  return detail::finish(OpKind::Softmax, t, nullptr, t.shape, std::move(out));
}

inline Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  detail::require_rank2(a, "concat");
  detail::require_rank2(b, "concat");
  if (axis == 0) {
    if (a.shape[1] != b.shape[1])
      throw DimensionError("concat(rows): column counts differ, " + shape_str(a.shape) + " vs " +
                           shape_str(b.shape));
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.data.begin(), a.data.end());
    out.insert(out.end(), b.data.begin(), b.data.end());
    return detail::finish(OpKind::ConcatRows, a, &b, {a.shape[0] + b.shape[0], a.shape[1]},
                          std::move(out), {a.shape[0]});
  }
  if (axis == 1) {
    if (a.shape[0] != b.shape[0])
      throw DimensionError("concat(cols): row counts differ, " + shape_str(a.shape) + " vs " +
                           shape_str(b.shape));
    const int r = a.shape[0], ca = a.shape[1], cb = b.shape[1];
    std::vector<double> out(static_cast<std::size_t>(r) * (ca + cb));
    for (int i = 0; i < r; ++i) {
      std::copy_n(&a.data[static_cast<std::size_t>(i) * ca], ca,
                  &out[static_cast<std::size_t>(i) * (ca + cb)]);
      std::copy_n(&b.data[static_cast<std::size_t>(i) * cb], cb,
                  &out[static_cast<std::size_t>(i) * (ca + cb) + ca]);
    }
    return detail::finish(OpKind::ConcatCols, a, &b, {r, ca + cb}, std::move(out), {ca});
  }
  throw UsageError("concat: axis must be 0 or 1");
}

inline Tensor slice_row(const Tensor& t, int row) {
  detail::require_rank2(t, "slice_row");
  if (row < 0 || row >= t.shape[0])
    throw DimensionError("slice_row: row " + std::to_string(row) + " out of range for " +
                         shape_str(t.shape));
  const int c = t.shape[1];
  std::vector<double> out(t.data.begin() + static_cast<std::size_t>(row) * c,
                          t.data.begin() + static_cast<std::size_t>(row + 1) * c);
  return detail::finish(OpKind::SliceRow, t, nullptr, {1, c}, std::move(out), {row});
}

inline Tensor sum(const Tensor& t) {
  double s = std::accumulate(t.data.begin(), t.data.end(), 0.0);
  return detail::finish(OpKind::Sum, t, nullptr, {1, 1}, {s});
}

inline Tensor mean(const Tensor& t) {
  double s = std::accumulate(t.data.begin(), t.data.end(), 0.0);
  return detail::finish(OpKind::Mean, t, nullptr, {1, 1}, {s / static_cast<double>(t.size())});
}

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  detail::require_rank2(table, "embedding_lookup");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const int v = table.shape[0], d = table.shape[1];
  std::vector<double> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw UsageError("embedding_lookup: id " + std::to_string(ids[i]) +
                       " out of range for table " + shape_str(table.shape));
    std::copy_n(&table.data[static_cast<std::size_t>(ids[i]) * d], d, &out[i * d]);
  }
  return detail::finish(OpKind::Embedding, table, nullptr,
                        {static_cast<int>(ids.size()), d}, std::move(out), ids);
}

namespace detail {

inline void stable_log_softmax_row(const double* x, int n, double* out) {
  double m = x[0];
  for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
  double den = 0.0;
  for (int i = 0; i < n; ++i) den += std::exp(x[i] - m);
  const double lse = m + std::log(den);
  for (int i = 0; i < n; ++i) out[i] = x[i] - lse;
}

}  // namespace detail

// Mean over masked positions of -log softmax(logits_t)[target_t], fused with
// a stable log-softmax. All-masked input yields a zero loss.
inline Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                                   const std::vector<int>& mask) {
  detail::require_rank2(logits, "cross_entropy");
  const int t_steps = logits.shape[0], v = logits.shape[1];
  if (static_cast<int>(targets.size()) != t_steps || static_cast<int>(mask.size()) != t_steps)
    throw DimensionError("cross_entropy: targets/mask length must equal logits rows " +
                         shape_str(logits.shape));
  int count = 0;
  for (int t = 0; t < t_steps; ++t) {
    if (targets[t] < 0 || targets[t] >= v)
      throw UsageError("cross_entropy: target id " + std::to_string(targets[t]) + " out of range");
    if (mask[t] != 0) ++count;
  }
  double loss = 0.0;
  std::vector<double> lsm(v);
  for (int t = 0; t < t_steps; ++t) {
    if (mask[t] == 0) continue;
    detail::stable_log_softmax_row(&logits.data[static_cast<std::size_t>(t) * v], v, lsm.data());
    loss -= lsm[targets[t]];
  }
  if (count > 0) loss /= count;
  std::vector<int> aux;
  aux.reserve(2 * targets.size());
  aux.insert(aux.end(), targets.begin(), targets.end());
  aux.insert(aux.end(), mask.begin(), mask.end());
  return detail::finish(OpKind::CrossEntropy, logits, nullptr, {1, 1}, {loss}, std::move(aux));
}

inline void Tape::apply_backward(int id) {
  Node& n = nodes_[id];
  if (n.op == OpKind::Leaf) return;
  ensure_finite(n.grad, n.op);
  Node& a = nodes_[n.arg[0]];
  switch (n.op) {
    case OpKind::Matmul: {
      Node& b = nodes_[n.arg[1]];
      const int m = a.shape[0], k = a.shape[1], c = b.shape[1];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) {
          double acc = 0.0;
          const double* grow = &n.grad[static_cast<std::size_t>(i) * c];
          const double* brow = &b.value[static_cast<std::size_t>(j) * c];
          for (int p = 0; p < c; ++p) acc += grow[p] * brow[p];
          a.grad[static_cast<std::size_t>(i) * k + j] += acc;
        }
      for (int j = 0; j < k; ++j)
        for (int p = 0; p < c; ++p) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i)
            acc += a.value[static_cast<std::size_t>(i) * k + j] *
                   n.grad[static_cast<std::size_t>(i) * c + p];
          b.grad[static_cast<std::size_t>(j) * c + p] += acc;
        }
      break;
    }
    case OpKind::Add: {
      Node& b = nodes_[n.arg[1]];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        a.grad[i] += n.grad[i];
        b.grad[i] += n.grad[i];
      }
      break;
    }
    case OpKind::Sub: {
      Node& b = nodes_[n.arg[1]];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        a.grad[i] += n.grad[i];
        b.grad[i] -= n.grad[i];
      }
      break;
    }
    case OpKind::Mul: {
      Node& b = nodes_[n.arg[1]];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        a.grad[i] += n.grad[i] * b.value[i];
        b.grad[i] += n.grad[i] * a.value[i];
      }
      break;
    }
    case OpKind::Tanh:
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        a.grad[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    case OpKind::Sigmoid:
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        a.grad[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
      break;
    case OpKind::Exp:
      for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] * n.value[i];
      break;
    case OpKind::Log:
      for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] / a.value[i];
      break;
    case OpKind::Softmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < n.grad.size(); ++i) dot += n.grad[i] * n.value[i];
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        a.grad[i] += n.value[i] * (n.grad[i] - dot);
      break;
    }
    case OpKind::ConcatRows: {
      Node& b = nodes_[n.arg[1]];
      const std::size_t na = a.value.size();
      for (std::size_t i = 0; i < na; ++i) a.grad[i] += n.grad[i];
      for (std::size_t i = 0; i < b.value.size(); ++i) b.grad[i] += n.grad[na + i];
      break;
    }
    case OpKind::ConcatCols: {
      Node& b = nodes_[n.arg[1]];
      const int r = a.shape[0], ca = a.shape[1], cb = b.shape[1];
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j)
          a.grad[static_cast<std::size_t>(i) * ca + j] +=
              n.grad[static_cast<std::size_t>(i) * (ca + cb) + j];
        for (int j = 0; j < cb; ++j)
          b.grad[static_cast<std::size_t>(i) * cb + j] +=
              n.grad[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
      }
      break;
    }
    case OpKind::SliceRow: {
      const int row = n.aux[0], c = a.shape[1];
      for (int j = 0; j < c; ++j)
        a.grad[static_cast<std::size_t>(row) * c + j] += n.grad[j];
      break;
    }
    case OpKind::Sum:
      for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += n.grad[0];
      break;
    case OpKind::Mean: {
      const double g = n.grad[0] / static_cast<double>(a.value.size());
      for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += g;
      break;
    }
    case OpKind::Embedding: {
      const int d = n.shape[1];
      for (std::size_t i = 0; i < n.aux.size(); ++i) {
        const std::size_t src = i * d, dst = static_cast<std::size_t>(n.aux[i]) * d;
        for (int j = 0; j < d; ++j) a.grad[dst + j] += n.grad[src + j];
      }
      break;
    }
    case OpKind::CrossEntropy: {
      const int t_steps = a.shape[0], v = a.shape[1];
      const int* targets = n.aux.data();
      const int* mask = n.aux.data() + t_steps;
      int count = 0;
      for (int t = 0; t < t_steps; ++t) count += mask[t] != 0;
      if (count == 0) break;
      const double g0 = n.grad[0] / count;
      std::vector<double> lsm(v);
      for (int t = 0; t < t_steps; ++t) {
        if (mask[t] == 0) continue;
        const double* row = &a.value[static_cast<std::size_t>(t) * v];
        detail::stable_log_softmax_row(row, v, lsm.data());
        double* grow = &a.grad[static_cast<std::size_t>(t) * v];
        for (int j = 0; j < v; ++j) grow[j] += g0 * std::exp(lsm[j]);
        grow[targets[t]] -= g0;
      }
      break;
    }
    case OpKind::Leaf:
      break;
  }
}

}  // namespace vidcap
