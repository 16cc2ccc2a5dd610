#pragma once

// Reverse-mode automatic differentiation over small dense tensors.
//
// A Tape records every operation applied to its Vars in execution order, so
// node inputs always precede the node itself and a single reverse sweep over
// the node list is a valid backward pass. Tapes are single-threaded; use one
// tape per thread.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aminet/error.hpp"
#include "aminet/tensor.hpp"

namespace aminet {

class Tape;

enum class OpKind {
  kVariable,
  kConstant,
  kMatMul,
  kAdd,
  kMultiply,
  kTanh,
  kSigmoid,
  kScale,
  kMaskedSoftmax,
  kReduceSum,
  kGatherRows,
  kTranspose,
  kConcatColumns,
  kReshape,
  kBinaryCrossEntropy,
};

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var variable(Tensor value) { return push(OpKind::kVariable, {}, std::move(value), {}, true); }

  /// Leaf treated as a constant: no gradient flows into it.
  Var constant(Tensor value) { return push(OpKind::kConstant, {}, std::move(value), {}, false); }

  const Tensor& value(Var v) const { return node(v).value; }
  OpKind kind(Var v) const { return node(v).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Accumulates d(root)/d(node) for every node. `root` must hold exactly one
  /// value. Gradients from a previous call are discarded.
  void backward(Var root);

  /// Gradient of the last backward root with respect to `v`; zeros when `v`
  /// was not reachable from it.
  Tensor gradient(Var v) const {
    const Node& n = node(v);
    if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
    return Tensor(n.value.shape());
  }

  // Recording interface used by the operations below.
  struct Aux {
    std::vector<bool> mask;
    std::vector<std::size_t> indices;
    std::vector<double> constants;
    double scalar = 0.0;
    std::size_t axis = 0;
  };

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, Aux aux) {
    bool tracked = false;
    for (std::size_t in : inputs) tracked = tracked || nodes_.at(in).tracked;
    return push(kind, std::move(inputs), std::move(value), std::move(aux), tracked);
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    Aux aux;
    bool tracked;
  };

  const Node& node(Var v) const {
    if (v.tape() != this) throw ContractError("variable does not belong to this tape");
    return nodes_.at(v.id());
  }

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, Aux aux, bool tracked) {
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(aux), tracked});
    return Var(this, nodes_.size() - 1);
  }

  void accumulate(std::size_t id, const Tensor& delta) {
    Tensor& g = grads_[id];
    if (g.empty()) {
      g = delta;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
  }

  Tensor& grad_slot(std::size_t id) {
    Tensor& g = grads_[id];
    if (g.empty()) g = Tensor(nodes_[id].value.shape());
    return g;
  }

  void propagate(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound variable");
  return tape_->value(*this);
}

namespace detail {

inline Tape& common_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("use of an unbound variable");
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return *a.tape();
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
  }
}

// C = A·B for row-major [m,k]·[k,n].
inline void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m,
                            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C += A·Bᵀ for A [m,k], B [n,k].
inline void gemm_bt_accumulate(const double* a, const double* b, double* c, std::size_t m,
                               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

// C += Aᵀ·B for A [k,m], B [k,n].
inline void gemm_at_accumulate(const double* a, const double* b, double* c, std::size_t k,
                               std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      const double api = a[p * m + i];
      if (api == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += api * b[p * n + j];
    }
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kProbabilityFloor = 1e-12;

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank("matmul", av, 2);
  detail::require_rank("matmul", bv, 2);
  if (av.shape()[1] != bv.shape()[0]) {
    throw DimensionError("matmul: inner dimensions differ for " + to_string(av.shape()) + " x " +
                         to_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  Tensor out(Shape{m, n});
  detail::gemm_accumulate(av.values().data(), bv.values().data(), out.values().data(), m, k, n);
  return tape.record(OpKind::kMatMul, {a.id(), b.id()}, std::move(out), {});
}

inline Var add(Var a, Var b) {
  Tape& tape = detail::common_tape(a, b);
  detail::require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record(OpKind::kAdd, {a.id(), b.id()}, std::move(out), {});
}

inline Var multiply(Var a, Var b) {
  Tape& tape = detail::common_tape(a, b);
  detail::require_same_shape("multiply", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.record(OpKind::kMultiply, {a.id(), b.id()}, std::move(out), {});
}

inline Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::tanh(v);
  return x.tape()->record(OpKind::kTanh, {x.id()}, std::move(out), {});
}

inline Var sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = detail::sigmoid(v);
  return x.tape()->record(OpKind::kSigmoid, {x.id()}, std::move(out), {});
}

inline Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  Tape::Aux aux;
  aux.scalar = factor;
  return x.tape()->record(OpKind::kScale, {x.id()}, std::move(out), std::move(aux));
}

/// Softmax along the last axis restricted to positions where `mask` is true.
/// Masked positions get probability exactly 0 and receive no gradient.
inline Var masked_softmax(Var logits, const std::vector<bool>& mask) {
  const Tensor& x = logits.value();
  if (x.rank() < 1 || x.rank() > 2) {
    throw DimensionError("masked_softmax: expected rank 1 or 2, got " + to_string(x.shape()));
  }
  const std::size_t cols = x.cols();
  if (mask.size() != cols) {
    throw DimensionError("masked_softmax: mask length " + std::to_string(mask.size()) +
                         " does not match last axis of " + to_string(x.shape()));
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw DegenerateBagError("masked_softmax: every position is masked");
  }
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* in = x.values().data() + r * cols;
    double* o = out.values().data() + r * cols;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[c]) peak = std::max(peak, in[c]);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[c]) {
        o[c] = std::exp(in[c] - peak);
        total += o[c];
      }
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] = mask[c] ? o[c] / total : 0.0;
  }
  Tape::Aux aux;
  aux.mask = mask;
  return logits.tape()->record(OpKind::kMaskedSoftmax, {logits.id()}, std::move(out),
                               std::move(aux));
}

/// Sums along `axis`, removing it from the shape.
inline Var reduce_sum(Var x, std::size_t axis) {
  const Tensor& v = x.value();
  if (axis >= v.rank()) {
    throw DimensionError("reduce_sum: axis " + std::to_string(axis) + " invalid for shape " +
                         to_string(v.shape()));
  }
  Tensor out;
  if (v.rank() == 1) {
    double s = 0.0;
    for (double e : v.values()) s += e;
    out = Tensor::scalar(s);
  } else {
    const std::size_t rows = v.shape()[0], cols = v.shape()[1];
    out = Tensor(Shape{axis == 0 ? cols : rows});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += v(r, c);
    }
  }
  Tape::Aux aux;
  aux.axis = axis;
  return x.tape()->record(OpKind::kReduceSum, {x.id()}, std::move(out), std::move(aux));
}

/// Row lookup `table[ids[i]]`; backward scatter-adds, so repeated ids accumulate.
inline Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& t = table.value();
  detail::require_rank("gather_rows", t, 2);
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t width = t.shape()[1];
  Tensor out(Shape{ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= t.shape()[0]) {
      throw VocabularyError("gather_rows: id " + std::to_string(ids[i]) +
                            " outside table of " + std::to_string(t.shape()[0]) + " rows");
    }
    std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                out.values().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Tape::Aux aux;
  aux.indices.assign(ids.begin(), ids.end());
  return table.tape()->record(OpKind::kGatherRows, {table.id()}, std::move(out), std::move(aux));
}

inline Var transpose(Var x) {
  const Tensor& v = x.value();
  detail::require_rank("transpose", v, 2);
  const std::size_t rows = v.shape()[0], cols = v.shape()[1];
  Tensor out(Shape{cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(c, r) = v(r, c);
  }
  return x.tape()->record(OpKind::kTranspose, {x.id()}, std::move(out), {});
}

/// Side-by-side concatenation of matrices with equal row counts.
inline Var concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_columns: nothing to concatenate");
  Tape& tape = *parts.front().tape();
  const std::size_t rows = parts.front().value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> inputs;
  for (Var p : parts) {
    detail::common_tape(parts.front(), p);
    detail::require_rank("concat_columns", p.value(), 2);
    if (p.value().shape()[0] != rows) {
      throw DimensionError("concat_columns: row counts differ, " +
                           to_string(parts.front().shape()) + " vs " + to_string(p.shape()));
    }
    total += p.value().shape()[1];
    inputs.push_back(p.id());
  }
  Tensor out(Shape{rows, total});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.shape()[1];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) out(r, offset + c) = v(r, c);
    }
    offset += w;
  }
  return tape.record(OpKind::kConcatColumns, std::move(inputs), std::move(out), {});
}

inline Var reshape(Var x, Shape shape) {
  const Tensor& v = x.value();
  if (element_count(shape) != v.size()) {
    throw DimensionError("reshape: cannot view " + to_string(v.shape()) + " as " +
                         to_string(shape));
  }
  Tensor out(std::move(shape), v.values());
  return x.tape()->record(OpKind::kReshape, {x.id()}, std::move(out), {});
}

/// Mean binary cross-entropy of `probabilities` against 0/1 `labels`, with
/// probabilities clamped into [1e-12, 1 - 1e-12] before the logarithm.
inline Var binary_cross_entropy(Var probabilities, std::span<const int> labels) {
  const Tensor& p = probabilities.value();
  if (p.size() == 0 || labels.empty()) throw ContractError("binary_cross_entropy: empty batch");
  if (p.size() != labels.size()) {
    throw ContractError("binary_cross_entropy: " + std::to_string(p.size()) +
                        " probabilities for " + std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  Tape::Aux aux;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], detail::kProbabilityFloor, 1.0 - detail::kProbabilityFloor);
    total -= labels[i] ? std::log(q) : std::log(1.0 - q);
    aux.constants.push_back(labels[i] ? 1.0 : 0.0);
  }
  return probabilities.tape()->record(OpKind::kBinaryCrossEntropy, {probabilities.id()},
                                      Tensor::scalar(total / static_cast<double>(p.size())),
                                      std::move(aux));
}

inline void Tape::backward(Var root) {
  const Node& r = node(root);
  if (r.value.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + to_string(r.value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  grads_[root.id()] = Tensor(r.value.shape(), 1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    if (!grads_[i].empty() && nodes_[i].tracked) propagate(i);
  }
}

inline void Tape::propagate(std::size_t id) {
  const Node& n = nodes_[id];
  const Tensor& g = grads_[id];
  auto tracked = [&](std::size_t k) { return nodes_[n.inputs[k]].tracked; };

  switch (n.kind) {
    case OpKind::kVariable:
    case OpKind::kConstant:
      return;
    case OpKind::kMatMul: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      const std::size_t m = a.shape()[0], k = a.shape()[1], cols = b.shape()[1];
      if (tracked(0)) {
        Tensor& ga = grad_slot(n.inputs[0]);
        detail::gemm_bt_accumulate(g.values().data(), b.values().data(), ga.values().data(), m,
                                   cols, k);
      }
      if (tracked(1)) {
        Tensor& gb = grad_slot(n.inputs[1]);
        detail::gemm_at_accumulate(a.values().data(), g.values().data(), gb.values().data(), m, k,
                                   cols);
      }
      return;
    }
    case OpKind::kAdd:
      if (tracked(0)) accumulate(n.inputs[0], g);
      if (tracked(1)) accumulate(n.inputs[1], g);
      return;
    case OpKind::kMultiply: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      if (tracked(0)) {
        Tensor& ga = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (tracked(1)) {
        Tensor& gb = grad_slot(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      return;
    }
    case OpKind::kTanh: {
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      return;
    }
    case OpKind::kSigmoid: {
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      return;
    }
    case OpKind::kScale: {
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.aux.scalar;
      return;
    }
    case OpKind::kMaskedSoftmax: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t cols = n.value.cols();
      const auto& mask = n.aux.mask;
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        const std::size_t base = r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          if (mask[c]) dot += n.value[base + c] * g[base + c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
          if (mask[c]) gx[base + c] += n.value[base + c] * (g[base + c] - dot);
        }
      }
      return;
    }
    case OpKind::kReduceSum: {
      Tensor& gx = grad_slot(n.inputs[0]);
      if (gx.rank() == 1) {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
      } else {
        const std::size_t rows = gx.shape()[0], cols = gx.shape()[1];
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gx(r, c) += g[n.aux.axis == 0 ? c : r];
        }
      }
      return;
    }
    case OpKind::kGatherRows: {
      Tensor& gt = grad_slot(n.inputs[0]);
      const std::size_t width = gt.shape()[1];
      for (std::size_t i = 0; i < n.aux.indices.size(); ++i) {
        double* dst = gt.values().data() + n.aux.indices[i] * width;
        const double* src = g.values().data() + i * width;
        for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
      }
      return;
    }
    case OpKind::kTranspose: {
      Tensor& gx = grad_slot(n.inputs[0]);
      const std::size_t rows = gx.shape()[0], cols = gx.shape()[1];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gx(r, c) += g(c, r);
      }
      return;
    }
    case OpKind::kConcatColumns: {
      const std::size_t rows = g.shape()[0];
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = nodes_[n.inputs[k]].value.shape()[1];
        if (tracked(k)) {
          Tensor& gp = grad_slot(n.inputs[k]);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, offset + c);
          }
        }
        offset += w;
      }
      return;
    }
    case OpKind::kReshape: {
      Tensor& gx = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      return;
    }
    case OpKind::kBinaryCrossEntropy: {
      Tensor& gp = grad_slot(n.inputs[0]);
      const Tensor& p = nodes_[n.inputs[0]].value;
      const double inv = g[0] / static_cast<double>(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < detail::kProbabilityFloor || p[i] > 1.0 - detail::kProbabilityFloor) continue;
        const double y = n.aux.constants[i];
        gp[i] += inv * (-y / p[i] + (1.0 - y) / (1.0 - p[i]));
      }
      return;
    }
  }
}

}  // namespace aminet
