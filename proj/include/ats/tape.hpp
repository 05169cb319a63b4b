#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ats/errors.hpp"
#include "ats/tensor.hpp"

namespace ats {

// Reverse-mode autodiff over a fixed primitive set: exactly what the score
// model needs, nothing more. A Tape owns the nodes of one computation;
// values are immutable once produced. Every forward result is checked for
// NaN/Inf and the first offending node is named in the error.
template <class T>
class Tape {
 public:
  using Id = int32_t;

  enum class Op : uint8_t {
    input,
    add,
    sub,
    mul,
    add_rowvec,
    scale,
    matmul,
    matmul_nt,
    silu,
    rmsnorm,
    softmax,
    log_softmax,
    causal_softmax,
    embedding,
    concat_rows,
    concat_cols,
    slice_rows,
    slice_cols,
    sum_all,
    dot,
    nll_masked,
  };

  Id input(Tensor<T> value, std::string label, bool requires_grad) {
    Node n;
    n.op = Op::input;
    n.val = std::move(value);
    n.needs_grad = requires_grad;
    n.label = std::move(label);
    return push(std::move(n));
  }

  Id constant(Tensor<T> value, std::string label = "") {
    return input(std::move(value), std::move(label), false);
  }

  const Tensor<T>& value(Id id) const { return nodes_[id].val; }

  // Gradient of the last backward() root w.r.t. node `id`; zeros if the node
  // was never touched by the backward sweep.
  Tensor<T> grad(Id id) const {
    const Node& n = nodes_[id];
    if (n.grad.numel() == 0) return Tensor<T>::zeros(n.val.shape());
    return n.grad;
  }

  bool has_grad(Id id) const { return nodes_[id].grad.numel() != 0; }
  size_t size() const { return nodes_.size(); }

  // ---- primitives ----

  Id add(Id a, Id b) {
    require_same_shape(a, b, "add");
    Node n = binary(Op::add, a, b);
    n.val = nodes_[a].val;
    const T* pb = nodes_[b].val.data();
    T* pv = n.val.data();
    for (size_t i = 0; i < n.val.numel(); ++i) pv[i] += pb[i];
    return push(std::move(n));
  }

  Id sub(Id a, Id b) {
    require_same_shape(a, b, "sub");
    Node n = binary(Op::sub, a, b);
    n.val = nodes_[a].val;
    const T* pb = nodes_[b].val.data();
    T* pv = n.val.data();
    for (size_t i = 0; i < n.val.numel(); ++i) pv[i] -= pb[i];
    return push(std::move(n));
  }

  Id mul(Id a, Id b) {
    require_same_shape(a, b, "mul");
    Node n = binary(Op::mul, a, b);
    n.val = nodes_[a].val;
    const T* pb = nodes_[b].val.data();
    T* pv = n.val.data();
    for (size_t i = 0; i < n.val.numel(); ++i) pv[i] *= pb[i];
    return push(std::move(n));
  }

  // mat {m,n} + row vector {n}, broadcast over rows.
  Id add_rowvec(Id a, Id v) {
    const Tensor<T>& ta = nodes_[a].val;
    const Tensor<T>& tv = nodes_[v].val;
    if (tv.rank() != 1 || tv.cols() != ta.cols()) {
      throw ShapeError("add_rowvec: vector " + tv.shape_str() +
                       " does not match matrix " + ta.shape_str());
    }
    Node n = binary(Op::add_rowvec, a, v);
    n.val = ta;
    for (size_t r = 0; r < ta.rows(); ++r)
      for (size_t c = 0; c < ta.cols(); ++c) n.val.at(r, c) += tv[c];
    return push(std::move(n));
  }

  Id scale(Id a, T factor) {
    Node n = unary(Op::scale, a);
    n.aux = factor;
    n.val = nodes_[a].val;
    for (auto& x : n.val.vec()) x *= factor;
    return push(std::move(n));
  }

  Id neg(Id a) { return scale(a, T(-1)); }

  // a {m,k} x b {k,n} -> {m,n}
  Id matmul(Id a, Id b) {
    const Tensor<T>& ta = nodes_[a].val;
    const Tensor<T>& tb = nodes_[b].val;
    if (ta.cols() != tb.rows()) {
      throw ShapeError("matmul: " + ta.shape_str() + " x " + tb.shape_str());
    }
    const size_t m = ta.rows(), k = ta.cols(), nn = tb.cols();
    Node n = binary(Op::matmul, a, b);
    n.val = Tensor<T>::zeros({m, nn});
    const T* pa = ta.data();
    const T* pb = tb.data();
    T* pc = n.val.data();
    for (size_t i = 0; i < m; ++i) {
      T* crow = pc + i * nn;
      for (size_t p = 0; p < k; ++p) {
        const T av = pa[i * k + p];
        // exact-zero weights contribute nothing; this also keeps rows behind
        // a causal mask bit-exactly independent of masked-out inputs
        if (av == T(0)) continue;
        const T* brow = pb + p * nn;
        for (size_t j = 0; j < nn; ++j) crow[j] += av * brow[j];
      }
    }
    return push(std::move(n));
  }

  // a {m,k} x b^T where b {n,k} -> {m,n}
  Id matmul_nt(Id a, Id b) {
    const Tensor<T>& ta = nodes_[a].val;
    const Tensor<T>& tb = nodes_[b].val;
    if (ta.cols() != tb.cols()) {
      throw ShapeError("matmul_nt: " + ta.shape_str() + " x " + tb.shape_str() + "^T");
    }
    const size_t m = ta.rows(), k = ta.cols(), nn = tb.rows();
    Node n = binary(Op::matmul_nt, a, b);
    n.val = Tensor<T>::zeros({m, nn});
    const T* pa = ta.data();
    const T* pb = tb.data();
    T* pc = n.val.data();
    for (size_t i = 0; i < m; ++i) {
      const T* arow = pa + i * k;
      for (size_t j = 0; j < nn; ++j) {
        const T* brow = pb + j * k;
        T acc = T(0);
        for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        pc[i * nn + j] = acc;
      }
    }
    return push(std::move(n));
  }

  Id silu(Id a) {
    Node n = unary(Op::silu, a);
    n.val = nodes_[a].val;
    for (auto& x : n.val.vec()) {
      const T s = sigmoid(x);
      x = x * s;
    }
    return push(std::move(n));
  }

  // Per-row RMS normalization with a learned gain vector:
  //   y = x / sqrt(mean(x^2) + eps) * gain
  Id rmsnorm(Id a, Id gain, T eps) {
    const Tensor<T>& ta = nodes_[a].val;
    const Tensor<T>& tg = nodes_[gain].val;
    if (tg.rank() != 1 || tg.cols() != ta.cols()) {
      throw ShapeError("rmsnorm: gain " + tg.shape_str() + " vs " + ta.shape_str());
    }
    Node n = binary(Op::rmsnorm, a, gain);
    n.aux = eps;
    n.val = Tensor<T>(ta.shape());
    const size_t rows = ta.rows(), cols = ta.cols();
    for (size_t r = 0; r < rows; ++r) {
      const T* x = ta.data() + r * cols;
      T* y = n.val.data() + r * cols;
      T ms = T(0);
      for (size_t c = 0; c < cols; ++c) ms += x[c] * x[c];
      ms = ms / static_cast<T>(cols) + eps;
      const T inv = T(1) / std::sqrt(ms);
      for (size_t c = 0; c < cols; ++c) y[c] = x[c] * inv * tg[c];
    }
    return push(std::move(n));
  }

  Id softmax(Id a) { return rowwise_softmax(a, /*log_domain=*/false); }
  Id log_softmax(Id a) { return rowwise_softmax(a, /*log_domain=*/true); }

  // Square score matrix {n,n}; row i is a softmax over columns j <= i.
  // Masked entries are never read or exponentiated, so hidden state t is a
  // bit-exact function of positions <= t.
  Id causal_softmax(Id a) {
    const Tensor<T>& ta = nodes_[a].val;
    if (ta.rank() != 2 || ta.rows() != ta.cols()) {
      throw ShapeError("causal_softmax: needs a square matrix, got " + ta.shape_str());
    }
    const size_t nn = ta.rows();
    Node n = unary(Op::causal_softmax, a);
    n.val = Tensor<T>::zeros({nn, nn});
    for (size_t i = 0; i < nn; ++i) {
      const T* x = ta.data() + i * nn;
      T* y = n.val.data() + i * nn;
      T mx = x[0];
      for (size_t j = 1; j <= i; ++j) mx = std::max(mx, x[j]);
      T sum = T(0);
      for (size_t j = 0; j <= i; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
      }
      const T inv = T(1) / sum;
      for (size_t j = 0; j <= i; ++j) y[j] *= inv;
    }
    return push(std::move(n));
  }

  // Gather rows of `table` {V,d} by token id -> {ids.size(), d}.
  Id embedding(Id table, std::vector<int> ids) {
    const Tensor<T>& tt = nodes_[table].val;
    if (tt.rank() != 2) throw ShapeError("embedding: table must be rank 2");
    const size_t v = tt.rows(), d = tt.cols();
    for (int id : ids) {
      if (id < 0 || static_cast<size_t>(id) >= v) {
        throw VocabError("embedding: token id " + std::to_string(id) +
                         " out of range for vocab " + std::to_string(v));
      }
    }
    Node n = unary(Op::embedding, table);
    n.ints = std::move(ids);
    n.val = Tensor<T>::zeros({n.ints.size(), d});
    for (size_t r = 0; r < n.ints.size(); ++r) {
      const T* src = tt.data() + static_cast<size_t>(n.ints[r]) * d;
      std::copy(src, src + d, n.val.data() + r * d);
    }
    return push(std::move(n));
  }

  Id concat_rows(std::vector<Id> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty part list");
    const size_t cols = nodes_[parts[0]].val.cols();
    size_t rows = 0;
    for (Id p : parts) {
      if (nodes_[p].val.cols() != cols) {
        throw ShapeError("concat_rows: column mismatch");
      }
      rows += nodes_[p].val.rows();
    }
    Node n;
    n.op = Op::concat_rows;
    n.list = std::move(parts);
    for (Id p : n.list) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
    n.val = Tensor<T>::zeros({rows, cols});
    size_t r0 = 0;
    for (Id p : n.list) {
      const Tensor<T>& tp = nodes_[p].val;
      std::copy(tp.data(), tp.data() + tp.numel(), n.val.data() + r0 * cols);
      r0 += tp.rows();
    }
    return push(std::move(n));
  }

  Id concat_cols(std::vector<Id> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty part list");
    const size_t rows = nodes_[parts[0]].val.rows();
    size_t cols = 0;
    for (Id p : parts) {
      if (nodes_[p].val.rows() != rows) {
        throw ShapeError("concat_cols: row mismatch");
      }
      cols += nodes_[p].val.cols();
    }
    Node n;
    n.op = Op::concat_cols;
    n.list = std::move(parts);
    for (Id p : n.list) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
    n.val = Tensor<T>::zeros({rows, cols});
    size_t c0 = 0;
    for (Id p : n.list) {
      const Tensor<T>& tp = nodes_[p].val;
      for (size_t r = 0; r < rows; ++r) {
        std::copy(tp.data() + r * tp.cols(), tp.data() + (r + 1) * tp.cols(),
                  n.val.data() + r * cols + c0);
      }
      c0 += tp.cols();
    }
    return push(std::move(n));
  }

  Id slice_rows(Id a, size_t r0, size_t r1) {
    const Tensor<T>& ta = nodes_[a].val;
    if (r1 > ta.rows() || r0 >= r1) {
      throw ShapeError("slice_rows: [" + std::to_string(r0) + "," +
                       std::to_string(r1) + ") of " + ta.shape_str());
    }
    Node n = unary(Op::slice_rows, a);
    n.ints = {static_cast<int>(r0), static_cast<int>(r1)};
    const size_t cols = ta.cols();
    n.val = Tensor<T>::zeros({r1 - r0, cols});
    std::copy(ta.data() + r0 * cols, ta.data() + r1 * cols, n.val.data());
    return push(std::move(n));
  }

  Id row(Id a, size_t r) { return slice_rows(a, r, r + 1); }

  Id slice_cols(Id a, size_t c0, size_t c1) {
    const Tensor<T>& ta = nodes_[a].val;
    if (c1 > ta.cols() || c0 >= c1) {
      throw ShapeError("slice_cols: [" + std::to_string(c0) + "," +
                       std::to_string(c1) + ") of " + ta.shape_str());
    }
    Node n = unary(Op::slice_cols, a);
    n.ints = {static_cast<int>(c0), static_cast<int>(c1)};
    const size_t rows = ta.rows(), cols = ta.cols(), w = c1 - c0;
    n.val = Tensor<T>::zeros({rows, w});
    for (size_t r = 0; r < rows; ++r) {
      std::copy(ta.data() + r * cols + c0, ta.data() + r * cols + c1,
                n.val.data() + r * w);
    }
    return push(std::move(n));
  }

  Id sum_all(Id a) {
    Node n = unary(Op::sum_all, a);
    T acc = T(0);
    for (const T& x : nodes_[a].val.vec()) acc += x;
    n.val = Tensor<T>::scalar(acc);
    return push(std::move(n));
  }

  Id dot(Id a, Id b) {
    const Tensor<T>& ta = nodes_[a].val;
    const Tensor<T>& tb = nodes_[b].val;
    if (ta.numel() != tb.numel()) {
      throw ShapeError("dot: " + ta.shape_str() + " vs " + tb.shape_str());
    }
    Node n = binary(Op::dot, a, b);
    T acc = T(0);
    for (size_t i = 0; i < ta.numel(); ++i) acc += ta[i] * tb[i];
    n.val = Tensor<T>::scalar(acc);
    return push(std::move(n));
  }

  // Mean negative log-likelihood over masked positions.
  // logp {m,V} must be log-probabilities (use log_softmax); targets and mask
  // have length m; mask[i] != 0 selects position i.
  Id nll_masked(Id logp, std::vector<int> targets, std::vector<int> mask) {
    const Tensor<T>& tl = nodes_[logp].val;
    if (tl.rank() != 2 || targets.size() != tl.rows() || mask.size() != tl.rows()) {
      throw ShapeError("nll_masked: targets/mask must match logp rows");
    }
    size_t m_cnt = 0;
    T acc = T(0);
    for (size_t i = 0; i < targets.size(); ++i) {
      if (!mask[i]) continue;
      if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= tl.cols()) {
        throw VocabError("nll_masked: target id " + std::to_string(targets[i]) +
                         " out of range");
      }
      acc -= tl.at(i, static_cast<size_t>(targets[i]));
      ++m_cnt;
    }
    if (m_cnt == 0) throw MaskError("nll_masked: empty loss mask");
    Node n = unary(Op::nll_masked, logp);
    n.ints = std::move(targets);
    for (int v : mask) n.ints.push_back(v);
    n.aux = static_cast<T>(m_cnt);
    n.val = Tensor<T>::scalar(acc / static_cast<T>(m_cnt));
    return push(std::move(n));
  }

  // ---- backward ----

  void backward(Id root) {
    if (nodes_[root].val.numel() != 1) {
      throw ShapeError("backward: root must be a scalar");
    }
    backward_seeded(root, Tensor<T>::scalar(T(1)));
  }

  void backward_seeded(Id root, Tensor<T> seed) {
    if (!seed.same_shape(nodes_[root].val)) {
      throw ShapeError("backward_seeded: seed shape mismatch");
    }
    accum(root, seed);
    for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.numel() == 0) continue;
      if (!n.grad.all_finite()) {
        throw NonFiniteError("non-finite gradient at node #" + std::to_string(i) +
                             " (" + describe(n) + ")");
      }
      propagate(i);
    }
  }

 private:
  struct Node {
    Op op = Op::input;
    Id a = -1, b = -1;
    std::vector<Id> list;
    std::vector<int> ints;
    T aux = T(0);
    Tensor<T> val;
    Tensor<T> grad;
    bool needs_grad = false;
    std::string label;
  };

  static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

  Node unary(Op op, Id a) {
    Node n;
    n.op = op;
    n.a = a;
    n.needs_grad = nodes_[a].needs_grad;
    return n;
  }

  Node binary(Op op, Id a, Id b) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return n;
  }

  void require_same_shape(Id a, Id b, const char* what) {
    if (!nodes_[a].val.same_shape(nodes_[b].val)) {
      throw ShapeError(std::string(what) + ": shape mismatch " +
                       nodes_[a].val.shape_str() + " vs " + nodes_[b].val.shape_str());
    }
  }

  Id rowwise_softmax(Id a, bool log_domain) {
    const Tensor<T>& ta = nodes_[a].val;
    const size_t rows = ta.rows(), cols = ta.cols();
    if (cols == 0) throw ShapeError("softmax: empty input");
    Node n = unary(log_domain ? Op::log_softmax : Op::softmax, a);
    n.val = Tensor<T>(ta.shape());
    for (size_t r = 0; r < rows; ++r) {
      const T* x = ta.data() + r * cols;
      T* y = n.val.data() + r * cols;
      T mx = x[0];
      for (size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
      T sum = T(0);
      for (size_t c = 0; c < cols; ++c) sum += std::exp(x[c] - mx);
      if (log_domain) {
        const T lse = mx + std::log(sum);
        for (size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
      } else {
        const T inv = T(1) / sum;
        for (size_t c = 0; c < cols; ++c) y[c] = std::exp(x[c] - mx) * inv;
      }
    }
    return push(std::move(n));
  }

  Id push(Node n) {
    if (!n.val.all_finite()) {
      throw NonFiniteError("non-finite value at node #" +
                           std::to_string(nodes_.size()) + " (" + describe(n) + ")");
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::input: return "input";
      case Op::add: return "add";
      case Op::sub: return "sub";
      case Op::mul: return "mul";
      case Op::add_rowvec: return "add_rowvec";
      case Op::scale: return "scale";
      case Op::matmul: return "matmul";
      case Op::matmul_nt: return "matmul_nt";
      case Op::silu: return "silu";
      case Op::rmsnorm: return "rmsnorm";
      case Op::softmax: return "softmax";
      case Op::log_softmax: return "log_softmax";
      case Op::causal_softmax: return "causal_softmax";
      case Op::embedding: return "embedding";
      case Op::concat_rows: return "concat_rows";
      case Op::concat_cols: return "concat_cols";
      case Op::slice_rows: return "slice_rows";
      case Op::slice_cols: return "slice_cols";
      case Op::sum_all: return "sum_all";
      case Op::dot: return "dot";
      case Op::nll_masked: return "nll_masked";
    }
    return "?";
  }

  static std::string describe(const Node& n) {
    std::string s = op_name(n.op);
    if (!n.label.empty()) s += " '" + n.label + "'";
    return s;
  }

  void accum(Id id, const Tensor<T>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.numel() == 0) {
      n.grad = g;
    } else {
      T* pg = n.grad.data();
      const T* ps = g.data();
      for (size_t i = 0; i < n.grad.numel(); ++i) pg[i] += ps[i];
    }
  }

  Tensor<T>& grad_buf(Id id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = Tensor<T>::zeros(n.val.shape());
    return n.grad;
  }

  void propagate(Id id) {
    Node& n = nodes_[id];
    const Tensor<T>& g = n.grad;
    switch (n.op) {
      case Op::input:
        break;
      case Op::add: {
        accum(n.a, g);
        accum(n.b, g);
        break;
      }
      case Op::sub: {
        accum(n.a, g);
        if (nodes_[n.b].needs_grad) {
          Tensor<T>& gb = grad_buf(n.b);
          for (size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
        break;
      }
      case Op::mul: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const Tensor<T>& vb = nodes_[n.b].val;
          for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
        }
        if (nodes_[n.b].needs_grad) {
          Tensor<T>& gb = grad_buf(n.b);
          const Tensor<T>& va = nodes_[n.a].val;
          for (size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
        }
        break;
      }
      case Op::add_rowvec: {
        accum(n.a, g);
        if (nodes_[n.b].needs_grad) {
          Tensor<T>& gv = grad_buf(n.b);
          const size_t rows = g.rows(), cols = g.cols();
          for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < cols; ++c) gv[c] += g.at(r, c);
        }
        break;
      }
      case Op::scale: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * n.aux;
        }
        break;
      }
      case Op::matmul: {
        const Tensor<T>& va = nodes_[n.a].val;
        const Tensor<T>& vb = nodes_[n.b].val;
        const size_t m = va.rows(), k = va.cols(), nn = vb.cols();
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          for (size_t i = 0; i < m; ++i) {
            const T* grow = g.data() + i * nn;
            T* garow = ga.data() + i * k;
            for (size_t p = 0; p < k; ++p) {
              const T* brow = vb.data() + p * nn;
              T acc = T(0);
              for (size_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
              garow[p] += acc;
            }
          }
        }
        if (nodes_[n.b].needs_grad) {
          Tensor<T>& gb = grad_buf(n.b);
          for (size_t i = 0; i < m; ++i) {
            const T* arow = va.data() + i * k;
            const T* grow = g.data() + i * nn;
            for (size_t p = 0; p < k; ++p) {
              const T av = arow[p];
              T* gbrow = gb.data() + p * nn;
              for (size_t j = 0; j < nn; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
        break;
      }
      case Op::matmul_nt: {
        const Tensor<T>& va = nodes_[n.a].val;
        const Tensor<T>& vb = nodes_[n.b].val;
        const size_t m = va.rows(), k = va.cols(), nn = vb.rows();
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          for (size_t i = 0; i < m; ++i) {
            T* garow = ga.data() + i * k;
            const T* grow = g.data() + i * nn;
            for (size_t j = 0; j < nn; ++j) {
              const T gij = grow[j];
              const T* brow = vb.data() + j * k;
              for (size_t p = 0; p < k; ++p) garow[p] += gij * brow[p];
            }
          }
        }
        if (nodes_[n.b].needs_grad) {
          Tensor<T>& gb = grad_buf(n.b);
          for (size_t i = 0; i < m; ++i) {
            const T* arow = va.data() + i * k;
            const T* grow = g.data() + i * nn;
            for (size_t j = 0; j < nn; ++j) {
              const T gij = grow[j];
              T* gbrow = gb.data() + j * k;
              for (size_t p = 0; p < k; ++p) gbrow[p] += gij * arow[p];
            }
          }
        }
        break;
      }
      case Op::silu: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const Tensor<T>& x = nodes_[n.a].val;
          for (size_t i = 0; i < g.numel(); ++i) {
            const T s = sigmoid(x[i]);
            ga[i] += g[i] * s * (T(1) + x[i] * (T(1) - s));
          }
        }
        break;
      }
      case Op::rmsnorm: {
        const Tensor<T>& x = nodes_[n.a].val;
        const Tensor<T>& gain = nodes_[n.b].val;
        const size_t rows = x.rows(), cols = x.cols();
        const bool need_x = nodes_[n.a].needs_grad;
        const bool need_g = nodes_[n.b].needs_grad;
        Tensor<T>* gx = need_x ? &grad_buf(n.a) : nullptr;
        Tensor<T>* gg = need_g ? &grad_buf(n.b) : nullptr;
        for (size_t r = 0; r < rows; ++r) {
          const T* xr = x.data() + r * cols;
          const T* gr = g.data() + r * cols;
          T ms = T(0);
          for (size_t c = 0; c < cols; ++c) ms += xr[c] * xr[c];
          ms = ms / static_cast<T>(cols) + n.aux;
          const T inv = T(1) / std::sqrt(ms);
          if (need_g) {
            for (size_t c = 0; c < cols; ++c) (*gg)[c] += gr[c] * xr[c] * inv;
          }
          if (need_x) {
            T dot_ggx = T(0);
            for (size_t c = 0; c < cols; ++c) dot_ggx += gr[c] * gain[c] * xr[c];
            const T coeff = dot_ggx * inv * inv * inv / static_cast<T>(cols);
            T* gxr = gx->data() + r * cols;
            for (size_t c = 0; c < cols; ++c) {
              gxr[c] += gr[c] * gain[c] * inv - coeff * xr[c];
            }
          }
        }
        break;
      }
      case Op::softmax: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const Tensor<T>& y = n.val;
          const size_t rows = y.rows(), cols = y.cols();
          for (size_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * cols;
            const T* gr = g.data() + r * cols;
            T dot_yg = T(0);
            for (size_t c = 0; c < cols; ++c) dot_yg += yr[c] * gr[c];
            T* gar = ga.data() + r * cols;
            for (size_t c = 0; c < cols; ++c) gar[c] += yr[c] * (gr[c] - dot_yg);
          }
        }
        break;
      }
      case Op::log_softmax: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const Tensor<T>& y = n.val;
          const size_t rows = y.rows(), cols = y.cols();
          for (size_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * cols;
            const T* gr = g.data() + r * cols;
            T gsum = T(0);
            for (size_t c = 0; c < cols; ++c) gsum += gr[c];
            T* gar = ga.data() + r * cols;
            for (size_t c = 0; c < cols; ++c) {
              gar[c] += gr[c] - std::exp(yr[c]) * gsum;
            }
          }
        }
        break;
      }
      case Op::causal_softmax: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const Tensor<T>& y = n.val;
          const size_t nn = y.rows();
          for (size_t i = 0; i < nn; ++i) {
            const T* yr = y.data() + i * nn;
            const T* gr = g.data() + i * nn;
            T dot_yg = T(0);
            for (size_t j = 0; j <= i; ++j) dot_yg += yr[j] * gr[j];
            T* gar = ga.data() + i * nn;
            for (size_t j = 0; j <= i; ++j) gar[j] += yr[j] * (gr[j] - dot_yg);
          }
        }
        break;
      }
      case Op::embedding: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& gt = grad_buf(n.a);
          const size_t d = n.val.cols();
          for (size_t r = 0; r < n.ints.size(); ++r) {
            T* dst = gt.data() + static_cast<size_t>(n.ints[r]) * d;
            const T* src = g.data() + r * d;
            for (size_t c = 0; c < d; ++c) dst[c] += src[c];
          }
        }
        break;
      }
      case Op::concat_rows: {
        size_t r0 = 0;
        const size_t cols = n.val.cols();
        for (Id p : n.list) {
          const size_t pr = nodes_[p].val.rows();
          if (nodes_[p].needs_grad) {
            Tensor<T>& gp = grad_buf(p);
            const T* src = g.data() + r0 * cols;
            for (size_t i = 0; i < pr * cols; ++i) gp[i] += src[i];
          }
          r0 += pr;
        }
        break;
      }
      case Op::concat_cols: {
        size_t c0 = 0;
        const size_t rows = n.val.rows(), cols = n.val.cols();
        for (Id p : n.list) {
          const size_t pc = nodes_[p].val.cols();
          if (nodes_[p].needs_grad) {
            Tensor<T>& gp = grad_buf(p);
            for (size_t r = 0; r < rows; ++r) {
              const T* src = g.data() + r * cols + c0;
              T* dst = gp.data() + r * pc;
              for (size_t c = 0; c < pc; ++c) dst[c] += src[c];
            }
          }
          c0 += pc;
        }
        break;
      }
      case Op::slice_rows: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const size_t r0 = static_cast<size_t>(n.ints[0]);
          const size_t cols = n.val.cols();
          T* dst = ga.data() + r0 * cols;
          for (size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
        }
        break;
      }
      case Op::slice_cols: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const size_t c0 = static_cast<size_t>(n.ints[0]);
          const size_t rows = g.rows(), w = g.cols();
          const size_t cols = nodes_[n.a].val.cols();
          for (size_t r = 0; r < rows; ++r) {
            const T* src = g.data() + r * w;
            T* dst = ga.data() + r * cols + c0;
            for (size_t c = 0; c < w; ++c) dst[c] += src[c];
          }
        }
        break;
      }
      case Op::sum_all: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const T gv = g[0];
          for (size_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
        }
        break;
      }
      case Op::dot: {
        const T gv = g[0];
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const Tensor<T>& vb = nodes_[n.b].val;
          for (size_t i = 0; i < ga.numel(); ++i) ga[i] += gv * vb[i];
        }
        if (nodes_[n.b].needs_grad) {
          Tensor<T>& gb = grad_buf(n.b);
          const Tensor<T>& va = nodes_[n.a].val;
          for (size_t i = 0; i < gb.numel(); ++i) gb[i] += gv * va[i];
        }
        break;
      }
      case Op::nll_masked: {
        if (nodes_[n.a].needs_grad) {
          Tensor<T>& ga = grad_buf(n.a);
          const size_t m = n.ints.size() / 2;
          const T scale_g = g[0] / n.aux;
          for (size_t i = 0; i < m; ++i) {
            if (!n.ints[m + i]) continue;
            ga.at(i, static_cast<size_t>(n.ints[i])) -= scale_g;
          }
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace ats
