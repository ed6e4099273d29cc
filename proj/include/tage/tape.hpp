#pragma once

// Reverse-mode automatic differentiation on a linear tape. Each primitive
// records its inputs and forward value; backward() walks the tape once in
// reverse and returns gradients for every leaf. A tape supports exactly one
// backward pass.
//
// Numerical-stability notes baked into the primitives:
//  - row_softmax / row_log_softmax / row_logsumexp subtract the row max,
//  - softplus(x) = max(x,0) + log1p(exp(-|x|)),
//  - sigmoid_bentropy evaluates the binary entropy of sigmoid(t) from the
//    logit t, so saturated scores never produce log(0).

#include <algorithm>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "tage/tensor.hpp"

namespace tage::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  std::size_t rows() const { return val().rows(); }
  std::size_t cols() const { return val().cols(); }
};

/// Gradient map returned by Tape::backward. Leaves that do not participate
/// in the loss get exact zeros.
class Gradients {
 public:
  const Tensor& at(Var v) const;

 private:
  friend class Tape;
  std::vector<std::int32_t> leaf_ids_;
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    MulCol,
    Scale,
    AddScalar,
    ConcatCols,
    ConcatRows,
    RowGather,
    RowScatterAdd,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Softplus,
    Rsqrt,
    SigmoidBentropy,
    RowSoftmax,
    RowLogSoftmax,
    RowLogSumExp,
    RowSum,
    ColMean,
    SumAll,
    MeanAll,
    L2NormalizeRows,
    MaxAbsNormalize,
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  /// Records a leaf. Leaves are the only nodes backward() reports
  /// gradients for.
  Var input(Tensor v) {
    if (!v.all_finite()) throw numeric_error("tape input contains non-finite values");
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push(std::move(n));
  }

  // ---- elementwise and linear algebra ----

  Var matmul(Var a, Var b) {
    check(a, b);
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols() != B.rows())
      throw shape_error("matmul: " + A.shape_str() + " * " + B.shape_str());
    Tensor out(A.rows(), B.cols());
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t k = 0; k < A.cols(); ++k) {
        double aik = A.at(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < B.cols(); ++j) out.at(i, j) += aik * B.at(k, j);
      }
    return push(node(Op::MatMul, a, b, std::move(out)));
  }

  Var transpose(Var a) {
    const Tensor& A = val(a);
    Tensor out(A.cols(), A.rows());
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(j, i) = A.at(i, j);
    return push(node(Op::Transpose, a, Var{}, std::move(out)));
  }

  Var add(Var a, Var b) { return binary_same_shape(Op::Add, a, b); }
  Var sub(Var a, Var b) { return binary_same_shape(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return binary_same_shape(Op::Mul, a, b); }

  /// A (r x c) + row vector (1 x c), broadcast over rows.
  Var add_rowvec(Var a, Var r) { return rowvec_op(Op::AddRow, a, r); }

  /// A (r x c) * row vector (1 x c), broadcast over rows.
  Var mul_rowvec(Var a, Var r) { return rowvec_op(Op::MulRow, a, r); }

  /// A (r x c) * column vector (r x 1), broadcast over columns.
  Var mul_colvec(Var a, Var c) {
    check(a, c);
    const Tensor& A = val(a);
    const Tensor& C = val(c);
    if (C.cols() != 1 || C.rows() != A.rows())
      throw shape_error("mul_colvec: " + A.shape_str() + " vs " + C.shape_str());
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j) * C.at(i, 0);
    return push(node(Op::MulCol, a, c, std::move(out)));
  }

  Var scale(Var a, double k) {
    const Tensor& A = val(a);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * k;
    Node n = node(Op::Scale, a, Var{}, std::move(out));
    n.scalar = k;
    return push(std::move(n));
  }

  Var add_scalar(Var a, double k) {
    const Tensor& A = val(a);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + k;
    Node n = node(Op::AddScalar, a, Var{}, std::move(out));
    n.scalar = k;
    return push(std::move(n));
  }

  // ---- structure ----

  /// Concatenates along the feature axis: all inputs share the row count.
  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no inputs");
    std::size_t rows = val(parts[0]).rows(), cols = 0;
    for (Var p : parts) {
      check(parts[0], p);
      if (val(p).rows() != rows) throw shape_error("concat_cols: row mismatch");
      cols += val(p).cols();
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& P = val(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, off + j) = P.at(i, j);
      off += P.cols();
    }
    Node n = node(Op::ConcatCols, Var{}, Var{}, std::move(out));
    for (Var p : parts) n.extra.push_back(p.id);
    return push(std::move(n));
  }

  /// Stacks inputs vertically: all inputs share the column count.
  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: no inputs");
    std::size_t cols = val(parts[0]).cols(), rows = 0;
    for (Var p : parts) {
      check(parts[0], p);
      if (val(p).cols() != cols) throw shape_error("concat_rows: column mismatch");
      rows += val(p).rows();
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& P = val(p);
      for (std::size_t i = 0; i < P.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out.at(off + i, j) = P.at(i, j);
      off += P.rows();
    }
    Node n = node(Op::ConcatRows, Var{}, Var{}, std::move(out));
    for (Var p : parts) n.extra.push_back(p.id);
    return push(std::move(n));
  }

  /// out[e, :] = A[idx[e], :]
  Var row_gather(Var a, std::vector<std::uint32_t> idx) {
    const Tensor& A = val(a);
    for (std::uint32_t i : idx)
      if (i >= A.rows()) throw shape_error("row_gather: index out of range");
    Tensor out(idx.size(), A.cols());
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(e, j) = A.at(idx[e], j);
    Node n = node(Op::RowGather, a, Var{}, std::move(out));
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  /// out[idx[e], :] += A[e, :]; out has out_rows rows. Accumulation follows
  /// the input row order, so results are deterministic.
  Var row_scatter_add(Var a, std::vector<std::uint32_t> idx, std::size_t out_rows) {
    const Tensor& A = val(a);
    if (idx.size() != A.rows()) throw shape_error("row_scatter_add: index count mismatch");
    for (std::uint32_t i : idx)
      if (i >= out_rows) throw shape_error("row_scatter_add: index out of range");
    Tensor out(out_rows, A.cols());
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(idx[e], j) += A.at(e, j);
    Node n = node(Op::RowScatterAdd, a, Var{}, std::move(out));
    n.indices = std::move(idx);
    n.out_rows = static_cast<std::uint32_t>(out_rows);
    return push(std::move(n));
  }

  // ---- nonlinearities ----

  Var sigmoid(Var a) {
    return unary(Op::Sigmoid, a, [](double x) {
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
  }

  Var relu(Var a) {
    return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
  }

  Var exp(Var a) {
    return unary(Op::Exp, a, [](double x) { return std::exp(x); });
  }

  Var log(Var a) {
    return unary(Op::Log, a, [](double x) { return std::log(x); });
  }

  Var softplus(Var a) {
    return unary(Op::Softplus, a, [](double x) {
      return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    });
  }

  Var rsqrt(Var a) {
    return unary(Op::Rsqrt, a, [](double x) { return 1.0 / std::sqrt(x); });
  }

  /// Binary entropy of sigmoid(t), computed from the logit t:
  /// H(sigmoid(t)) = sigmoid(t)*softplus(-t) + (1-sigmoid(t))*softplus(t).
  Var sigmoid_bentropy(Var a) {
    return unary(Op::SigmoidBentropy, a, [](double t) {
      double s = t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
      auto sp = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
      return s * sp(-t) + (1.0 - s) * sp(t);
    });
  }

  // ---- row reductions ----

  Var row_softmax(Var a) {
    const Tensor& A = val(a);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < A.cols(); ++j) mx = std::max(mx, A.at(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) {
        out.at(i, j) = std::exp(A.at(i, j) - mx);
        sum += out.at(i, j);
      }
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) /= sum;
    }
    return push(node(Op::RowSoftmax, a, Var{}, std::move(out)));
  }

  Var row_log_softmax(Var a) {
    const Tensor& A = val(a);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < A.cols(); ++j) mx = std::max(mx, A.at(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) sum += std::exp(A.at(i, j) - mx);
      double lse = mx + std::log(sum);
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j) - lse;
    }
    return push(node(Op::RowLogSoftmax, a, Var{}, std::move(out)));
  }

  /// Per-row log-sum-exp with max subtraction; returns r x 1. With
  /// exclude_diag the input must be square and entry (i,i) is left out of
  /// row i's sum.
  Var row_logsumexp(Var a, bool exclude_diag = false) {
    const Tensor& A = val(a);
    if (exclude_diag && (A.rows() != A.cols() || A.rows() < 2))
      throw shape_error("row_logsumexp: exclude_diag needs a square matrix, n >= 2");
    Tensor out(A.rows(), 1);
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < A.cols(); ++j) {
        if (exclude_diag && j == i) continue;
        mx = std::max(mx, A.at(i, j));
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) {
        if (exclude_diag && j == i) continue;
        sum += std::exp(A.at(i, j) - mx);
      }
      out.at(i, 0) = mx + std::log(sum);
    }
    Node n = node(Op::RowLogSumExp, a, Var{}, std::move(out));
    n.flag = exclude_diag;
    return push(std::move(n));
  }

  Var row_sum(Var a) {
    const Tensor& A = val(a);
    Tensor out(A.rows(), 1);
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) s += A.at(i, j);
      out.at(i, 0) = s;
    }
    return push(node(Op::RowSum, a, Var{}, std::move(out)));
  }

  /// Mean over rows; returns 1 x c.
  Var col_mean(Var a) {
    const Tensor& A = val(a);
    if (A.rows() == 0) throw shape_error("col_mean: empty input");
    Tensor out(1, A.cols());
    for (std::size_t j = 0; j < A.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < A.rows(); ++i) s += A.at(i, j);
      out.at(0, j) = s / static_cast<double>(A.rows());
    }
    return push(node(Op::ColMean, a, Var{}, std::move(out)));
  }

  Var sum_all(Var a) {
    const Tensor& A = val(a);
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
    return push(node(Op::SumAll, a, Var{}, Tensor::scalar(s)));
  }

  Var mean_all(Var a) {
    const Tensor& A = val(a);
    if (A.size() == 0) throw shape_error("mean_all: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
    return push(node(Op::MeanAll, a, Var{}, Tensor::scalar(s / static_cast<double>(A.size()))));
  }

  // ---- normalizations ----

  /// Rows scaled to unit L2 norm; norms are floored at 1e-12 so zero rows
  /// pass through as zeros.
  Var l2_normalize_rows(Var a) {
    const Tensor& A = val(a);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double n2 = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) n2 += A.at(i, j) * A.at(i, j);
      double n = std::max(std::sqrt(n2), kNormFloor);
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j) / n;
    }
    return push(node(Op::L2NormalizeRows, a, Var{}, std::move(out)));
  }

  /// Whole tensor divided by its max absolute entry (first occurrence wins
  /// the subgradient at ties). Errors on an all-zero input.
  Var max_abs_normalize(Var a) {
    const Tensor& A = val(a);
    std::size_t k = 0;
    double m = -1.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
      double ab = std::abs(A[i]);
      if (ab > m) {
        m = ab;
        k = i;
      }
    }
    if (m <= 0.0) throw numeric_error("max_abs_normalize: all-zero input");
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] / m;
    Node n = node(Op::MaxAbsNormalize, a, Var{}, std::move(out));
    n.out_rows = static_cast<std::uint32_t>(k);
    return push(std::move(n));
  }

  // ---- backward ----

  /// Reverse pass from a scalar loss. Returns a gradient tensor for every
  /// leaf; leaves the loss does not depend on get exact zeros. Consumes the
  /// tape: a second call throws.
  Gradients backward(Var loss) {
    if (loss.tape != this) throw shape_error("backward: loss from another tape");
    if (consumed_) throw numeric_error("backward: tape already consumed");
    if (val(loss).size() != 1) throw shape_error("backward: loss is not scalar");
    consumed_ = true;

    std::vector<Tensor> adj(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      adj[i] = Tensor(nodes_[i].value.rows(), nodes_[i].value.cols());
    adj[static_cast<std::size_t>(loss.id)][0] = 1.0;

    for (std::size_t i = nodes_.size(); i-- > 0;) backprop(i, adj);

    Gradients g;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::Leaf) {
        g.leaf_ids_.push_back(static_cast<std::int32_t>(i));
        g.grads_.push_back(std::move(adj[i]));
      }
    return g;
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::vector<std::int32_t> extra;        // concat inputs
    std::vector<std::uint32_t> indices;     // gather / scatter rows
    std::uint32_t out_rows = 0;             // scatter target rows; argmax for MaxAbsNormalize
    double scalar = 0.0;
    bool flag = false;                      // RowLogSumExp exclude_diag
    Tensor value;
  };

  static constexpr double kNormFloor = 1e-12;

  std::vector<Node> nodes_;
  bool consumed_ = false;

  const Tensor& val(Var v) const {
    if (v.tape != this) throw shape_error("tape op: variable from another tape");
    return nodes_[static_cast<std::size_t>(v.id)].value;
  }

  void check(Var a, Var b) const {
    if (a.tape != this || b.tape != this)
      throw shape_error("tape op: variable from another tape");
  }

  static Node node(Op op, Var a, Var b, Tensor value) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(value);
    return n;
  }

  Var push(Node n) {
    if (!n.value.all_finite())
      throw numeric_error("non-finite output from tape op " +
                          std::to_string(static_cast<int>(n.op)));
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  Var binary_same_shape(Op op, Var a, Var b) {
    check(a, b);
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B))
      throw shape_error("elementwise op: " + A.shape_str() + " vs " + B.shape_str());
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.size(); ++i)
      out[i] = op == Op::Add ? A[i] + B[i] : op == Op::Sub ? A[i] - B[i] : A[i] * B[i];
    return push(node(op, a, b, std::move(out)));
  }

  Var rowvec_op(Op op, Var a, Var r) {
    check(a, r);
    const Tensor& A = val(a);
    const Tensor& R = val(r);
    if (R.rows() != 1 || R.cols() != A.cols())
      throw shape_error("row-broadcast op: " + A.shape_str() + " vs " + R.shape_str());
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j)
        out.at(i, j) = op == Op::AddRow ? A.at(i, j) + R.at(0, j) : A.at(i, j) * R.at(0, j);
    return push(node(op, a, r, std::move(out)));
  }

  template <typename F>
  Var unary(Op op, Var a, F f) {
    const Tensor& A = val(a);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
    return push(node(op, a, Var{}, std::move(out)));
  }

  void backprop(std::size_t i, std::vector<Tensor>& adj) {
    const Node& n = nodes_[i];
    const Tensor& g = adj[i];
    auto A = [&]() -> const Tensor& { return nodes_[static_cast<std::size_t>(n.a)].value; };
    auto B = [&]() -> const Tensor& { return nodes_[static_cast<std::size_t>(n.b)].value; };
    auto ga = [&]() -> Tensor& { return adj[static_cast<std::size_t>(n.a)]; };
    auto gb = [&]() -> Tensor& { return adj[static_cast<std::size_t>(n.b)]; };
    const Tensor& y = n.value;

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        Tensor& da = ga();
        Tensor& db = gb();
        const Tensor& a = A();
        const Tensor& b = B();
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t c = 0; c < b.cols(); ++c) {
            double gv = g.at(r, c);
            if (gv == 0.0) continue;
            for (std::size_t k = 0; k < a.cols(); ++k) {
              da.at(r, k) += gv * b.at(k, c);
              db.at(k, c) += gv * a.at(r, k);
            }
          }
        break;
      }
      case Op::Transpose: {
        Tensor& da = ga();
        for (std::size_t r = 0; r < y.rows(); ++r)
          for (std::size_t c = 0; c < y.cols(); ++c) da.at(c, r) += g.at(r, c);
        break;
      }
      case Op::Add:
        accumulate(ga(), g, 1.0);
        accumulate(gb(), g, 1.0);
        break;
      case Op::Sub:
        accumulate(ga(), g, 1.0);
        accumulate(gb(), g, -1.0);
        break;
      case Op::Mul: {
        Tensor& da = ga();
        Tensor& db = gb();
        const Tensor& a = A();
        const Tensor& b = B();
        for (std::size_t k = 0; k < g.size(); ++k) {
          da[k] += g[k] * b[k];
          db[k] += g[k] * a[k];
        }
        break;
      }
      case Op::AddRow: {
        accumulate(ga(), g, 1.0);
        Tensor& dr = gb();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) dr.at(0, c) += g.at(r, c);
        break;
      }
      case Op::MulRow: {
        Tensor& da = ga();
        Tensor& dr = gb();
        const Tensor& a = A();
        const Tensor& rv = B();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) {
            da.at(r, c) += g.at(r, c) * rv.at(0, c);
            dr.at(0, c) += g.at(r, c) * a.at(r, c);
          }
        break;
      }
      case Op::MulCol: {
        Tensor& da = ga();
        Tensor& dc = gb();
        const Tensor& a = A();
        const Tensor& cv = B();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) {
            da.at(r, c) += g.at(r, c) * cv.at(r, 0);
            dc.at(r, 0) += g.at(r, c) * a.at(r, c);
          }
        break;
      }
      case Op::Scale:
        accumulate(ga(), g, n.scalar);
        break;
      case Op::AddScalar:
        accumulate(ga(), g, 1.0);
        break;
      case Op::ConcatCols: {
        std::size_t off = 0;
        for (std::int32_t pid : n.extra) {
          Tensor& dp = adj[static_cast<std::size_t>(pid)];
          for (std::size_t r = 0; r < dp.rows(); ++r)
            for (std::size_t c = 0; c < dp.cols(); ++c) dp.at(r, c) += g.at(r, off + c);
          off += dp.cols();
        }
        break;
      }
      case Op::ConcatRows: {
        std::size_t off = 0;
        for (std::int32_t pid : n.extra) {
          Tensor& dp = adj[static_cast<std::size_t>(pid)];
          for (std::size_t r = 0; r < dp.rows(); ++r)
            for (std::size_t c = 0; c < dp.cols(); ++c) dp.at(r, c) += g.at(off + r, c);
          off += dp.rows();
        }
        break;
      }
      case Op::RowGather: {
        Tensor& da = ga();
        for (std::size_t e = 0; e < n.indices.size(); ++e)
          for (std::size_t c = 0; c < g.cols(); ++c) da.at(n.indices[e], c) += g.at(e, c);
        break;
      }
      case Op::RowScatterAdd: {
        Tensor& da = ga();
        for (std::size_t e = 0; e < n.indices.size(); ++e)
          for (std::size_t c = 0; c < g.cols(); ++c) da.at(e, c) += g.at(n.indices[e], c);
        break;
      }
      case Op::Sigmoid: {
        Tensor& da = ga();
        for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k] * y[k] * (1.0 - y[k]);
        break;
      }
      case Op::Relu: {
        Tensor& da = ga();
        const Tensor& a = A();
        for (std::size_t k = 0; k < g.size(); ++k)
          if (a[k] > 0.0) da[k] += g[k];
        break;
      }
      case Op::Exp: {
        Tensor& da = ga();
        for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k] * y[k];
        break;
      }
      case Op::Log: {
        Tensor& da = ga();
        const Tensor& a = A();
        for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k] / a[k];
        break;
      }
      case Op::Softplus: {
        Tensor& da = ga();
        const Tensor& a = A();
        for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k] * stable_sigmoid(a[k]);
        break;
      }
      case Op::Rsqrt: {
        Tensor& da = ga();
        for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k] * (-0.5 * y[k] * y[k] * y[k]);
        break;
      }
      case Op::SigmoidBentropy: {
        Tensor& da = ga();
        const Tensor& a = A();
        for (std::size_t k = 0; k < g.size(); ++k) {
          double s = stable_sigmoid(a[k]);
          da[k] += g[k] * (-a[k] * s * (1.0 - s));
        }
        break;
      }
      case Op::RowSoftmax: {
        Tensor& da = ga();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            da.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
        }
        break;
      }
      case Op::RowLogSoftmax: {
        Tensor& da = ga();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double gsum = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) gsum += g.at(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            da.at(r, c) += g.at(r, c) - std::exp(y.at(r, c)) * gsum;
        }
        break;
      }
      case Op::RowLogSumExp: {
        Tensor& da = ga();
        const Tensor& a = A();
        for (std::size_t r = 0; r < a.rows(); ++r) {
          double gv = g.at(r, 0);
          if (gv == 0.0) continue;
          for (std::size_t c = 0; c < a.cols(); ++c) {
            if (n.flag && c == r) continue;
            da.at(r, c) += gv * std::exp(a.at(r, c) - y.at(r, 0));
          }
        }
        break;
      }
      case Op::RowSum: {
        Tensor& da = ga();
        for (std::size_t r = 0; r < da.rows(); ++r)
          for (std::size_t c = 0; c < da.cols(); ++c) da.at(r, c) += g.at(r, 0);
        break;
      }
      case Op::ColMean: {
        Tensor& da = ga();
        double inv = 1.0 / static_cast<double>(da.rows());
        for (std::size_t r = 0; r < da.rows(); ++r)
          for (std::size_t c = 0; c < da.cols(); ++c) da.at(r, c) += g.at(0, c) * inv;
        break;
      }
      case Op::SumAll: {
        accumulate_scalar(ga(), g.item());
        break;
      }
      case Op::MeanAll: {
        accumulate_scalar(ga(), g.item() / static_cast<double>(ga().size()));
        break;
      }
      case Op::L2NormalizeRows: {
        Tensor& da = ga();
        const Tensor& a = A();
        for (std::size_t r = 0; r < a.rows(); ++r) {
          double n2 = 0.0;
          for (std::size_t c = 0; c < a.cols(); ++c) n2 += a.at(r, c) * a.at(r, c);
          double norm = std::max(std::sqrt(n2), kNormFloor);
          double dot = 0.0;
          for (std::size_t c = 0; c < a.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
          for (std::size_t c = 0; c < a.cols(); ++c)
            da.at(r, c) += (g.at(r, c) - y.at(r, c) * dot) / norm;
        }
        break;
      }
      case Op::MaxAbsNormalize: {
        Tensor& da = ga();
        const Tensor& a = A();
        std::size_t k = n.out_rows;
        double m = std::abs(a[k]);
        double sign = a[k] >= 0.0 ? 1.0 : -1.0;
        double dot = 0.0;
        for (std::size_t t = 0; t < g.size(); ++t) {
          da[t] += g[t] / m;
          dot += g[t] * y[t];
        }
        da[k] -= sign * dot / m;
        break;
      }
    }
  }

  static double stable_sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }

  static void accumulate(Tensor& dst, const Tensor& src, double k) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += k * src[i];
  }

  static void accumulate_scalar(Tensor& dst, double v) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += v;
  }
};

inline const Tensor& Var::val() const { return tape->value(id); }

inline const Tensor& Gradients::at(Var v) const {
  for (std::size_t i = 0; i < leaf_ids_.size(); ++i)
    if (leaf_ids_[i] == v.id) return grads_[i];
  throw shape_error("Gradients::at: variable is not a leaf of this tape");
}

/// Gradient pointers for a list of staged parameters, in order.
inline std::vector<const Tensor*> grads_of(const Gradients& g, const std::vector<Var>& vars) {
  std::vector<const Tensor*> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(&g.at(v));
  return out;
}

// Elementwise sugar.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

}  // namespace tage::ad
