#pragma once
// Dense row-major matrices and a record-order autodiff tape. Each op appends
// a node holding its value, a zeroed gradient, and a closure that scatters
// the node's gradient back to its inputs; backward() replays the closures in
// reverse record order.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aforge::neural {

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative shape");
  }
  static Mat row(const std::vector<double>& v) {
    Mat m(1, int(v.size()));
    m.data = v;
    return m;
  }
  static Mat scalar(double v) {
    Mat m(1, 1);
    m.data[0] = v;
    return m;
  }

  double& at(int r, int c) { return data[std::size_t(r) * std::size_t(cols) + std::size_t(c)]; }
  double at(int r, int c) const {
    return data[std::size_t(r) * std::size_t(cols) + std::size_t(c)];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

struct Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& val() const;
  Mat& grad() const;
};

struct Tape {
  struct Node {
    Mat val;
    Mat grad;
    std::function<void()> back;  // null for leaves
  };
  std::vector<Node> nodes;

  // Backward closures capture the tape's address, so it must stay put.
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var make(Mat val) {
    Mat grad(val.rows, val.cols);
    nodes.push_back(Node{std::move(val), std::move(grad), nullptr});
    return Var{this, int(nodes.size()) - 1};
  }

  Var leaf(Mat val) { return make(std::move(val)); }

  void backward(Var loss) {
    if (loss.tape != this || loss.id < 0 || loss.id >= int(nodes.size()))
      throw std::invalid_argument("backward: loss is not traced on this tape");
    Node& top = nodes[std::size_t(loss.id)];
    if (top.val.rows != 1 || top.val.cols != 1)
      throw std::invalid_argument("backward: loss must be 1x1, got " + shape_str(top.val));
    top.grad.data[0] += 1.0;
    for (int i = loss.id; i >= 0; --i)
      if (nodes[std::size_t(i)].back) nodes[std::size_t(i)].back();
  }
};

inline const Mat& Var::val() const { return tape->nodes[std::size_t(id)].val; }
inline Mat& Var::grad() const { return tape->nodes[std::size_t(id)].grad; }

namespace detail {

inline Tape* same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  return a.tape;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---- binary ops --------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "matmul");
  const Mat &A = a.val(), &B = b.val();
  detail::require(A.cols == B.rows, "matmul: " + shape_str(A) + " * " + shape_str(B));
  Mat C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int m = 0; m < A.cols; ++m) {
      double av = A.at(i, m);
      if (av == 0.0) continue;
      for (int j = 0; j < B.cols; ++j) C.at(i, j) += av * B.at(m, j);
    }
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, bi = b.id, oi = out.id] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    const Mat& A = t->nodes[std::size_t(ai)].val;
    const Mat& B = t->nodes[std::size_t(bi)].val;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    Mat& dB = t->nodes[std::size_t(bi)].grad;
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < B.cols; ++j) {
        double g = G.at(i, j);
        if (g == 0.0) continue;
        for (int m = 0; m < A.cols; ++m) {
          dA.at(i, m) += g * B.at(m, j);
          dB.at(m, j) += g * A.at(i, m);
        }
      }
  };
  return out;
}

// a * b^T without materializing the transpose
inline Var matmul_nt(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "matmul_nt");
  const Mat &A = a.val(), &B = b.val();
  detail::require(A.cols == B.cols, "matmul_nt: " + shape_str(A) + " * " + shape_str(B) + "^T");
  Mat C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < B.rows; ++j) {
      double s = 0.0;
      for (int m = 0; m < A.cols; ++m) s += A.at(i, m) * B.at(j, m);
      C.at(i, j) = s;
    }
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, bi = b.id, oi = out.id] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    const Mat& A = t->nodes[std::size_t(ai)].val;
    const Mat& B = t->nodes[std::size_t(bi)].val;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    Mat& dB = t->nodes[std::size_t(bi)].grad;
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < B.rows; ++j) {
        double g = G.at(i, j);
        if (g == 0.0) continue;
        for (int m = 0; m < A.cols; ++m) {
          dA.at(i, m) += g * B.at(j, m);
          dB.at(j, m) += g * A.at(i, m);
        }
      }
  };
  return out;
}

// add with broadcasting: same shape, row vector over rows, or 1x1 scalar
inline Var add(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "add");
  const Mat &A = a.val(), &B = b.val();
  bool full = A.same_shape(B);
  bool brow = B.rows == 1 && B.cols == A.cols;
  bool bscalar = B.rows == 1 && B.cols == 1;
  detail::require(full || brow || bscalar, "add: " + shape_str(A) + " + " + shape_str(B));
  Mat C = A;
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j)
      C.at(i, j) += full ? B.at(i, j) : (brow ? B.at(0, j) : B.data[0]);
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, bi = b.id, oi = out.id, full, brow] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    Mat& dB = t->nodes[std::size_t(bi)].grad;
    for (std::size_t s = 0; s < G.size(); ++s) dA.data[s] += G.data[s];
    if (full) {
      for (std::size_t s = 0; s < G.size(); ++s) dB.data[s] += G.data[s];
    } else if (brow) {
      for (int i = 0; i < G.rows; ++i)
        for (int j = 0; j < G.cols; ++j) dB.at(0, j) += G.at(i, j);
    } else {
      for (std::size_t s = 0; s < G.size(); ++s) dB.data[0] += G.data[s];
    }
  };
  return out;
}

// elementwise product, with the same broadcasting rules as add
inline Var mul(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "mul");
  const Mat &A = a.val(), &B = b.val();
  bool full = A.same_shape(B);
  bool brow = B.rows == 1 && B.cols == A.cols;
  bool bscalar = B.rows == 1 && B.cols == 1;
  detail::require(full || brow || bscalar, "mul: " + shape_str(A) + " * " + shape_str(B));
  Mat C(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j)
      C.at(i, j) = A.at(i, j) * (full ? B.at(i, j) : (brow ? B.at(0, j) : B.data[0]));
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, bi = b.id, oi = out.id, full, brow] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    const Mat& A = t->nodes[std::size_t(ai)].val;
    const Mat& B = t->nodes[std::size_t(bi)].val;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    Mat& dB = t->nodes[std::size_t(bi)].grad;
    for (int i = 0; i < G.rows; ++i)
      for (int j = 0; j < G.cols; ++j) {
        double g = G.at(i, j);
        double bv = full ? B.at(i, j) : (brow ? B.at(0, j) : B.data[0]);
        dA.at(i, j) += g * bv;
        double contrib = g * A.at(i, j);
        if (full)
          dB.at(i, j) += contrib;
        else if (brow)
          dB.at(0, j) += contrib;
        else
          dB.data[0] += contrib;
      }
  };
  return out;
}

inline Var sub(Var a, Var b);  // defined after affine

// ---- unary ops ---------------------------------------------------------

// y = alpha * x + beta, elementwise
inline Var affine(Var a, double alpha, double beta) {
  Tape* t = a.tape;
  Mat C = a.val();
  for (auto& v : C.data) v = alpha * v + beta;
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id, alpha] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    for (std::size_t s = 0; s < G.size(); ++s) dA.data[s] += alpha * G.data[s];
  };
  return out;
}

inline Var sub(Var a, Var b) { return add(a, affine(b, -1.0, 0.0)); }

namespace detail {

template <class F, class DF>
Var unary(Var a, F f, DF df) {
  Tape* t = a.tape;
  Mat C = a.val();
  for (auto& v : C.data) v = f(v);
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id, df] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    const Mat& X = t->nodes[std::size_t(ai)].val;
    const Mat& Y = t->nodes[std::size_t(oi)].val;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    for (std::size_t s = 0; s < G.size(); ++s) dA.data[s] += G.data[s] * df(X.data[s], Y.data[s]);
  };
  return out;
}

}  // namespace detail

inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh_v(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp_v(Var a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log_v(Var a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// min(x, c); at x == c the constant branch wins, so the subgradient is 0
inline Var min_const(Var a, double c) {
  return detail::unary(
      a, [c](double x) { return x < c ? x : c; },
      [c](double x, double) { return x < c ? 1.0 : 0.0; });
}

// clamp to [lo, hi]; gradient flows only strictly inside the interval
inline Var clamp(Var a, double lo, double hi) {
  detail::require(lo <= hi, "clamp: lo > hi");
  return detail::unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return x > lo && x < hi ? 1.0 : 0.0; });
}

// ---- reductions and reshapes -------------------------------------------

inline Var sum_all(Var a) {
  Tape* t = a.tape;
  double s = 0.0;
  for (double v : a.val().data) s += v;
  Var out = t->make(Mat::scalar(s));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id] {
    double g = t->nodes[std::size_t(oi)].grad.data[0];
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    for (auto& v : dA.data) v += g;
  };
  return out;
}

inline Var mean_all(Var a) {
  detail::require(a.val().size() > 0, "mean_all: empty matrix");
  return affine(sum_all(a), 1.0 / double(a.val().size()), 0.0);
}

// column sums: r x c -> 1 x c
inline Var sum_rows(Var a) {
  Tape* t = a.tape;
  const Mat& A = a.val();
  Mat C(1, A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) C.at(0, j) += A.at(i, j);
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    for (int i = 0; i < dA.rows; ++i)
      for (int j = 0; j < dA.cols; ++j) dA.at(i, j) += G.at(0, j);
  };
  return out;
}

inline Var reshape(Var a, int r, int c) {
  Tape* t = a.tape;
  detail::require(std::size_t(r) * std::size_t(c) == a.val().size(),
                  "reshape: " + shape_str(a.val()) + " to " + std::to_string(r) + "x" +
                      std::to_string(c));
  Mat C(r, c);
  C.data = a.val().data;
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    for (std::size_t s = 0; s < G.size(); ++s) dA.data[s] += G.data[s];
  };
  return out;
}

inline Var concat_cols(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "concat_cols");
  const Mat &A = a.val(), &B = b.val();
  detail::require(A.rows == B.rows, "concat_cols: " + shape_str(A) + " | " + shape_str(B));
  Mat C(A.rows, A.cols + B.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int j = 0; j < A.cols; ++j) C.at(i, j) = A.at(i, j);
    for (int j = 0; j < B.cols; ++j) C.at(i, A.cols + j) = B.at(i, j);
  }
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, bi = b.id, oi = out.id] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    Mat& dB = t->nodes[std::size_t(bi)].grad;
    for (int i = 0; i < dA.rows; ++i) {
      for (int j = 0; j < dA.cols; ++j) dA.at(i, j) += G.at(i, j);
      for (int j = 0; j < dB.cols; ++j) dB.at(i, j) += G.at(i, dA.cols + j);
    }
  };
  return out;
}

inline Var concat_rows(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "concat_rows");
  const Mat &A = a.val(), &B = b.val();
  detail::require(A.cols == B.cols, "concat_rows: " + shape_str(A) + " / " + shape_str(B));
  Mat C(A.rows + B.rows, A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) C.at(i, j) = A.at(i, j);
  for (int i = 0; i < B.rows; ++i)
    for (int j = 0; j < B.cols; ++j) C.at(A.rows + i, j) = B.at(i, j);
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, bi = b.id, oi = out.id] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    Mat& dB = t->nodes[std::size_t(bi)].grad;
    for (int i = 0; i < dA.rows; ++i)
      for (int j = 0; j < dA.cols; ++j) dA.at(i, j) += G.at(i, j);
    for (int i = 0; i < dB.rows; ++i)
      for (int j = 0; j < dB.cols; ++j) dB.at(i, j) += G.at(dA.rows + i, j);
  };
  return out;
}

inline Var slice_cols(Var a, int c0, int c1) {
  Tape* t = a.tape;
  const Mat& A = a.val();
  detail::require(0 <= c0 && c0 < c1 && c1 <= A.cols,
                  "slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                      shape_str(A));
  Mat C(A.rows, c1 - c0);
  for (int i = 0; i < A.rows; ++i)
    for (int j = c0; j < c1; ++j) C.at(i, j - c0) = A.at(i, j);
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id, c0] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    for (int i = 0; i < G.rows; ++i)
      for (int j = 0; j < G.cols; ++j) dA.at(i, c0 + j) += G.at(i, j);
  };
  return out;
}

// rows of a at the given indices, in order; duplicate indices accumulate in
// the backward pass
inline Var gather_rows(Var a, std::vector<int> idx) {
  Tape* t = a.tape;
  const Mat& A = a.val();
  for (int r : idx)
    detail::require(0 <= r && r < A.rows,
                    "gather_rows: row " + std::to_string(r) + " of " + shape_str(A));
  Mat C(int(idx.size()), A.cols);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int j = 0; j < A.cols; ++j) C.at(int(i), j) = A.at(idx[i], j);
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id, idx = std::move(idx)] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < G.cols; ++j) dA.at(idx[i], j) += G.at(int(i), j);
  };
  return out;
}

inline Var repeat_rows(Var a, int r) {
  detail::require(a.val().rows == 1, "repeat_rows: input must be 1xC, got " + shape_str(a.val()));
  return gather_rows(a, std::vector<int>(std::size_t(r), 0));
}

// 1x1 extraction
inline Var pick(Var a, int r, int c) {
  Tape* t = a.tape;
  const Mat& A = a.val();
  detail::require(0 <= r && r < A.rows && 0 <= c && c < A.cols,
                  "pick: (" + std::to_string(r) + "," + std::to_string(c) + ") of " +
                      shape_str(A));
  Var out = t->make(Mat::scalar(A.at(r, c)));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id, r, c] {
    t->nodes[std::size_t(ai)].grad.at(r, c) += t->nodes[std::size_t(oi)].grad.data[0];
  };
  return out;
}

// ---- softmax -----------------------------------------------------------

// Row-wise softmax over entries where mask != 0; masked entries come out
// exactly 0. Stabilized by max subtraction within the unmasked set.
inline Var softmax_row_masked(Var a, const Mat& mask) {
  Tape* t = a.tape;
  const Mat& A = a.val();
  detail::require(A.same_shape(mask), "softmax_row_masked: value " + shape_str(A) + " vs mask " +
                                          shape_str(mask));
  Mat C(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < A.cols; ++j)
      if (mask.at(i, j) != 0.0) mx = std::max(mx, A.at(i, j));
    detail::require(std::isfinite(mx),
                    "softmax_row_masked: row " + std::to_string(i) + " is fully masked");
    double z = 0.0;
    for (int j = 0; j < A.cols; ++j)
      if (mask.at(i, j) != 0.0) z += std::exp(A.at(i, j) - mx);
    for (int j = 0; j < A.cols; ++j)
      C.at(i, j) = mask.at(i, j) != 0.0 ? std::exp(A.at(i, j) - mx) / z : 0.0;
  }
  Var out = t->make(std::move(C));
  t->nodes[std::size_t(out.id)].back = [t, ai = a.id, oi = out.id] {
    const Mat& G = t->nodes[std::size_t(oi)].grad;
    const Mat& Y = t->nodes[std::size_t(oi)].val;
    Mat& dA = t->nodes[std::size_t(ai)].grad;
    for (int i = 0; i < Y.rows; ++i) {
      double dot = 0.0;
      for (int j = 0; j < Y.cols; ++j) dot += G.at(i, j) * Y.at(i, j);
      for (int j = 0; j < Y.cols; ++j) dA.at(i, j) += Y.at(i, j) * (G.at(i, j) - dot);
    }
  };
  return out;
}

inline Var softmax_row(Var a) {
  return softmax_row_masked(a, Mat(a.val().rows, a.val().cols, 1.0));
}

}  // namespace aforge::neural
