#pragma once
// Layers on top of the tape: linear/MLP, multi-head self-attention with
// optional sinusoidal positional encoding, a GRU cell, and a Bi-LSTM. Each
// layer pairs an init_* routine (registers parameters under a name prefix)
// with a forward routine reading them through BoundParams.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "aforge/neural/optim.hpp"
#include "aforge/neural/tape.hpp"

namespace aforge::neural {

inline void init_linear(ParamStore& ps, const std::string& pre, int in, int out, Rng& rng) {
  ps.create_uniform(pre + ".w", in, out, in, rng);
  ps.create_zeros(pre + ".b", 1, out);
}

inline Var linear(BoundParams& P, const std::string& pre, Var x) {
  return add(matmul(x, P[pre + ".w"]), P[pre + ".b"]);
}

// dims = {in, hidden..., out}; ReLU between layers, identity after the last
inline void init_mlp(ParamStore& ps, const std::string& pre, const std::vector<int>& dims,
                     Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("init_mlp: need at least in and out dims");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    init_linear(ps, pre + "." + std::to_string(l), dims[l], dims[l + 1], rng);
}

inline Var mlp(BoundParams& P, const std::string& pre, Var x, int layers) {
  for (int l = 0; l < layers; ++l) {
    x = linear(P, pre + "." + std::to_string(l), x);
    if (l + 1 < layers) x = relu(x);
  }
  return x;
}

// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same angle)
inline Mat sinusoidal_pe(int seq, int d) {
  Mat pe(seq, d);
  for (int pos = 0; pos < seq; ++pos)
    for (int j = 0; j < d; ++j) {
      double angle = pos / std::pow(10000.0, double(2 * (j / 2)) / double(d));
      pe.at(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

enum class Positional { none, sinusoidal };

inline void init_attention(ParamStore& ps, const std::string& pre, int d, Rng& rng) {
  for (const char* proj : {".q", ".k", ".v", ".o"}) init_linear(ps, pre + proj, d, d, rng);
}

// Scaled dot-product multi-head self-attention over X (seq x d) with learned
// Q/K/V/output projections and a residual connection. Near-uniform attention
// averages the rows, so without the residual every output row degenerates to
// the set mean and per-row identity is lost. Sinusoidal PE feeds the Q/K/V
// projections but stays out of the residual stream: its unit-scale entries
// would otherwise swamp the content rows.
inline Var attention(BoundParams& P, const std::string& pre, Var X, int heads, Positional pos) {
  const int seq = X.val().rows, d = X.val().cols;
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("attention: d=" + std::to_string(d) +
                                " not divisible by heads=" + std::to_string(heads));
  Var Xp = pos == Positional::sinusoidal ? add(X, X.tape->leaf(sinusoidal_pe(seq, d))) : X;
  Var Q = linear(P, pre + ".q", Xp);
  Var K = linear(P, pre + ".k", Xp);
  Var V = linear(P, pre + ".v", Xp);
  const int dh = d / heads;
  Var merged;
  for (int h = 0; h < heads; ++h) {
    Var Qh = slice_cols(Q, h * dh, (h + 1) * dh);
    Var Kh = slice_cols(K, h * dh, (h + 1) * dh);
    Var Vh = slice_cols(V, h * dh, (h + 1) * dh);
    Var attn = softmax_row(affine(matmul_nt(Qh, Kh), 1.0 / std::sqrt(double(dh)), 0.0));
    Var Oh = matmul(attn, Vh);
    merged = h == 0 ? Oh : concat_cols(merged, Oh);
  }
  return add(X, linear(P, pre + ".o", merged));
}

inline void init_gru(ParamStore& ps, const std::string& pre, int d_in, int d, Rng& rng) {
  for (const char* g : {"z", "r", "h"}) {
    ps.create_uniform(pre + ".w" + g, d_in, d, d_in, rng);
    ps.create_uniform(pre + ".u" + g, d, d, d, rng);
    ps.create_zeros(pre + ".b" + g, 1, d);
  }
}

// z = sig(Wz x + Uz s + bz); r = sig(Wr x + Ur s + br);
// h~ = tanh(Wh x + Uh (r.s) + bh); s' = (1-z).s + z.h~
inline Var gru_cell(BoundParams& P, const std::string& pre, Var s_prev, Var x) {
  Var z = sigmoid(add(add(matmul(x, P[pre + ".wz"]), matmul(s_prev, P[pre + ".uz"])),
                      P[pre + ".bz"]));
  Var r = sigmoid(add(add(matmul(x, P[pre + ".wr"]), matmul(s_prev, P[pre + ".ur"])),
                      P[pre + ".br"]));
  Var h = tanh_v(add(add(matmul(x, P[pre + ".wh"]), matmul(mul(r, s_prev), P[pre + ".uh"])),
                     P[pre + ".bh"]));
  return add(mul(affine(z, -1.0, 1.0), s_prev), mul(z, h));
}

inline void init_lstm(ParamStore& ps, const std::string& pre, int d_in, int d, Rng& rng) {
  for (const char* g : {"i", "f", "o", "g"}) {
    ps.create_uniform(pre + ".w" + g, d_in, d, d_in, rng);
    ps.create_uniform(pre + ".u" + g, d, d, d, rng);
  }
  ps.create_zeros(pre + ".bi", 1, d);
  ps.create_const(pre + ".bf", 1, d, 1.0);  // forget gate starts open
  ps.create_zeros(pre + ".bo", 1, d);
  ps.create_zeros(pre + ".bg", 1, d);
}

struct LstmState {
  Var h, c;
};

inline LstmState lstm_step(BoundParams& P, const std::string& pre, LstmState s, Var x) {
  auto gate = [&](const std::string& g) {
    return add(add(matmul(x, P[pre + ".w" + g]), matmul(s.h, P[pre + ".u" + g])),
               P[pre + ".b" + g]);
  };
  Var i = sigmoid(gate("i"));
  Var f = sigmoid(gate("f"));
  Var o = sigmoid(gate("o"));
  Var g = tanh_v(gate("g"));
  Var c = add(mul(f, s.c), mul(i, g));
  return LstmState{mul(o, tanh_v(c)), c};
}

inline void init_bilstm(ParamStore& ps, const std::string& pre, int d_in, int d, Rng& rng) {
  init_lstm(ps, pre + ".f", d_in, d, rng);
  init_lstm(ps, pre + ".b", d_in, d, rng);
}

// Runs one LSTM left-to-right and another right-to-left over the rows of X;
// returns (H_f, H_b), each seq x d_hidden, with H_b[t] the backward state at
// row t.
inline std::pair<Var, Var> bilstm(BoundParams& P, const std::string& pre, Var X, int d_hidden) {
  const int seq = X.val().rows;
  if (seq < 1) throw std::invalid_argument("bilstm: empty sequence");
  Tape& tape = *X.tape;

  auto run = [&](const std::string& dir, bool reversed) {
    LstmState s{tape.leaf(Mat(1, d_hidden)), tape.leaf(Mat(1, d_hidden))};
    std::vector<Var> states(static_cast<std::size_t>(seq));
    for (int step = 0; step < seq; ++step) {
      int row = reversed ? seq - 1 - step : step;
      s = lstm_step(P, pre + dir, s, gather_rows(X, {row}));
      states[std::size_t(row)] = s.h;
    }
    Var H = states[0];
    for (int row = 1; row < seq; ++row) H = concat_rows(H, states[std::size_t(row)]);
    return H;
  };
  return {run(".f", false), run(".b", true)};
}

}  // namespace aforge::neural
