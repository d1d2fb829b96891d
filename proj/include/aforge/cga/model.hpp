#pragma once
// The CGA networks: a permutation-invariant set encoder feeding an
// autoregressive slate decoder, a permutation-aware CTR evaluator, and a
// payment network. Parameters live in four stores so each training stage can
// freeze the previous ones: trunk (embeddings + set attention), gen (decoder),
// eval (evaluator), pay (payment head).

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "aforge/core.hpp"
#include "aforge/neural/layers.hpp"
#include "aforge/valuation.hpp"

namespace aforge::cga {

using core::Allocation;
using core::MechanismView;
using neural::BoundParams;
using neural::Mat;
using neural::ParamStore;
using neural::Tape;
using neural::Var;

struct CgaConfig {
  int d_a = 8, d_u = 8;  // raw feature widths the networks are built for
  int d_embed = 8;
  int heads = 4;
  int d_state = 32;  // decoder GRU hidden width, also the context width
  int d_lstm = 32;
  int mlp_hidden = 128;
  int mlp_narrow = 32;

  // ablation switches; all true + end2end=false is the full mechanism
  bool use_evaluator = true;       // false: score slates with the point-wise CTR
  bool end2end = false;            // true: payment loss also updates the decoder
  bool use_self_reward = true;
  bool use_external_reward = true;
  bool use_virtual_value = true;   // false: decoder prior and rewards use raw bids

  void validate() const {
    if (d_a < 1 || d_u < 1 || d_embed < 1 || d_state < 1 || d_lstm < 1 || mlp_hidden < 1 ||
        mlp_narrow < 1)
      throw std::invalid_argument("CgaConfig: widths must be >= 1");
    if (heads < 1 || d_embed % heads != 0)
      throw std::invalid_argument("CgaConfig: d_embed must be divisible by heads");
  }

  std::string variant_name() const {
    std::string name = "cga";
    if (!use_evaluator) name += "-theta";
    if (end2end) name += "-end2end";
    if (!use_self_reward) name += "-noself";
    if (!use_external_reward) name += "-noext";
    if (!use_virtual_value) name += "-nophi";
    return name;
  }
};

struct CgaModel {
  CgaConfig cfg;
  int k = 0;  // slots the payment head was sized for
  ParamStore trunk, gen, eval, pay;
};

inline CgaModel make_model(const CgaConfig& cfg, int k, std::uint64_t seed) {
  cfg.validate();
  if (k < 1) throw std::invalid_argument("make_model: k must be >= 1");
  CgaModel m;
  m.cfg = cfg;
  m.k = k;
  Rng rng(seed, stream_id("cga-init"));

  neural::init_linear(m.trunk, "embed.ad", cfg.d_a + 1, cfg.d_embed, rng);
  neural::init_linear(m.trunk, "embed.user", cfg.d_u, cfg.d_embed, rng);
  neural::init_attention(m.trunk, "enc.at", cfg.d_embed, rng);

  neural::init_mlp(m.gen, "ctx", {2 * cfg.d_embed, cfg.mlp_hidden, cfg.d_state}, rng);
  neural::init_gru(m.gen, "dec.gru", cfg.d_embed, cfg.d_state, rng);
  m.gen.create_uniform("dec.start", 1, cfg.d_embed, cfg.d_embed, rng);
  neural::init_mlp(m.gen, "dec.score", {cfg.d_state + cfg.d_embed, cfg.mlp_hidden,
                                        cfg.mlp_narrow, 1}, rng);
  m.gen.create_zeros("dec.w", 1, 1);  // e^w = 1 at start

  neural::init_attention(m.eval, "ev.at", cfg.d_embed, rng);
  neural::init_bilstm(m.eval, "ev.bl", cfg.d_embed, cfg.d_lstm, rng);
  neural::init_mlp(m.eval, "ev.head", {2 * cfg.d_embed + 2 * cfg.d_lstm, cfg.mlp_hidden,
                                       cfg.mlp_narrow, 1}, rng);

  int pay_in = cfg.d_embed + (k - 1) + 1;
  neural::init_mlp(m.pay, "pn", {pay_in, cfg.mlp_hidden, cfg.mlp_narrow, 1}, rng);
  return m;
}

inline void save_model(const CgaModel& m, const std::string& prefix) {
  m.trunk.save(prefix + "trunk.json");
  m.gen.save(prefix + "gen.json");
  m.eval.save(prefix + "eval.json");
  m.pay.save(prefix + "pay.json");
}

inline void load_model(CgaModel& m, const std::string& prefix) {
  m.trunk.load(prefix + "trunk.json");
  m.gen.load(prefix + "gen.json");
  m.eval.load(prefix + "eval.json");
  m.pay.load(prefix + "pay.json");
}

// Decoder prior: closed-form virtual values from the attached distributions,
// or the raw bids under the phi ablation.
inline std::vector<double> phi_for(const MechanismView& v, bool use_virtual_value) {
  if (!use_virtual_value) return v.bids;
  std::vector<double> phi(std::size_t(v.n), 0.0);
  for (int i = 0; i < v.n; ++i)
    phi[std::size_t(i)] =
        valuation::virtual_value_ext(v.dists[std::size_t(i)], v.bids[std::size_t(i)]);
  return phi;
}

struct SetEncoding {
  Var H;    // n x d_embed augmented ad embeddings
  Var h_u;  // 1 x d_embed user representation
};

struct EncoderOutput {
  Var H;
  Var h_u;
  Var c;  // 1 x d_state context embedding
};

// e_i = embed([x_i; b_i]); H = self-attention over the set (no positions).
inline SetEncoding encode_set(const CgaConfig& cfg, BoundParams& T, Tape& t,
                              const MechanismView& v) {
  if (int(v.user_features.size()) != cfg.d_u ||
      int(v.ad_features.front().size()) != cfg.d_a)
    throw std::invalid_argument("encode: feature widths do not match the model");
  Mat X(v.n, cfg.d_a + 1);
  for (int i = 0; i < v.n; ++i) {
    for (int j = 0; j < cfg.d_a; ++j) X.at(i, j) = v.ad_features[std::size_t(i)][std::size_t(j)];
    X.at(i, cfg.d_a) = v.bids[std::size_t(i)];
  }
  Var E = neural::linear(T, "embed.ad", t.leaf(X));
  Var H = neural::attention(T, "enc.at", E, cfg.heads, neural::Positional::none);
  Var h_u = neural::linear(T, "embed.user", t.leaf(Mat::row(v.user_features)));
  return {H, h_u};
}

// c = MLP([sum_i h_i; h_u]); the summation runs in fixed row order so the
// context is permutation-invariant up to float associativity.
inline EncoderOutput encode(const CgaConfig& cfg, BoundParams& T, BoundParams& G, Tape& t,
                            const MechanismView& v) {
  SetEncoding se = encode_set(cfg, T, t, v);
  Var c = neural::mlp(G, "ctx", neural::concat_cols(neural::sum_rows(se.H), se.h_u), 2);
  return {se.H, se.h_u, c};
}

// z^t = softmax over unmasked ads of MLP([s_t; h_i]) + e^w * phi_i. mask[i]=1
// marks ad i as still available.
inline Var alloc_probs(BoundParams& G, Var s_t, Var H, const std::vector<double>& phi,
                       const std::vector<double>& mask) {
  const int n = H.val().rows;
  if (int(phi.size()) != n || int(mask.size()) != n)
    throw std::invalid_argument("alloc_probs: phi and mask must have length n");
  Tape& t = *H.tape;
  Var S = neural::repeat_rows(s_t, n);
  Var logits = neural::mlp(G, "dec.score", neural::concat_cols(S, H), 3);  // n x 1
  Mat phi_col(n, 1);
  for (int i = 0; i < n; ++i) phi_col.at(i, 0) = phi[std::size_t(i)];
  Var prior = neural::mul(t.leaf(phi_col), neural::exp_v(G["dec.w"]));
  Var row = neural::reshape(neural::add(logits, prior), 1, n);
  return neural::softmax_row_masked(row, Mat::row(mask));
}

enum class DecodeMode { greedy, sample };

struct GenerationTrace {
  Allocation A;
  std::vector<Var> z;       // one 1 x n distribution per slot
  std::vector<Var> chosen;  // z[t] at the chosen ad, 1 x 1, for the policy loss
  DecodeMode mode = DecodeMode::greedy;
};

// Autoregressive decoding: s_0 = c, the first GRU input is the learned START
// token, then the chosen ad's embedding feeds the next step. Sampling draws
// from z^t; greedy takes the argmax (lowest index on ties).
inline GenerationTrace generate(const CgaConfig& cfg, BoundParams& G, Tape& t,
                                const EncoderOutput& enc, const std::vector<double>& phi,
                                int k, DecodeMode mode, Rng* rng = nullptr) {
  const int n = enc.H.val().rows;
  if (k < 1 || k > n) throw std::invalid_argument("generate: need 1 <= k <= n");
  if (mode == DecodeMode::sample && rng == nullptr)
    throw std::invalid_argument("generate: sample mode needs an rng");
  (void)cfg;
  GenerationTrace trace;
  trace.mode = mode;
  std::vector<double> mask(std::size_t(n), 1.0);
  Var s = enc.c;
  Var input = G["dec.start"];
  for (int slot = 0; slot < k; ++slot) {
    s = neural::gru_cell(G, "dec.gru", s, input);
    Var z = alloc_probs(G, s, enc.H, phi, mask);
    const auto& zv = z.val().data;
    int pick = -1;
    if (mode == DecodeMode::greedy) {
      double best = -1.0;
      for (int i = 0; i < n; ++i)
        if (mask[std::size_t(i)] > 0.0 && zv[std::size_t(i)] > best) {
          best = zv[std::size_t(i)];
          pick = i;
        }
    } else {
      double u = rng->uniform(), acc = 0.0;
      for (int i = 0; i < n; ++i) {
        if (mask[std::size_t(i)] <= 0.0) continue;
        acc += zv[std::size_t(i)];
        pick = i;
        if (u < acc) break;  // the last unmasked ad absorbs rounding slack
      }
    }
    trace.A.slots.push_back(pick);
    trace.z.push_back(z);
    trace.chosen.push_back(neural::pick(z, 0, pick));
    mask[std::size_t(pick)] = 0.0;
    input = neural::gather_rows(enc.H, {pick});
  }
  return trace;
}

struct EvaluatorOutput {
  Var gamma;  // 1 x |A|, strictly inside (0, 2)
  Var theta;  // 1 x |A|, min(alpha * gamma, 1)
};

// gamma = 2*sigmoid(MLP([H^s_i; H^f_i; H^b_i; h_u])) per slot, where H^s is
// position-aware self-attention over the slate and (H^f, H^b) the Bi-LSTM
// states; theta calibrates the point-wise CTR alpha with gamma.
inline EvaluatorOutput evaluator_forward(const CgaConfig& cfg, BoundParams& E, Var H_A, Var h_u,
                                         const std::vector<double>& alpha) {
  const int len = H_A.val().rows;
  if (len < 1) throw std::invalid_argument("evaluator_forward: empty allocation");
  if (int(alpha.size()) != len)
    throw std::invalid_argument("evaluator_forward: alpha must match the slate length");
  Var Hs = neural::attention(E, "ev.at", H_A, cfg.heads, neural::Positional::sinusoidal);
  auto [Hf, Hb] = neural::bilstm(E, "ev.bl", H_A, cfg.d_lstm);
  Var Hu = neural::repeat_rows(h_u, len);
  Var joint = neural::concat_cols(neural::concat_cols(Hs, Hf), neural::concat_cols(Hb, Hu));
  Var out = neural::mlp(E, "ev.head", joint, 3);  // len x 1
  Var gamma = neural::reshape(neural::affine(neural::sigmoid(out), 2.0, 0.0), 1, len);
  Var theta = neural::min_const(neural::mul(H_A.tape->leaf(Mat::row(alpha)), gamma), 1.0);
  return {gamma, theta};
}

// Payment rate p~ = sigmoid(MLP([H_A; B^-; Z*Theta])) per winner, payment
// p = p~ * b. Row i of B^- holds the other winners' bids in slot order, so
// the head never sees more than the bid it may charge (IR by construction).
inline Var paymentnet_forward(const CgaModel& m, BoundParams& Pp, Var H_A,
                              const std::vector<double>& winner_bids, Var z_theta) {
  const int k = H_A.val().rows;
  if (k != m.k)
    throw std::invalid_argument("paymentnet_forward: slate length does not match the model");
  if (int(winner_bids.size()) != k || z_theta.val().rows != k || z_theta.val().cols != 1)
    throw std::invalid_argument("paymentnet_forward: need k bids and a k x 1 value column");
  Tape& t = *H_A.tape;
  Var input = H_A;
  if (k > 1) {
    Mat bm(k, k - 1);
    for (int i = 0; i < k; ++i) {
      int c = 0;
      for (int j = 0; j < k; ++j)
        if (j != i) bm.at(i, c++) = winner_bids[std::size_t(j)];
    }
    input = neural::concat_cols(input, t.leaf(bm));
  }
  input = neural::concat_cols(input, z_theta);
  Var rate = neural::sigmoid(neural::mlp(Pp, "pn", input, 3));  // k x 1
  return neural::mul(neural::reshape(rate, 1, k), t.leaf(Mat::row(winner_bids)));
}

// A with slot i removed and later ads shifted up one slot.
inline Allocation drop_slot(const Allocation& A, int slot) {
  Allocation out;
  for (int t = 0; t < A.size(); ++t)
    if (t != slot) out.slots.push_back(A[t]);
  return out;
}

}  // namespace aforge::cga
