#pragma once
// Training for the CGA stack and the regret evaluator it shares with every
// baseline: binary cross-entropy for the evaluator, REINFORCE for the decoder
// against the frozen evaluator, and an augmented Lagrangian loop for the
// payment head. Also the adapter exposing a trained model as a Mechanism.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aforge/cga/model.hpp"
#include "aforge/oracle.hpp"
#include "aforge/worldsim.hpp"

namespace aforge::cga {

using core::AuctionInstance;
using PctrFn = std::function<std::vector<double>(const MechanismView&)>;

// One tape plus a binding per store; the flags decide which stores the next
// flush_grads may write into.
struct Binding {
  Tape tape;
  BoundParams T, G, E, Pp;

  Binding(CgaModel& m, bool train_trunk, bool train_gen, bool train_eval, bool train_pay)
      : T(tape, m.trunk, train_trunk),
        G(tape, m.gen, train_gen),
        E(tape, m.eval, train_eval),
        Pp(tape, m.pay, train_pay) {}

  explicit Binding(const CgaModel& m)
      : T(tape, m.trunk), G(tape, m.gen), E(tape, m.eval), Pp(tape, m.pay) {}

  void flush() {
    T.flush_grads();
    G.flush_grads();
    E.flush_grads();
    Pp.flush_grads();
  }
};

// Full mechanism forward under one view: encode, decode, score the slate,
// price it. Values are copied out; the Vars stay valid while the binding
// lives, for losses that need the traced payment and CTR.
struct CgaForward {
  Allocation A;
  std::vector<double> alpha;     // point-wise CTR at the chosen slots
  std::vector<double> theta;     // model CTR per slot
  std::vector<double> z;         // chosen-ad probabilities per slot
  std::vector<double> payments;  // per-click payments per slot
  Var theta_v;                   // 1 x k
  Var payments_v;                // 1 x k
};

inline CgaForward cga_forward(const CgaModel& m, Binding& b, const MechanismView& v,
                              const std::vector<double>& qhat, double pos_decay,
                              DecodeMode mode, Rng* rng = nullptr) {
  if (v.k != m.k)
    throw std::invalid_argument("cga_forward: view has k=" + std::to_string(v.k) +
                                " but the model was built for k=" + std::to_string(m.k));
  EncoderOutput enc = encode(m.cfg, b.T, b.G, b.tape, v);
  std::vector<double> phi = phi_for(v, m.cfg.use_virtual_value);
  GenerationTrace trace = generate(m.cfg, b.G, b.tape, enc, phi, v.k, mode, rng);

  CgaForward f;
  f.A = trace.A;
  f.alpha = worldsim::alpha_at(qhat, f.A, pos_decay);
  Var H_A = neural::gather_rows(enc.H, f.A.slots);
  f.theta_v = m.cfg.use_evaluator
                  ? evaluator_forward(m.cfg, b.E, H_A, enc.h_u, f.alpha).theta
                  : b.tape.leaf(Mat::row(f.alpha));
  f.theta = f.theta_v.val().data;

  Var z_col = trace.chosen[0];
  for (int t = 1; t < v.k; ++t) z_col = neural::concat_rows(z_col, trace.chosen[std::size_t(t)]);
  for (const Var& c : trace.chosen) f.z.push_back(c.val().data[0]);
  Var z_theta = neural::mul(z_col, neural::reshape(f.theta_v, v.k, 1));

  std::vector<double> winner_bids(std::size_t(v.k), 0.0);
  for (int t = 0; t < v.k; ++t) winner_bids[std::size_t(t)] = v.bids[std::size_t(f.A[t])];
  f.payments_v = paymentnet_forward(m, b.Pp, H_A, winner_bids, z_theta);
  f.payments = f.payments_v.val().data;
  return f;
}

// ---------------------------------------------------------------------------
// Stage 1: evaluator (and trunk) on logged clicks.

// Traced BCE of one click record, scaled for batch-mean accumulation.
inline Var record_bce(const CgaModel& m, Binding& b, const AuctionInstance& inst,
                      const worldsim::ClickRecord& rec, double scale) {
  MechanismView v(inst);
  SetEncoding se = encode_set(m.cfg, b.T, b.tape, v);
  Var H_A = neural::gather_rows(se.H, rec.alloc.slots);
  EvaluatorOutput ev = evaluator_forward(m.cfg, b.E, H_A, se.h_u, rec.pctr);
  Var th = neural::clamp(ev.theta, 1e-6, 1.0 - 1e-6);
  Mat y(1, rec.alloc.size());
  for (int t = 0; t < rec.alloc.size(); ++t) y.at(0, t) = double(rec.clicks[std::size_t(t)]);
  Var yv = b.tape.leaf(y);
  Var ll = neural::add(neural::mul(yv, neural::log_v(th)),
                       neural::mul(neural::affine(yv, -1.0, 1.0),
                                   neural::log_v(neural::affine(th, -1.0, 1.0))));
  return neural::affine(neural::sum_all(ll), -scale, 0.0);
}

// Mean BCE of the model over records [from, to); the held-out yardstick.
inline double evaluator_logloss(const CgaModel& m, const worldsim::Dataset& data, int from,
                                int to) {
  if (from < 0 || to > int(data.log.size()) || from >= to)
    throw std::invalid_argument("evaluator_logloss: bad record range");
  double total = 0.0;
  for (int l = from; l < to; ++l) {
    Binding b(m);
    total += record_bce(m, b, data.instances[std::size_t(l)], data.log[std::size_t(l)], 1.0)
                 .val()
                 .data[0];
  }
  return total / double(to - from);
}

// Mean BCE of the point-wise predictor itself (theta = alpha), the
// externality-blind baseline the evaluator has to beat.
inline double alpha_logloss(const worldsim::Dataset& data, int from, int to) {
  if (from < 0 || to > int(data.log.size()) || from >= to)
    throw std::invalid_argument("alpha_logloss: bad record range");
  double total = 0.0;
  for (int l = from; l < to; ++l) {
    const auto& rec = data.log[std::size_t(l)];
    for (int t = 0; t < rec.alloc.size(); ++t) {
      double a = std::clamp(rec.pctr[std::size_t(t)], 1e-6, 1.0 - 1e-6);
      total -= rec.clicks[std::size_t(t)] ? std::log(a) : std::log(1.0 - a);
    }
  }
  return total / double(to - from);
}

// Adam on trunk + evaluator over records [from, to) in fixed batch order;
// returns the mean training BCE per epoch.
inline std::vector<double> evaluator_train(CgaModel& m, const worldsim::Dataset& data, int from,
                                           int to, int epochs, double lr, int batch) {
  if (from < 0 || to > int(data.log.size()) || from >= to)
    throw std::invalid_argument("evaluator_train: bad record range");
  if (epochs < 0 || batch < 1) throw std::invalid_argument("evaluator_train: bad schedule");
  std::vector<double> curve;
  for (int e = 0; e < epochs; ++e) {
    double total = 0.0;
    for (int b0 = from; b0 < to; b0 += batch) {
      int bn = std::min(batch, to - b0);
      for (int l = b0; l < b0 + bn; ++l) {
        Binding b(m, true, false, true, false);
        Var loss =
            record_bce(m, b, data.instances[std::size_t(l)], data.log[std::size_t(l)], 1.0 / bn);
        b.tape.backward(loss);
        b.flush();
        total += loss.val().data[0] * double(bn);
      }
      m.trunk.adam_step(lr);
      m.eval.adam_step(lr);
    }
    curve.push_back(total / double(to - from));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Stage 2: decoder by policy gradient against the frozen evaluator.

struct RewardBreakdown {
  std::vector<double> self_r;      // phi_i * Theta_i(A)
  std::vector<double> external_r;  // harm removal: see vw identity below
  std::vector<double> total;       // ablation-weighted sum actually trained on
  double vw_full = 0.0;            // sum_j phi_j Theta_j(A)
  std::vector<double> vw_minus;    // per slot: the same sum over A without it
};

// Scores A and every A_{-i} with the frozen evaluator (or the point-wise CTR
// under the evaluator ablation). Positional encodings and alpha are
// recomputed at the shortened slates' slots. By construction
// self_r[i] + external_r[i] = vw_full - vw_minus[i].
inline RewardBreakdown rewards(const CgaModel& m, const MechanismView& v, const Allocation& A,
                               const std::vector<double>& phi, const std::vector<double>& qhat,
                               double pos_decay) {
  std::optional<Binding> b;
  std::optional<SetEncoding> se;
  if (m.cfg.use_evaluator) {
    b.emplace(m);
    se = encode_set(m.cfg, b->T, b->tape, v);
  }
  auto theta_of = [&](const Allocation& S) {
    std::vector<double> alpha = worldsim::alpha_at(qhat, S, pos_decay);
    if (!m.cfg.use_evaluator) return alpha;
    Var H_A = neural::gather_rows(se->H, S.slots);
    return evaluator_forward(m.cfg, b->E, H_A, se->h_u, alpha).theta.val().data;
  };
  auto vw_of = [&](const Allocation& S, const std::vector<double>& th) {
    double s = 0.0;
    for (int t = 0; t < S.size(); ++t) s += phi[std::size_t(S[t])] * th[std::size_t(t)];
    return s;
  };

  RewardBreakdown rb;
  std::vector<double> th_full = theta_of(A);
  rb.vw_full = vw_of(A, th_full);
  for (int i = 0; i < A.size(); ++i) {
    Allocation Ai = drop_slot(A, i);
    double vw_minus = Ai.size() == 0 ? 0.0 : vw_of(Ai, theta_of(Ai));
    double self_r = phi[std::size_t(A[i])] * th_full[std::size_t(i)];
    double ext = (rb.vw_full - self_r) - vw_minus;
    rb.self_r.push_back(self_r);
    rb.external_r.push_back(ext);
    rb.vw_minus.push_back(vw_minus);
    rb.total.push_back((m.cfg.use_self_reward ? self_r : 0.0) +
                       (m.cfg.use_external_reward ? ext : 0.0));
  }
  return rb;
}

// REINFORCE: sample slates, weight log-probabilities of the chosen ads by
// their advantage over a greedy rollout of the current policy, Adam on the
// decoder. Without an evaluator stage nothing else ever trains the trunk, so
// it learns here too. The greedy baseline keeps the advantage signed; raw
// rewards are nonnegative, and reinforcing every sample lets the policy
// collapse onto whatever it drifted to first. entropy_bonus > 0 adds
// -beta * H(z^t) to the loss; the prior weight otherwise sharpens the
// distribution long before the score head has picked up the per-ad signal.
// Returns mean sampled total reward per instance for each epoch.
inline std::vector<double> generator_train(CgaModel& m,
                                           const std::vector<AuctionInstance>& instances,
                                           const PctrFn& pctr_fn, double pos_decay, int epochs,
                                           double lr, int batch, std::uint64_t seed,
                                           double entropy_bonus = 0.0) {
  if (instances.empty()) throw std::invalid_argument("generator_train: no instances");
  if (epochs < 0 || batch < 1) throw std::invalid_argument("generator_train: bad schedule");
  if (entropy_bonus < 0.0)
    throw std::invalid_argument("generator_train: entropy_bonus must be >= 0");
  const bool train_trunk = !m.cfg.use_evaluator;
  std::vector<double> curve;
  for (int e = 0; e < epochs; ++e) {
    Rng rng(seed, stream_id("gen-train", std::uint64_t(e)));
    double total_reward = 0.0;
    for (std::size_t b0 = 0; b0 < instances.size(); b0 += std::size_t(batch)) {
      std::size_t bn = std::min(std::size_t(batch), instances.size() - b0);
      for (std::size_t s = b0; s < b0 + bn; ++s) {
        const AuctionInstance& inst = instances[s];
        MechanismView v(inst);
        std::vector<double> qhat = pctr_fn(v);

        std::vector<double> base;
        {
          Binding g(std::as_const(m));
          EncoderOutput enc = encode(m.cfg, g.T, g.G, g.tape, v);
          std::vector<double> phi = phi_for(v, m.cfg.use_virtual_value);
          GenerationTrace tr = generate(m.cfg, g.G, g.tape, enc, phi, inst.k,
                                        DecodeMode::greedy);
          base = rewards(m, v, tr.A, phi, qhat, pos_decay).total;
        }

        Binding b(m, train_trunk, true, false, false);
        EncoderOutput enc = encode(m.cfg, b.T, b.G, b.tape, v);
        std::vector<double> phi = phi_for(v, m.cfg.use_virtual_value);
        GenerationTrace trace =
            generate(m.cfg, b.G, b.tape, enc, phi, inst.k, DecodeMode::sample, &rng);
        RewardBreakdown rb = rewards(m, v, trace.A, phi, qhat, pos_decay);
        auto adv = [&](int t) { return rb.total[std::size_t(t)] - base[std::size_t(t)]; };
        Var loss = neural::affine(neural::log_v(trace.chosen[0]), -adv(0) / double(bn), 0.0);
        for (int t = 1; t < inst.k; ++t)
          loss = neural::add(loss, neural::affine(neural::log_v(trace.chosen[std::size_t(t)]),
                                                  -adv(t) / double(bn), 0.0));
        if (entropy_bonus > 0.0) {
          for (const Var& zt : trace.z) {
            // z log z; the exact zeros at masked ads contribute exactly zero
            Var nent = neural::sum_all(
                neural::mul(zt, neural::log_v(neural::affine(zt, 1.0, 1e-12))));
            loss = neural::add(loss, neural::affine(nent, entropy_bonus / double(bn), 0.0));
          }
        }
        for (double r : rb.total) total_reward += r;
        b.tape.backward(loss);
        b.flush();
      }
      m.gen.adam_step(lr);
      if (train_trunk) m.trunk.adam_step(lr);
    }
    curve.push_back(total_reward / double(instances.size()));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Regret against any mechanism handle.

inline std::vector<double> default_misreport_grid() {
  std::vector<double> g;
  for (int j = 1; j <= 10; ++j) g.push_back(0.2 * j);
  return g;
}

struct RegretOptions {
  std::vector<double> grid = default_misreport_grid();
  int L = 1;             // valuation redraws per instance
  double u_floor = 1e-8;  // below this, a relative-regret term is skipped
};

struct ProfileRegret {
  Allocation truthful;
  std::vector<double> utility;  // truthful utility per slot
  std::vector<double> regret;   // per slot, >= 0
};

// Regret of one bid profile (truthful bids = values). For mechanisms with
// bid-independent per-click prices, a deviation that leaves the allocation
// unchanged reuses the truthful payment: the exact price is provably
// identical there, and recomputing it would leak Monte Carlo noise into the
// regret.
inline ProfileRegret profile_regret(const MechanismView& v, const std::vector<double>& values,
                                    const oracle::Mechanism& mech,
                                    const std::vector<double>& grid) {
  oracle::MechanismResult truth = mech.run(v);
  const Allocation& A = truth.outcome.allocation;
  ProfileRegret out;
  out.truthful = A;
  for (int t = 0; t < A.size(); ++t)
    out.utility.push_back(core::utility(values[std::size_t(A[t])],
                                        truth.outcome.payments[std::size_t(t)],
                                        truth.outcome.ctrs[std::size_t(t)]));
  out.regret.assign(std::size_t(A.size()), 0.0);

  std::vector<double> bids2;
  for (int t = 0; t < A.size(); ++t) {
    int ad = A[t];
    double best = out.utility[std::size_t(t)];
    for (double factor : grid) {
      if (factor == 1.0) continue;
      bids2 = v.bids;
      bids2[std::size_t(ad)] *= factor;
      MechanismView w(v, bids2);
      double u2 = 0.0;
      if (mech.truthful_prices && mech.allocate) {
        oracle::MechanismResult probe = mech.allocate(w);
        int slot2 = core::find_slot(probe.outcome.allocation, ad);
        if (slot2 < 0) {
          u2 = 0.0;
        } else if (probe.outcome.allocation == A) {
          u2 = core::utility(values[std::size_t(ad)], truth.outcome.payments[std::size_t(slot2)],
                             probe.outcome.ctrs[std::size_t(slot2)]);
        } else {
          oracle::AdOutcome o = mech.run_one(w, ad);
          u2 = o.slot < 0 ? 0.0 : core::utility(values[std::size_t(ad)], o.payment, o.ctr);
        }
      } else {
        oracle::AdOutcome o = mech.run_one(w, ad);
        u2 = o.slot < 0 ? 0.0 : core::utility(values[std::size_t(ad)], o.payment, o.ctr);
      }
      best = std::max(best, u2);
    }
    out.regret[std::size_t(t)] = best - out.utility[std::size_t(t)];
  }
  return out;
}

struct RegretSummary {
  std::vector<double> slot_regret;  // mean per slot over the profiles
  double psi_sum = 0.0;             // sum over profiles of sum_slots rgt/u
  long long profiles = 0;
  long long skipped = 0;  // slots whose truthful utility fell below the floor
};

// Empirical regret of one auction under a mechanism, averaged over L
// valuation redraws (L = 1 uses the instance's own values).
inline RegretSummary empirical_regret(const AuctionInstance& inst, const oracle::Mechanism& mech,
                                      const RegretOptions& opt, Rng& rng) {
  if (std::find(opt.grid.begin(), opt.grid.end(), 1.0) == opt.grid.end())
    throw std::invalid_argument("empirical_regret: misreport grid must contain 1.0");
  if (opt.L < 1) throw std::invalid_argument("empirical_regret: L must be >= 1");
  if (int(inst.values.size()) != inst.n)
    throw std::invalid_argument("empirical_regret: instance carries no values");

  RegretSummary sum;
  sum.slot_regret.assign(std::size_t(inst.k), 0.0);
  MechanismView base(inst);
  std::vector<double> values;
  for (int l = 0; l < opt.L; ++l) {
    if (opt.L == 1) {
      values = inst.values;
    } else {
      values.resize(std::size_t(inst.n));
      for (int i = 0; i < inst.n; ++i)
        values[std::size_t(i)] = valuation::sample(inst.dists[std::size_t(i)], rng);
    }
    MechanismView view(base, values);  // truthful bidding
    ProfileRegret pr = profile_regret(view, values, mech, opt.grid);
    ++sum.profiles;
    for (int t = 0; t < int(pr.regret.size()); ++t) {
      sum.slot_regret[std::size_t(t)] += pr.regret[std::size_t(t)];
      if (pr.utility[std::size_t(t)] < opt.u_floor)
        ++sum.skipped;
      else
        sum.psi_sum += pr.regret[std::size_t(t)] / pr.utility[std::size_t(t)];
    }
  }
  for (double& r : sum.slot_regret) r /= double(opt.L);
  return sum;
}

// ---------------------------------------------------------------------------
// Stage 3: payment head by augmented Lagrangian.

struct TrainState {
  std::vector<double> lambda;  // one multiplier per slot
  double rho = 1.0;
  std::vector<double> grid = default_misreport_grid();
  int L = 1;

  void validate(int k) const {
    if (!(rho > 0.0)) throw std::invalid_argument("TrainState: rho must be > 0");
    if (!lambda.empty() && int(lambda.size()) != k)
      throw std::invalid_argument("TrainState: lambda must have one entry per slot");
    if (std::find(grid.begin(), grid.end(), 1.0) == grid.end())
      throw std::invalid_argument("TrainState: misreport grid must contain 1.0");
    if (L < 1) throw std::invalid_argument("TrainState: L must be >= 1");
  }
};

inline void update_multipliers(TrainState& st, const std::vector<double>& mean_regret) {
  if (mean_regret.size() != st.lambda.size())
    throw std::invalid_argument("update_multipliers: regret length mismatch");
  for (std::size_t t = 0; t < st.lambda.size(); ++t)
    st.lambda[t] += st.rho * mean_regret[t];
}

// Grid scan of the current model's own regret (utilities under its CTR
// belief), used both to find the argmax deviation branch and to drive the
// multiplier updates.
struct DeviationScan {
  Allocation A;
  std::vector<double> utility;       // truthful, per slot
  std::vector<double> best_utility;  // max over the grid, per slot
  std::vector<double> best_factor;   // argmax factor, 1.0 when truthful wins
};

inline DeviationScan scan_deviations(const CgaModel& m, const MechanismView& view,
                                     const std::vector<double>& values, const PctrFn& pctr_fn,
                                     double pos_decay, const std::vector<double>& grid) {
  DeviationScan scan;
  std::vector<double> qhat = pctr_fn(view);
  {
    Binding b(m);
    CgaForward truth = cga_forward(m, b, view, qhat, pos_decay, DecodeMode::greedy);
    scan.A = truth.A;
    for (int t = 0; t < m.k; ++t)
      scan.utility.push_back(core::utility(values[std::size_t(truth.A[t])],
                                           truth.payments[std::size_t(t)],
                                           truth.theta[std::size_t(t)]));
  }
  scan.best_utility = scan.utility;
  scan.best_factor.assign(std::size_t(m.k), 1.0);
  std::vector<double> bids2;
  for (int t = 0; t < m.k; ++t) {
    int ad = scan.A[t];
    for (double factor : grid) {
      if (factor == 1.0) continue;
      bids2 = view.bids;
      bids2[std::size_t(ad)] *= factor;
      MechanismView w(view, bids2);
      Binding b(m);
      CgaForward dev = cga_forward(m, b, w, qhat, pos_decay, DecodeMode::greedy);
      int slot2 = core::find_slot(dev.A, ad);
      double u2 = slot2 < 0 ? 0.0
                            : core::utility(values[std::size_t(ad)],
                                            dev.payments[std::size_t(slot2)],
                                            dev.theta[std::size_t(slot2)]);
      if (u2 > scan.best_utility[std::size_t(t)]) {
        scan.best_utility[std::size_t(t)] = u2;
        scan.best_factor[std::size_t(t)] = factor;
      }
    }
  }
  return scan;
}

struct PayTrainReport {
  std::vector<double> revenue_curve;  // mean expected revenue per epoch
  std::vector<double> regret_curve;   // mean probe slot regret per epoch
  TrainState state;                   // final multipliers
};

// Alternates Adam steps on L_P with multiplier updates from probe regret.
// Gradients flow through the payments of both the truthful branch and the
// argmax-misreport branch; the decoder also receives them when end2end is
// set, otherwise generator and evaluator bytes stay untouched.
inline PayTrainReport paymentnet_train(CgaModel& m, const std::vector<AuctionInstance>& instances,
                                       const PctrFn& pctr_fn, double pos_decay, TrainState st,
                                       int epochs, double lr, int batch, std::uint64_t seed) {
  if (instances.empty()) throw std::invalid_argument("paymentnet_train: no instances");
  if (epochs < 0 || batch < 1) throw std::invalid_argument("paymentnet_train: bad schedule");
  if (st.lambda.empty()) st.lambda.assign(std::size_t(m.k), 0.0);
  st.validate(m.k);

  PayTrainReport report;
  const bool train_gen = m.cfg.end2end;
  const int probe = int(std::min<std::size_t>(instances.size(), 256));

  for (int e = 0; e < epochs; ++e) {
    Rng redraw(seed, stream_id("pay-redraw", std::uint64_t(e)));
    double revenue_total = 0.0;
    long long profiles = 0;
    for (std::size_t b0 = 0; b0 < instances.size(); b0 += std::size_t(batch)) {
      std::size_t bn = std::min(std::size_t(batch), instances.size() - b0);
      for (std::size_t s = b0; s < b0 + bn; ++s) {
        const AuctionInstance& inst = instances[s];
        MechanismView base(inst);
        for (int l = 0; l < st.L; ++l) {
          std::vector<double> values;
          if (st.L == 1) {
            values = inst.values;
          } else {
            values.resize(std::size_t(inst.n));
            for (int i = 0; i < inst.n; ++i)
              values[std::size_t(i)] = valuation::sample(inst.dists[std::size_t(i)], redraw);
          }
          MechanismView view(base, values);
          std::vector<double> qhat = pctr_fn(view);
          DeviationScan scan = scan_deviations(m, view, values, pctr_fn, pos_decay, st.grid);

          double scale = 1.0 / double(bn * std::size_t(st.L));
          Binding b(m, false, train_gen, false, true);
          CgaForward truth = cga_forward(m, b, view, qhat, pos_decay, DecodeMode::greedy);
          Var loss = neural::affine(neural::sum_all(neural::mul(truth.payments_v, truth.theta_v)),
                                    -scale, 0.0);
          for (int t = 0; t < m.k; ++t)
            revenue_total += truth.payments[std::size_t(t)] * truth.theta[std::size_t(t)];
          ++profiles;

          std::vector<std::vector<double>> dev_bids;  // keeps views alive till backward
          dev_bids.reserve(std::size_t(m.k));
          for (int t = 0; t < m.k; ++t) {
            if (scan.best_factor[std::size_t(t)] == 1.0) continue;
            int ad = scan.A[t];
            dev_bids.push_back(view.bids);
            dev_bids.back()[std::size_t(ad)] *= scan.best_factor[std::size_t(t)];
            MechanismView w(view, dev_bids.back());
            CgaForward dev = cga_forward(m, b, w, qhat, pos_decay, DecodeMode::greedy);
            int slot2 = core::find_slot(dev.A, ad);
            if (slot2 < 0) continue;  // scan found an improvement, so it wins here
            Var value_leaf = b.tape.leaf(Mat::scalar(values[std::size_t(ad)]));
            Var u_dev = neural::mul(neural::sub(value_leaf, neural::pick(dev.payments_v, 0, slot2)),
                                    neural::pick(dev.theta_v, 0, slot2));
            Var u_truth = neural::mul(
                neural::sub(value_leaf, neural::pick(truth.payments_v, 0, t)),
                neural::pick(truth.theta_v, 0, t));
            Var rgt = neural::sub(u_dev, u_truth);
            loss = neural::add(loss, neural::affine(rgt, st.lambda[std::size_t(t)] * scale, 0.0));
            loss = neural::add(
                loss, neural::affine(neural::mul(rgt, rgt), 0.5 * st.rho * scale, 0.0));
          }
          b.tape.backward(loss);
          b.flush();
        }
      }
      m.pay.adam_step(lr);
      if (train_gen) m.gen.adam_step(lr);
    }
    report.revenue_curve.push_back(revenue_total / double(profiles));

    std::vector<double> mean_rgt(std::size_t(m.k), 0.0);
    for (int s = 0; s < probe; ++s) {
      const AuctionInstance& inst = instances[std::size_t(s)];
      MechanismView base(inst);
      MechanismView view(base, inst.values);
      DeviationScan scan = scan_deviations(m, view, inst.values, pctr_fn, pos_decay, st.grid);
      for (int t = 0; t < m.k; ++t)
        mean_rgt[std::size_t(t)] +=
            scan.best_utility[std::size_t(t)] - scan.utility[std::size_t(t)];
    }
    for (double& r : mean_rgt) r /= double(probe);
    update_multipliers(st, mean_rgt);
    double mr = 0.0;
    for (double r : mean_rgt) mr += r;
    report.regret_curve.push_back(mr / double(m.k));
  }
  report.state = st;
  return report;
}

// ---------------------------------------------------------------------------
// Mechanism adapter.

// Greedy decoding plus the payment head, reported under the caller's CTR
// oracle (the honest measure is the true world CTR). Payments depend on the
// bidder's own bid, so no truthful-price reuse applies.
inline oracle::Mechanism make_cga_mechanism(std::shared_ptr<const CgaModel> model,
                                            PctrFn pctr_fn, double pos_decay,
                                            oracle::CtrOracle outcome_ctr) {
  oracle::Mechanism mech;
  mech.name = model->cfg.variant_name();
  mech.truthful_prices = false;
  mech.run = [model, pctr_fn, pos_decay, outcome_ctr](const MechanismView& v) {
    Binding b(*model);
    CgaForward f = cga_forward(*model, b, v, pctr_fn(v), pos_decay, DecodeMode::greedy);
    oracle::MechanismResult res;
    res.outcome.allocation = f.A;
    res.outcome.payments = f.payments;
    res.outcome.ctrs = outcome_ctr(v, f.A);
    std::vector<double> phi = phi_for(v, model->cfg.use_virtual_value);
    for (int t = 0; t < v.k; ++t)
      res.score += phi[std::size_t(f.A[t])] * res.outcome.ctrs[std::size_t(t)];
    res.scored = 1;
    return res;
  };
  mech.run_one = [run = mech.run](const MechanismView& v, int ad) {
    return oracle::ad_outcome_from(run(v), ad);
  };
  mech.allocate = mech.run;
  return mech;
}

}  // namespace aforge::cga
