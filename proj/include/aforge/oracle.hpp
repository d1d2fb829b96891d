#pragma once
// Exact mechanisms by enumeration: the revenue-optimal DSIC auction
// (virtual-welfare argmax plus Monte Carlo payments), VCG and GSP baselines,
// and the allocation-monotonicity checker. Ground truth for everything
// learned elsewhere.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aforge/core.hpp"
#include "aforge/rng.hpp"
#include "aforge/worldsim.hpp"

namespace aforge::oracle {

using core::Allocation;
using core::MechanismView;

struct CapExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr long long kEnumerationCap = 10'000'000;

// n! / (n-k)!, saturating at cap+1 so huge n cannot overflow.
inline long long count_allocations(int n, int k, long long cap = kEnumerationCap) {
  if (n < 0 || k < 0 || k > n)
    throw std::invalid_argument("count_allocations: need 0 <= k <= n");
  long long c = 1;
  for (int j = 0; j < k; ++j) {
    c *= n - j;
    if (c > cap) return cap + 1;
  }
  return c;
}

inline void check_cap(int n, int k, long long cap = kEnumerationCap) {
  if (count_allocations(n, k, cap) > cap)
    throw CapExceeded("enumerating " + std::to_string(n) + " ads over " + std::to_string(k) +
                      " slots exceeds the cap of " + std::to_string(cap) +
                      " allocations; reduce n or k");
}

// Visits every k-permutation of {0..n-1} in lexicographic order, reusing a
// single buffer; fn sees each one as a const Allocation&.
template <class Fn>
void for_each_allocation(int n, int k, Fn&& fn, long long cap = kEnumerationCap) {
  if (n < 1 || k < 1 || k > n)
    throw std::invalid_argument("for_each_allocation: need 1 <= k <= n");
  check_cap(n, k, cap);
  Allocation buf{std::vector<int>(std::size_t(k), -1)};
  std::vector<bool> used(std::size_t(n), false);
  auto rec = [&](auto&& self, int depth) -> void {
    if (depth == k) {
      fn(std::as_const(buf));
      return;
    }
    for (int i = 0; i < n; ++i) {
      if (used[std::size_t(i)]) continue;
      used[std::size_t(i)] = true;
      buf.slots[std::size_t(depth)] = i;
      self(self, depth + 1);
      used[std::size_t(i)] = false;
    }
  };
  rec(rec, 0);
}

inline std::vector<Allocation> enumerate_allocations(int n, int k,
                                                     long long cap = kEnumerationCap) {
  check_cap(n, k, cap);
  std::vector<Allocation> out;
  out.reserve(std::size_t(count_allocations(n, k, cap)));
  for_each_allocation(n, k, [&](const Allocation& a) { out.push_back(a); }, cap);
  return out;
}

// Permutation-aware CTR model handle: (view, allocation) -> k CTRs in [0,1].
// bind() amortizes per-instance work (quality scores, similarity tables,
// network encodings) across many allocation queries. A bound handle is tied
// to the exact view contents at bind time, so callers must re-bind after
// changing any bid; the reference it returns stays valid only until the next
// call on the same handle.
struct CtrOracle {
  using Bound = std::function<const std::vector<double>&(const Allocation&)>;

  std::function<std::vector<double>(const MechanismView&, const Allocation&)> eval;
  std::function<Bound(const MechanismView&)> binder;  // optional fast path

  std::vector<double> operator()(const MechanismView& v, const Allocation& a) const {
    return eval(v, a);
  }

  Bound bind(const MechanismView& v) const {
    if (binder) return binder(v);
    auto buf = std::make_shared<std::vector<double>>();
    return [fn = eval, v, buf](const Allocation& a) -> const std::vector<double>& {
      *buf = fn(v, a);
      return *buf;
    };
  }
};

// Ground-truth CTR oracle over a synthetic world.
inline CtrOracle make_true_ctr_oracle(const worldsim::WorldModel& world) {
  CtrOracle o;
  o.eval = [world](const MechanismView& v, const Allocation& a) { return world.true_ctr(v, a); };
  o.binder = [world](const MechanismView& v) -> CtrOracle::Bound {
    auto table = std::make_shared<worldsim::CtrTable>(world.ctr_table(v));
    auto buf = std::make_shared<std::vector<double>>();
    return [table, buf](const Allocation& a) -> const std::vector<double>& {
      table->theta_into(a, *buf);
      return *buf;
    };
  };
  return o;
}

// Fixed-rate CTR oracle; the classic position-free setting used by tests.
inline CtrOracle make_constant_ctr_oracle(double rate = 1.0) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw std::invalid_argument("make_constant_ctr_oracle: rate must be in [0, 1]");
  CtrOracle o;
  o.eval = [rate](const MechanismView&, const Allocation& a) {
    return std::vector<double>(std::size_t(a.size()), rate);
  };
  return o;
}

struct MechanismResult {
  core::Outcome outcome;
  double score = 0.0;      // Σ weight_i·θ_i of the chosen allocation
  long long scored = 0;    // allocations scored while producing the result
};

// argmax (argmin when maximize=false, as a negative control) of
// Σ_t phi[A_t]·θ_t over all feasible allocations. Strict comparison plus
// lexicographic enumeration order makes ties resolve to the smallest
// allocation.
inline MechanismResult extremal_allocate(const MechanismView& v, const CtrOracle& ctr,
                                         const std::vector<double>& phi, bool maximize,
                                         long long cap = kEnumerationCap) {
  if (int(phi.size()) != v.n)
    throw std::invalid_argument("extremal_allocate: phi must have length n");
  auto bound = ctr.bind(v);
  MechanismResult res;
  double best = maximize ? -std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::infinity();
  for_each_allocation(
      v.n, v.k,
      [&](const Allocation& a) {
        const auto& theta = bound(a);
        double w = 0.0;
        for (int t = 0; t < v.k; ++t) w += phi[std::size_t(a[t])] * theta[std::size_t(t)];
        ++res.scored;
        if (maximize ? w > best : w < best) {
          best = w;
          res.outcome.allocation = a;
          res.outcome.ctrs = theta;
        }
      },
      cap);
  res.score = best;
  return res;
}

inline MechanismResult optimal_allocate(const MechanismView& v, const CtrOracle& ctr,
                                        const std::vector<double>& phi,
                                        long long cap = kEnumerationCap) {
  return extremal_allocate(v, ctr, phi, true, cap);
}

// Scoring weights of the optimal mechanism: virtual values of the standing
// bids under each ad's declared distribution.
inline std::vector<double> virtual_bids(const MechanismView& v) {
  std::vector<double> phi(std::size_t(v.n), 0.0);
  for (int i = 0; i < v.n; ++i)
    phi[std::size_t(i)] = valuation::virtual_value_ext(v.dists[std::size_t(i)],
                                                       v.bids[std::size_t(i)]);
  return phi;
}

// Per-click Myerson payment for `ad`: p = b − b·E_{t~U[0,b]}[Θ(t, b_-i)]/Θ(b),
// estimated with S Monte Carlo draws; 0 when Θ(b) = 0. phi_fn(j, b) gives the
// scoring weight of ad j bidding b. `scored` accumulates enumeration work.
inline double myerson_payment_mc(const MechanismView& v, const CtrOracle& ctr,
                                 const std::function<double(int, double)>& phi_fn, int ad, int S,
                                 Rng& rng, long long* scored = nullptr,
                                 long long cap = kEnumerationCap) {
  if (S < 1) throw std::invalid_argument("myerson_payment_mc: S must be >= 1");
  if (ad < 0 || ad >= v.n) throw std::invalid_argument("myerson_payment_mc: ad out of range");

  std::vector<double> phi(std::size_t(v.n), 0.0);
  for (int j = 0; j < v.n; ++j) phi[std::size_t(j)] = phi_fn(j, v.bids[std::size_t(j)]);
  auto truthful = optimal_allocate(v, ctr, phi, cap);
  if (scored) *scored += truthful.scored;
  int slot = core::find_slot(truthful.outcome.allocation, ad);
  double theta_b = slot >= 0 ? truthful.outcome.ctrs[std::size_t(slot)] : 0.0;
  if (theta_b <= 0.0) return 0.0;

  const double b = v.bids[std::size_t(ad)];
  std::vector<double> bids(v.bids);
  MechanismView w(v, bids);
  double acc = 0.0;
  for (int s = 0; s < S; ++s) {
    double t = rng.uniform() * b;
    bids[std::size_t(ad)] = t;
    phi[std::size_t(ad)] = phi_fn(ad, t);
    auto r = optimal_allocate(w, ctr, phi, cap);
    if (scored) *scored += r.scored;
    int st = core::find_slot(r.outcome.allocation, ad);
    if (st >= 0) acc += r.outcome.ctrs[std::size_t(st)];
  }
  return b - b * (acc / S) / theta_b;
}

// The revenue-optimal DSIC mechanism: virtual-welfare argmax allocation with
// Monte Carlo Myerson payments for each winner. Payment randomness is keyed
// by (seed, auction id, ad), so repeated runs agree exactly.
inline MechanismResult optimal_mechanism(const MechanismView& v, const CtrOracle& ctr, int S,
                                         std::uint64_t seed, long long cap = kEnumerationCap) {
  auto phi_fn = [&v](int j, double b) {
    return valuation::virtual_value_ext(v.dists[std::size_t(j)], b);
  };
  MechanismResult res = optimal_allocate(v, ctr, virtual_bids(v), cap);
  res.outcome.payments.assign(std::size_t(v.k), 0.0);
  for (int t = 0; t < v.k; ++t) {
    int ad = res.outcome.allocation[t];
    Rng rng(seed, stream_id("myerson-mc", (std::uint64_t(std::uint32_t(v.id)) << 8) ^
                                              std::uint64_t(std::uint32_t(ad))));
    res.outcome.payments[std::size_t(t)] =
        myerson_payment_mc(v, ctr, phi_fn, ad, S, rng, &res.scored, cap);
  }
  return res;
}

// VCG with permutation-level externalities: welfare argmax allocation,
// per-click payment p_i = [W(b_-i) − (W(b) − b_i·θ_i)] / θ_i where W(b_-i)
// re-maximizes over the other n−1 ads.
inline MechanismResult vcg_mechanism(const MechanismView& v, const CtrOracle& ctr,
                                     long long cap = kEnumerationCap) {
  if (v.n - 1 < v.k)
    throw std::invalid_argument("vcg_mechanism: need n-1 >= k to price the counterfactual world");
  std::vector<double> weights(v.bids);
  MechanismResult res = extremal_allocate(v, ctr, weights, true, cap);
  const double welfare = res.score;
  res.outcome.payments.assign(std::size_t(v.k), 0.0);

  auto bound = ctr.bind(v);
  std::vector<int> others(std::size_t(v.n - 1), 0);
  Allocation real{std::vector<int>(std::size_t(v.k), -1)};
  for (int t = 0; t < v.k; ++t) {
    int ad = res.outcome.allocation[t];
    double theta_i = res.outcome.ctrs[std::size_t(t)];
    if (theta_i <= 0.0) continue;
    int m = 0;
    for (int j = 0; j < v.n; ++j)
      if (j != ad) others[std::size_t(m++)] = j;
    double best = -std::numeric_limits<double>::infinity();
    for_each_allocation(
        v.n - 1, v.k,
        [&](const Allocation& a) {
          for (int s = 0; s < v.k; ++s) real.slots[std::size_t(s)] = others[std::size_t(a[s])];
          const auto& theta = bound(real);
          double w = 0.0;
          for (int s = 0; s < v.k; ++s)
            w += v.bids[std::size_t(real[s])] * theta[std::size_t(s)];
          ++res.scored;
          if (w > best) best = w;
        },
        cap);
    res.outcome.payments[std::size_t(t)] =
        (best - (welfare - v.bids[std::size_t(ad)] * theta_i)) / theta_i;
  }
  return res;
}

// GSP: rank by bid·pctr descending (ties to the lower ad index), slot j pays
// the next rank's score normalized by its own pctr, capped at its own bid;
// CTRs are reported by the evaluation oracle on the chosen slate.
inline MechanismResult gsp_mechanism(const MechanismView& v, const std::vector<double>& pctr,
                                     const CtrOracle& ctr) {
  if (int(pctr.size()) != v.n)
    throw std::invalid_argument("gsp_mechanism: pctr must have length n");
  std::vector<int> order(std::size_t(v.n), 0);
  for (int i = 0; i < v.n; ++i) order[std::size_t(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return v.bids[std::size_t(a)] * pctr[std::size_t(a)] >
           v.bids[std::size_t(b)] * pctr[std::size_t(b)];
  });

  MechanismResult res;
  res.outcome.allocation = Allocation{{order.begin(), order.begin() + v.k}};
  res.outcome.payments.assign(std::size_t(v.k), 0.0);
  for (int j = 0; j < v.k; ++j) {
    if (j + 1 >= v.n) break;  // no next bid, reserve price 0
    int self = order[std::size_t(j)], next = order[std::size_t(j + 1)];
    if (pctr[std::size_t(self)] <= 0.0) continue;
    double p = v.bids[std::size_t(next)] * pctr[std::size_t(next)] / pctr[std::size_t(self)];
    res.outcome.payments[std::size_t(j)] = std::min(p, v.bids[std::size_t(self)]);
  }
  res.outcome.ctrs = ctr(v, res.outcome.allocation);
  for (int j = 0; j < v.k; ++j)
    res.score += v.bids[std::size_t(res.outcome.allocation[j])] * res.outcome.ctrs[std::size_t(j)];
  return res;
}

struct MonotonicityReport {
  bool ok = true;
  std::vector<double> thetas;                  // Θ_ad at each grid bid
  std::vector<std::pair<int, int>> violations;  // adjacent grid indices where Θ dropped
};

// Recomputes the allocation rule along an ascending bid grid with everyone
// else's bid fixed and reports whether the ad's CTR is nondecreasing within
// 1e-9. maximize=false checks the argmin allocator instead (negative control).
inline MonotonicityReport monotonicity_check(const MechanismView& v, const CtrOracle& ctr, int ad,
                                             const std::vector<double>& grid, bool maximize = true,
                                             long long cap = kEnumerationCap) {
  if (ad < 0 || ad >= v.n) throw std::invalid_argument("monotonicity_check: ad out of range");
  if (grid.empty() || !std::is_sorted(grid.begin(), grid.end()))
    throw std::invalid_argument("monotonicity_check: grid must be ascending and non-empty");

  std::vector<double> bids(v.bids);
  MechanismView w(v, bids);
  std::vector<double> phi = virtual_bids(v);

  MonotonicityReport rep;
  rep.thetas.reserve(grid.size());
  for (double b : grid) {
    bids[std::size_t(ad)] = b;
    phi[std::size_t(ad)] = valuation::virtual_value_ext(v.dists[std::size_t(ad)], b);
    auto r = extremal_allocate(w, ctr, phi, maximize, cap);
    int slot = core::find_slot(r.outcome.allocation, ad);
    rep.thetas.push_back(slot >= 0 ? r.outcome.ctrs[std::size_t(slot)] : 0.0);
  }
  for (std::size_t m = 1; m < rep.thetas.size(); ++m) {
    if (rep.thetas[m] < rep.thetas[m - 1] - 1e-9) {
      rep.ok = false;
      rep.violations.emplace_back(int(m - 1), int(m));
    }
  }
  return rep;
}

// Outcome of a single ad under a (possibly counterfactual) view; the cheap
// path when only one bidder's utility is needed.
struct AdOutcome {
  Allocation allocation;
  int slot = -1;  // -1 when the ad loses
  double ctr = 0.0;
  double payment = 0.0;
};

// A named mechanism the harness can run on any view. truthful_prices marks
// mechanisms whose per-click payment is unchanged by a misreport that leaves
// the allocation unchanged (exact for Myerson and VCG pricing); the regret
// evaluator relies on it to reuse truthful payments instead of re-sampling.
// allocate, when present, is the payment-free probe that makes that reuse
// cheap: allocation and CTRs only.
struct Mechanism {
  std::string name;
  bool truthful_prices = false;
  std::function<MechanismResult(const MechanismView&)> run;
  std::function<AdOutcome(const MechanismView&, int)> run_one;
  std::function<MechanismResult(const MechanismView&)> allocate;
};

inline AdOutcome ad_outcome_from(const MechanismResult& r, int ad) {
  AdOutcome out;
  out.allocation = r.outcome.allocation;
  out.slot = core::find_slot(r.outcome.allocation, ad);
  if (out.slot >= 0) {
    out.ctr = r.outcome.ctrs[std::size_t(out.slot)];
    out.payment = r.outcome.payments[std::size_t(out.slot)];
  }
  return out;
}

inline Mechanism make_optimal_mechanism(CtrOracle ctr, int S, std::uint64_t seed,
                                        long long cap = kEnumerationCap) {
  Mechanism m;
  m.name = "optimal";
  m.truthful_prices = true;
  m.run = [ctr, S, seed, cap](const MechanismView& v) {
    return optimal_mechanism(v, ctr, S, seed, cap);
  };
  m.run_one = [ctr, S, seed, cap](const MechanismView& v, int ad) {
    auto r = optimal_allocate(v, ctr, virtual_bids(v), cap);
    AdOutcome out;
    out.allocation = r.outcome.allocation;
    out.slot = core::find_slot(r.outcome.allocation, ad);
    if (out.slot < 0) return out;
    out.ctr = r.outcome.ctrs[std::size_t(out.slot)];
    auto phi_fn = [&v](int j, double b) {
      return valuation::virtual_value_ext(v.dists[std::size_t(j)], b);
    };
    Rng rng(seed, stream_id("myerson-mc", (std::uint64_t(std::uint32_t(v.id)) << 8) ^
                                              std::uint64_t(std::uint32_t(ad))));
    out.payment = myerson_payment_mc(v, ctr, phi_fn, ad, S, rng, nullptr, cap);
    return out;
  };
  m.allocate = [ctr, cap](const MechanismView& v) {
    return optimal_allocate(v, ctr, virtual_bids(v), cap);
  };
  return m;
}

inline Mechanism make_vcg_mechanism(CtrOracle ctr, long long cap = kEnumerationCap) {
  Mechanism m;
  m.name = "vcg";
  m.truthful_prices = true;
  m.run = [ctr, cap](const MechanismView& v) { return vcg_mechanism(v, ctr, cap); };
  m.run_one = [ctr, cap](const MechanismView& v, int ad) {
    if (v.n - 1 < v.k)
      throw std::invalid_argument("vcg_mechanism: need n-1 >= k to price the counterfactual world");
    std::vector<double> weights(v.bids);
    auto r = extremal_allocate(v, ctr, weights, true, cap);
    AdOutcome out;
    out.allocation = r.outcome.allocation;
    out.slot = core::find_slot(r.outcome.allocation, ad);
    if (out.slot < 0) return out;
    out.ctr = r.outcome.ctrs[std::size_t(out.slot)];
    if (out.ctr <= 0.0) return out;

    auto bound = ctr.bind(v);
    std::vector<int> others;
    others.reserve(std::size_t(v.n - 1));
    for (int j = 0; j < v.n; ++j)
      if (j != ad) others.push_back(j);
    Allocation real{std::vector<int>(std::size_t(v.k), -1)};
    double best = -std::numeric_limits<double>::infinity();
    for_each_allocation(
        v.n - 1, v.k,
        [&](const Allocation& a) {
          for (int s = 0; s < v.k; ++s) real.slots[std::size_t(s)] = others[std::size_t(a[s])];
          const auto& theta = bound(real);
          double w = 0.0;
          for (int s = 0; s < v.k; ++s)
            w += v.bids[std::size_t(real[s])] * theta[std::size_t(s)];
          if (w > best) best = w;
        },
        cap);
    out.payment = (best - (r.score - v.bids[std::size_t(ad)] * out.ctr)) / out.ctr;
    return out;
  };
  m.allocate = [ctr, cap](const MechanismView& v) {
    return extremal_allocate(v, ctr, v.bids, true, cap);
  };
  return m;
}

inline Mechanism make_gsp_mechanism(
    std::function<std::vector<double>(const MechanismView&)> pctr_fn, CtrOracle ctr) {
  Mechanism m;
  m.name = "gsp";
  m.truthful_prices = false;
  m.run = [pctr_fn, ctr](const MechanismView& v) { return gsp_mechanism(v, pctr_fn(v), ctr); };
  m.run_one = [pctr_fn, ctr](const MechanismView& v, int ad) {
    return ad_outcome_from(gsp_mechanism(v, pctr_fn(v), ctr), ad);
  };
  return m;
}

}  // namespace aforge::oracle
