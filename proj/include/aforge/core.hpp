#pragma once
// Domain types for auctions, allocations, and outcomes, plus the
// utility/revenue/feasibility primitives everything else consumes.

#include <cassert>
#include <stdexcept>
#include <vector>

#include "aforge/valuation.hpp"

namespace aforge::core {

using valuation::ValueDistribution;

// Ordered assignment of k distinct ad indices to slots 1..k.
struct Allocation {
  std::vector<int> slots;

  Allocation() = default;
  explicit Allocation(std::vector<int> s) : slots(std::move(s)) {}

  int size() const { return int(slots.size()); }
  int operator[](int t) const { return slots[std::size_t(t)]; }
  bool operator==(const Allocation& o) const { return slots == o.slots; }
};

struct AuctionInstance {
  int id = 0;
  int n = 0;  // candidate ads
  int k = 0;  // slots
  std::vector<double> user_features;              // d_u
  std::vector<std::vector<double>> ad_features;   // n rows of d_a
  std::vector<double> bids;                       // n, nonnegative
  std::vector<double> values;                     // n, synthetic data only
  std::vector<ValueDistribution> dists;           // n

  void validate() const {
    if (n < 1 || k < 1 || k > n)
      throw std::invalid_argument("AuctionInstance: need 1 <= k <= n");
    if (int(ad_features.size()) != n || int(bids.size()) != n || int(dists.size()) != n)
      throw std::invalid_argument("AuctionInstance: per-ad arrays must have length n");
    if (!values.empty() && int(values.size()) != n)
      throw std::invalid_argument("AuctionInstance: values must be empty or length n");
    std::size_t d_a = ad_features.front().size();
    for (const auto& row : ad_features)
      if (row.size() != d_a)
        throw std::invalid_argument("AuctionInstance: ad feature dims must be uniform");
    for (double b : bids)
      if (b < 0.0) throw std::invalid_argument("AuctionInstance: bids must be nonnegative");
    for (double v : values)
      if (v < 0.0) throw std::invalid_argument("AuctionInstance: values must be nonnegative");
  }
};

// What a mechanism is allowed to see: bids and distributions, never values.
struct MechanismView {
  int id;
  int n, k;
  const std::vector<double>& user_features;
  const std::vector<std::vector<double>>& ad_features;
  const std::vector<double>& bids;
  const std::vector<ValueDistribution>& dists;

  MechanismView(const AuctionInstance& inst)
      : id(inst.id),
        n(inst.n),
        k(inst.k),
        user_features(inst.user_features),
        ad_features(inst.ad_features),
        bids(inst.bids),
        dists(inst.dists) {}

  // Counterfactual view: same auction, different bid vector. The caller owns
  // the storage behind every reference for the lifetime of the view.
  MechanismView(const MechanismView& base, const std::vector<double>& new_bids)
      : id(base.id),
        n(base.n),
        k(base.k),
        user_features(base.user_features),
        ad_features(base.ad_features),
        bids(new_bids),
        dists(base.dists) {}
};

struct Outcome {
  Allocation allocation;
  std::vector<double> payments;  // per winning slot, currency per click
  std::vector<double> ctrs;      // per winning slot, in [0, 1]
};

// Slot index of `ad` inside the allocation, or -1 if it lost.
inline int find_slot(const Allocation& alloc, int ad) {
  for (int t = 0; t < alloc.size(); ++t)
    if (alloc[t] == ad) return t;
  return -1;
}

inline bool check_feasible(const Allocation& alloc, int n, int k) {
  if (alloc.size() != k) return false;
  for (int t = 0; t < k; ++t) {
    if (alloc[t] < 0 || alloc[t] >= n) return false;
    for (int s = 0; s < t; ++s)
      if (alloc[s] == alloc[t]) return false;
  }
  return true;
}

inline bool check_feasible(const Allocation& alloc, const AuctionInstance& inst) {
  return check_feasible(alloc, inst.n, inst.k);
}

inline double utility(double value, double payment, double ctr) {
  assert(ctr >= 0.0 && ctr <= 1.0);
  return (value - payment) * ctr;
}

inline double revenue(const Outcome& o) {
  double r = 0.0;
  for (std::size_t t = 0; t < o.payments.size(); ++t) r += o.payments[t] * o.ctrs[t];
  return r;
}

}  // namespace aforge::core
