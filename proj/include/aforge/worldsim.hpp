#pragma once
// Synthetic ground-truth world: auction instances, permutation-aware click
// behavior (position decay x pairwise similarity interaction), a noisy
// point-wise CTR predictor, and list-wise click logs with JSONL round-trip.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aforge/core.hpp"
#include "aforge/rng.hpp"

namespace aforge::worldsim {

using core::Allocation;
using core::AuctionInstance;
using valuation::ValueDistribution;

struct WorldConfig {
  int n = 8, k = 3;
  int d_a = 8, d_u = 8;
  double pos_decay = 0.8;     // rho_pos in (0, 1]
  double competition = -0.3;  // kappa; negative = substitution, positive = complementarity
  double pred_noise = 0.1;    // sigma_pred >= 0
  double ctr_floor = 1e-4;    // epsilon
  std::uint64_t seed = 1;
  ValueDistribution dist = ValueDistribution::uniform(0.0, 1.0);  // applied to every ad

  void validate() const {
    if (n < 1 || k < 1 || k > n) throw std::invalid_argument("WorldConfig: need 1 <= k <= n");
    if (d_a < 1 || d_u < 1) throw std::invalid_argument("WorldConfig: feature dims must be >= 1");
    if (!(pos_decay > 0.0 && pos_decay <= 1.0))
      throw std::invalid_argument("WorldConfig: pos_decay must be in (0, 1]");
    if (pred_noise < 0.0) throw std::invalid_argument("WorldConfig: pred_noise must be >= 0");
    if (!(ctr_floor > 0.0 && ctr_floor <= 0.01))
      throw std::invalid_argument("WorldConfig: ctr_floor must be in (0, 0.01]");
  }
};

struct ClickRecord {
  int auction_id = 0;
  Allocation alloc;
  std::vector<double> pctr;  // point-wise alpha at the logged slots
  std::vector<int> clicks;
};
using ClickLog = std::vector<ClickRecord>;

struct Dataset {
  std::vector<AuctionInstance> instances;
  ClickLog log;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double cosine_sim(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  double denom = std::sqrt(na * nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

inline std::vector<int> sample_clicks(const std::vector<double>& theta, Rng& rng) {
  std::vector<int> y(theta.size(), 0);
  for (std::size_t t = 0; t < theta.size(); ++t) {
    if (!(theta[t] >= 0.0 && theta[t] <= 1.0))
      throw std::invalid_argument("sample_clicks: theta must lie in [0, 1]");
    y[t] = rng.uniform() < theta[t] ? 1 : 0;
  }
  return y;
}

// Point-wise pCTR of each logged slot: alpha_t = clamp(q_hat * rho^t, 0, 1).
inline std::vector<double> alpha_at(const std::vector<double>& qhat, const Allocation& alloc,
                                    double pos_decay) {
  std::vector<double> alpha(std::size_t(alloc.size()), 0.0);
  double decay = 1.0;
  for (int t = 0; t < alloc.size(); ++t) {
    alpha[std::size_t(t)] = std::clamp(qhat[std::size_t(alloc[t])] * decay, 0.0, 1.0);
    decay *= pos_decay;
  }
  return alpha;
}

// Per-instance lookup tables for repeated CTR queries: quality scores,
// pairwise similarities, and position decays, precomputed once so that
// enumeration loops pay only O(k^2) per allocation. theta() matches
// WorldModel::true_ctr bit for bit on every feasible allocation.
struct CtrTable {
  int n = 0;
  double competition = 0.0, ctr_floor = 1e-4;
  std::vector<double> q;       // n
  std::vector<double> cos;     // n*n, row-major
  std::vector<double> decays;  // pos_decay^t for t in [0, n)

  void theta_into(const Allocation& alloc, std::vector<double>& out) const {
    int k = alloc.size();
    out.assign(std::size_t(k), 0.0);
    for (int t = 0; t < k; ++t) {
      int i = alloc[t];
      double inter = 1.0;
      for (int r = 0; r < k; ++r) {
        if (r == t) continue;
        inter += competition * cos[std::size_t(i) * std::size_t(n) + std::size_t(alloc[r])] /
                 (1.0 + std::abs(t - r));
      }
      out[std::size_t(t)] =
          std::clamp(q[std::size_t(i)] * decays[std::size_t(t)] * inter, ctr_floor, 1.0);
    }
  }

  std::vector<double> theta(const Allocation& alloc) const {
    std::vector<double> out;
    theta_into(alloc, out);
    return out;
  }
};

struct WorldModel {
  WorldConfig cfg;
  std::vector<std::vector<double>> proj;  // d_a x d_u, fixed per world
  static constexpr double kQualityScale = 3.0;

  explicit WorldModel(const WorldConfig& c) : cfg(c) {
    cfg.validate();
    Rng rng(cfg.seed, stream_id("world-proj"));
    proj.assign(std::size_t(cfg.d_a), std::vector<double>(std::size_t(cfg.d_u)));
    for (auto& row : proj)
      for (auto& p : row) p = rng.normal();
  }

  AuctionInstance gen_instance(int id) const {
    Rng feat(cfg.seed, stream_id("feat", std::uint64_t(id)));
    Rng vals(cfg.seed, stream_id("values", std::uint64_t(id)));
    AuctionInstance inst;
    inst.id = id;
    inst.n = cfg.n;
    inst.k = cfg.k;
    inst.user_features = unit_normal(cfg.d_u, feat);
    for (int i = 0; i < cfg.n; ++i) {
      inst.ad_features.push_back(unit_normal(cfg.d_a, feat));
      inst.dists.push_back(cfg.dist);
      double v = valuation::sample(cfg.dist, vals);
      inst.values.push_back(v);
      inst.bids.push_back(v);  // truthful logging
    }
    return inst;
  }

  // q_i = sigmoid(<x_i, P u> * c_scale). Templated so both AuctionInstance
  // and core::MechanismView work; the CTR model reads features only.
  template <class Inst>
  std::vector<double> base_quality(const Inst& inst) const {
    std::vector<double> uproj(std::size_t(cfg.d_a), 0.0);
    for (int r = 0; r < cfg.d_a; ++r)
      for (int c = 0; c < cfg.d_u; ++c)
        uproj[std::size_t(r)] += proj[std::size_t(r)][std::size_t(c)] *
                                 inst.user_features[std::size_t(c)];
    std::vector<double> q(std::size_t(inst.n), 0.0);
    for (int i = 0; i < inst.n; ++i) {
      double dot = std::inner_product(inst.ad_features[std::size_t(i)].begin(),
                                      inst.ad_features[std::size_t(i)].end(), uproj.begin(), 0.0);
      q[std::size_t(i)] = sigmoid(dot * kQualityScale);
    }
    return q;
  }

  // Noisy point-wise predictor q_hat = clamp(q * exp(eta), 0, 1); the noise is
  // keyed by auction id so evaluation can recompute exactly what was logged.
  template <class Inst>
  std::vector<double> pctr(const Inst& inst) const {
    auto q = base_quality(inst);
    Rng noise(cfg.seed, stream_id("qhat", std::uint64_t(inst.id)));
    for (auto& qi : q) qi = std::clamp(qi * std::exp(noise.normal(0.0, cfg.pred_noise)), 0.0, 1.0);
    return q;
  }

  template <class Inst>
  std::vector<double> true_ctr(const Inst& inst, const Allocation& alloc) const {
    if (!core::check_feasible(alloc, inst.n, inst.k))
      throw std::invalid_argument("true_ctr: infeasible allocation");
    return true_ctr_given(inst, alloc, base_quality(inst));
  }

  // Hot-path variant for callers that precompute q (and validate feasibility).
  template <class Inst>
  std::vector<double> true_ctr_given(const Inst& inst, const Allocation& alloc,
                                     const std::vector<double>& q) const {
    int k = alloc.size();
    std::vector<double> theta(std::size_t(k), 0.0);
    for (int t = 0; t < k; ++t) {
      int i = alloc[t];
      double inter = 1.0;
      for (int r = 0; r < k; ++r) {
        if (r == t) continue;
        inter += cfg.competition *
                 cosine_sim(inst.ad_features[std::size_t(i)],
                            inst.ad_features[std::size_t(alloc[r])]) /
                 (1.0 + std::abs(t - r));
      }
      theta[std::size_t(t)] = std::clamp(q[std::size_t(i)] * std::pow(cfg.pos_decay, t) * inter,
                                         cfg.ctr_floor, 1.0);
    }
    return theta;
  }

  template <class Inst>
  CtrTable ctr_table(const Inst& inst) const {
    CtrTable tb;
    tb.n = inst.n;
    tb.competition = cfg.competition;
    tb.ctr_floor = cfg.ctr_floor;
    tb.q = base_quality(inst);
    tb.cos.assign(std::size_t(inst.n) * std::size_t(inst.n), 1.0);
    for (int i = 0; i < inst.n; ++i)
      for (int j = i + 1; j < inst.n; ++j) {
        double c = cosine_sim(inst.ad_features[std::size_t(i)], inst.ad_features[std::size_t(j)]);
        tb.cos[std::size_t(i) * std::size_t(inst.n) + std::size_t(j)] = c;
        tb.cos[std::size_t(j) * std::size_t(inst.n) + std::size_t(i)] = c;
      }
    tb.decays.resize(std::size_t(inst.n));
    for (int t = 0; t < inst.n; ++t) tb.decays[std::size_t(t)] = std::pow(cfg.pos_decay, t);
    return tb;
  }

  // Logging policy: 50% uniform-random permutation, 50% rank by bid * q_hat.
  Allocation logging_policy(const AuctionInstance& inst, const std::vector<double>& qhat,
                            Rng& rng) const {
    if (rng.uniform() < 0.5) {
      std::vector<int> idx(std::size_t(inst.n));
      std::iota(idx.begin(), idx.end(), 0);
      for (int t = 0; t < inst.k; ++t) {
        int j = t + rng.uniform_int(inst.n - t);
        std::swap(idx[std::size_t(t)], idx[std::size_t(j)]);
      }
      return Allocation{{idx.begin(), idx.begin() + inst.k}};
    }
    std::vector<int> order(std::size_t(inst.n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return inst.bids[std::size_t(a)] * qhat[std::size_t(a)] >
             inst.bids[std::size_t(b)] * qhat[std::size_t(b)];
    });
    return Allocation{{order.begin(), order.begin() + inst.k}};
  }

  Dataset gen_dataset(int num_auctions, int id_offset = 0) const {
    if (num_auctions < 1) throw std::invalid_argument("gen_dataset: num_auctions must be >= 1");
    Dataset ds;
    ds.instances.reserve(std::size_t(num_auctions));
    ds.log.reserve(std::size_t(num_auctions));
    for (int j = 0; j < num_auctions; ++j) {
      int id = id_offset + j;
      auto inst = gen_instance(id);
      auto qhat = pctr(inst);
      Rng policy(cfg.seed, stream_id("log-policy", std::uint64_t(id)));
      Rng clicks(cfg.seed, stream_id("clicks", std::uint64_t(id)));
      ClickRecord rec;
      rec.auction_id = id;
      rec.alloc = logging_policy(inst, qhat, policy);
      rec.pctr = alpha_at(qhat, rec.alloc, cfg.pos_decay);
      rec.clicks = sample_clicks(true_ctr(inst, rec.alloc), clicks);
      ds.instances.push_back(std::move(inst));
      ds.log.push_back(std::move(rec));
    }
    return ds;
  }

 private:
  static std::vector<double> unit_normal(int dim, Rng& rng) {
    std::vector<double> x(std::size_t(dim), 0.0);
    for (auto& v : x) v = rng.normal();
    double norm = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
    for (auto& v : x) v /= norm;
    return x;
  }
};

// Spec-shaped conveniences over a throwaway world.
inline AuctionInstance gen_instance(const WorldConfig& cfg, int id = 0) {
  return WorldModel(cfg).gen_instance(id);
}
inline std::vector<double> true_ctr(const AuctionInstance& inst, const Allocation& alloc,
                                    const WorldConfig& cfg) {
  return WorldModel(cfg).true_ctr(inst, alloc);
}

inline nlohmann::json dist_to_json(const ValueDistribution& d) {
  if (d.kind == valuation::DistKind::Uniform)
    return {{"kind", "uniform"}, {"params", {d.lo, d.hi}}};
  return {{"kind", "exponential"}, {"params", {d.rate}}};
}

inline ValueDistribution dist_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const auto& p = j.at("params");
  if (kind == "uniform") return ValueDistribution::uniform(p.at(0), p.at(1));
  if (kind == "exponential") return ValueDistribution::exponential(p.at(0));
  throw std::invalid_argument("dist_from_json: unknown kind '" + kind + "'");
}

// One auction per line; see the dataset schema in the README.
inline void write_jsonl(const Dataset& ds, std::ostream& out) {
  for (std::size_t r = 0; r < ds.instances.size(); ++r) {
    const auto& inst = ds.instances[r];
    const auto& rec = ds.log[r];
    nlohmann::json ads = nlohmann::json::array();
    for (int i = 0; i < inst.n; ++i) {
      ads.push_back({{"features", inst.ad_features[std::size_t(i)]},
                     {"bid", inst.bids[std::size_t(i)]},
                     {"value", inst.values[std::size_t(i)]},
                     {"dist", dist_to_json(inst.dists[std::size_t(i)])}});
    }
    nlohmann::json line = {{"id", inst.id},
                           {"user", inst.user_features},
                           {"ads", ads},
                           {"k", inst.k},
                           {"log",
                            {{"alloc", rec.alloc.slots},
                             {"pctr", rec.pctr},
                             {"clicks", rec.clicks}}}};
    out << line.dump() << "\n";
  }
}

inline void write_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_jsonl: cannot open " + path);
  write_jsonl(ds, out);
}

inline Dataset read_jsonl(std::istream& in) {
  Dataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    AuctionInstance inst;
    inst.id = j.at("id").get<int>();
    inst.user_features = j.at("user").get<std::vector<double>>();
    inst.k = j.at("k").get<int>();
    for (const auto& ad : j.at("ads")) {
      inst.ad_features.push_back(ad.at("features").get<std::vector<double>>());
      inst.bids.push_back(ad.at("bid").get<double>());
      inst.values.push_back(ad.at("value").get<double>());
      inst.dists.push_back(dist_from_json(ad.at("dist")));
    }
    inst.n = int(inst.ad_features.size());
    inst.validate();
    ClickRecord rec;
    rec.auction_id = inst.id;
    rec.alloc = Allocation{j.at("log").at("alloc").get<std::vector<int>>()};
    rec.pctr = j.at("log").at("pctr").get<std::vector<double>>();
    rec.clicks = j.at("log").at("clicks").get<std::vector<int>>();
    ds.instances.push_back(std::move(inst));
    ds.log.push_back(std::move(rec));
  }
  return ds;
}

inline Dataset read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_jsonl: cannot open " + path);
  return read_jsonl(in);
}

}  // namespace aforge::worldsim
