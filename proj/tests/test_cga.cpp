#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "aforge/cga/train.hpp"

using namespace aforge;
using core::Allocation;
using core::MechanismView;
using cga::Binding;
using cga::CgaConfig;
using cga::CgaModel;
using cga::DecodeMode;

namespace {

worldsim::WorldModel make_world(int n, int k, std::uint64_t seed, double kappa = -0.3,
                                double noise = 0.1) {
  worldsim::WorldConfig cfg;
  cfg.n = n;
  cfg.k = k;
  cfg.competition = kappa;
  cfg.pred_noise = noise;
  cfg.seed = seed;
  return worldsim::WorldModel(cfg);
}

core::AuctionInstance flat_instance(std::vector<double> bids, int k) {
  core::AuctionInstance inst;
  inst.n = int(bids.size());
  inst.k = k;
  inst.user_features = {1.0};
  inst.ad_features.assign(std::size_t(inst.n), {1.0});
  inst.values = bids;
  inst.bids = std::move(bids);
  inst.dists.assign(std::size_t(inst.n), valuation::ValueDistribution::uniform(0.0, 1.0));
  inst.validate();
  return inst;
}

CgaConfig flat_config() {
  CgaConfig cfg;
  cfg.d_a = 1;
  cfg.d_u = 1;
  cfg.use_evaluator = false;
  return cfg;
}

void zero_store(neural::ParamStore& ps) {
  for (auto& [name, e] : ps.entries) std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
}

cga::PctrFn world_pctr(const worldsim::WorldModel& world) {
  return [world](const MechanismView& v) { return world.pctr(v); };
}

cga::PctrFn unit_pctr() {
  return [](const MechanismView& v) { return std::vector<double>(std::size_t(v.n), 1.0); };
}

std::vector<double> greedy_payments(const CgaModel& m, const MechanismView& v,
                                    const cga::PctrFn& pctr, double pos_decay) {
  Binding b(std::as_const(m));
  return cga_forward(m, b, v, pctr(v), pos_decay, DecodeMode::greedy).payments;
}

// Independent slate scoring under the point-wise CTR model.
double pointwise_vw(const MechanismView& v, const Allocation& A, const std::vector<double>& qhat,
                    double pos_decay) {
  auto phi = cga::phi_for(v, true);
  auto alpha = worldsim::alpha_at(qhat, A, pos_decay);
  double s = 0.0;
  for (int t = 0; t < A.size(); ++t) s += phi[std::size_t(A[t])] * alpha[std::size_t(t)];
  return s;
}

}  // namespace

TEST_CASE("variant names track the ablation switches", "[cga]") {
  CgaConfig cfg;
  CHECK(cfg.variant_name() == "cga");
  cfg.use_evaluator = false;
  CHECK(cfg.variant_name() == "cga-theta");
  cfg = CgaConfig{};
  cfg.end2end = true;
  CHECK(cfg.variant_name() == "cga-end2end");
  cfg = CgaConfig{};
  cfg.use_self_reward = false;
  CHECK(cfg.variant_name() == "cga-noself");
  cfg.use_self_reward = true;
  cfg.use_external_reward = false;
  CHECK(cfg.variant_name() == "cga-noext");
  cfg = CgaConfig{};
  cfg.use_virtual_value = false;
  CHECK(cfg.variant_name() == "cga-nophi");
}

TEST_CASE("make_model validates the config and sizes the payment head by k", "[cga]") {
  CgaConfig cfg;
  CHECK_THROWS_AS(cga::make_model(cfg, 0, 1), std::invalid_argument);
  cfg.heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(cga::make_model(cfg, 3, 1), std::invalid_argument);

  auto m = cga::make_model(CgaConfig{}, 3, 1);
  CHECK(m.k == 3);
  CHECK(m.trunk.total_params() > 0);
  CHECK(m.gen.total_params() > 0);
  CHECK(m.eval.total_params() > 0);
  CHECK(m.pay.entry("pn.0.w").value.rows == 8 + 2 + 1);

  auto m1 = cga::make_model(CgaConfig{}, 1, 1);
  CHECK(m1.pay.entry("pn.0.w").value.rows == 8 + 0 + 1);
  CHECK(m.gen.get("dec.w").data[0] == 0.0);  // prior weight starts at e^0 = 1
}

TEST_CASE("encoder context is permutation-invariant, rows equivariant", "[cga]") {
  auto world = make_world(6, 3, 41);
  auto inst = world.gen_instance(0);
  auto m = cga::make_model(CgaConfig{}, 3, 5);

  core::AuctionInstance rev = inst;
  std::reverse(rev.ad_features.begin(), rev.ad_features.end());
  std::reverse(rev.bids.begin(), rev.bids.end());
  std::reverse(rev.values.begin(), rev.values.end());
  std::reverse(rev.dists.begin(), rev.dists.end());

  Binding ba(std::as_const(m)), bb(std::as_const(m));
  auto ea = cga::encode(m.cfg, ba.T, ba.G, ba.tape, MechanismView(inst));
  auto eb = cga::encode(m.cfg, bb.T, bb.G, bb.tape, MechanismView(rev));

  REQUIRE(ea.H.val().rows == 6);
  REQUIRE(ea.c.val().cols == 32);
  for (int j = 0; j < 32; ++j)
    CHECK(ea.c.val().at(0, j) == Catch::Approx(eb.c.val().at(0, j)).margin(1e-9));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(ea.H.val().at(i, j) == Catch::Approx(eb.H.val().at(5 - i, j)).margin(1e-9));

  // bids are encoder inputs: perturbing one must move the context
  core::AuctionInstance bumped = inst;
  bumped.bids[2] += 0.25;
  Binding bc(std::as_const(m));
  auto ec = cga::encode(m.cfg, bc.T, bc.G, bc.tape, MechanismView(bumped));
  double diff = 0.0;
  for (int j = 0; j < 32; ++j) diff += std::abs(ec.c.val().at(0, j) - ea.c.val().at(0, j));
  CHECK(diff > 1e-8);
}

TEST_CASE("zeroed decoder reduces to a softmax over the virtual-value prior", "[cga]") {
  auto inst = flat_instance({0.9, 0.3, 0.6, 0.45}, 3);
  MechanismView v(inst);
  auto m = cga::make_model(flat_config(), 3, 2);
  zero_store(m.gen);

  Binding b(std::as_const(m));
  auto enc = cga::encode(m.cfg, b.T, b.G, b.tape, v);
  auto phi = cga::phi_for(v, true);
  auto trace = cga::generate(m.cfg, b.G, b.tape, enc, phi, 3, DecodeMode::greedy);

  // greedy chain = descending virtual value: 0.9, 0.6, 0.45
  CHECK(trace.A.slots == std::vector<int>{0, 2, 3});

  // slot 1 distribution is exactly softmax(phi)
  double z0 = 0.0;
  for (double p : phi) z0 += std::exp(p - 0.8);
  for (int i = 0; i < 4; ++i)
    CHECK(trace.z[0].val().data[std::size_t(i)] ==
          Catch::Approx(std::exp(phi[std::size_t(i)] - 0.8) / z0).margin(1e-12));

  // chosen ads are masked to exactly zero afterward, rows renormalize to 1
  CHECK(trace.z[1].val().data[0] == 0.0);
  CHECK(trace.z[2].val().data[0] == 0.0);
  CHECK(trace.z[2].val().data[2] == 0.0);
  for (int t = 0; t < 3; ++t) {
    double sum = 0.0;
    for (double p : trace.z[std::size_t(t)].val().data) sum += p;
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    CHECK(trace.chosen[std::size_t(t)].val().data[0] ==
          trace.z[std::size_t(t)].val().data[std::size_t(trace.A[t])]);
  }
}

TEST_CASE("generate is deterministic in greedy mode and seed-reproducible in sample mode",
          "[cga]") {
  auto world = make_world(5, 5, 17);
  auto m = cga::make_model(CgaConfig{}, 5, 3);

  bool seeds_differ = false;
  for (int id = 0; id < 20; ++id) {
    auto inst = world.gen_instance(id);
    MechanismView v(inst);
    auto phi = cga::phi_for(v, true);

    Binding b1(std::as_const(m)), b2(std::as_const(m));
    auto g1 = cga::generate(m.cfg, b1.G, b1.tape, cga::encode(m.cfg, b1.T, b1.G, b1.tape, v),
                            phi, 5, DecodeMode::greedy);
    auto g2 = cga::generate(m.cfg, b2.G, b2.tape, cga::encode(m.cfg, b2.T, b2.G, b2.tape, v),
                            phi, 5, DecodeMode::greedy);
    CHECK(g1.A == g2.A);
    CHECK(core::check_feasible(g1.A, 5, 5));  // k = n: a full permutation

    Rng ra1(9, stream_id("smp", std::uint64_t(id)));
    Rng ra2(9, stream_id("smp", std::uint64_t(id)));
    Rng rb(10, stream_id("smp", std::uint64_t(id)));
    Binding b3(std::as_const(m)), b4(std::as_const(m)), b5(std::as_const(m));
    auto s1 = cga::generate(m.cfg, b3.G, b3.tape, cga::encode(m.cfg, b3.T, b3.G, b3.tape, v),
                            phi, 5, DecodeMode::sample, &ra1);
    auto s2 = cga::generate(m.cfg, b4.G, b4.tape, cga::encode(m.cfg, b4.T, b4.G, b4.tape, v),
                            phi, 5, DecodeMode::sample, &ra2);
    auto s3 = cga::generate(m.cfg, b5.G, b5.tape, cga::encode(m.cfg, b5.T, b5.G, b5.tape, v),
                            phi, 5, DecodeMode::sample, &rb);
    CHECK(s1.A == s2.A);
    CHECK(core::check_feasible(s1.A, 5, 5));
    seeds_differ = seeds_differ || !(s1.A == s3.A);
  }
  CHECK(seeds_differ);

  Binding b(std::as_const(m));
  auto inst = world.gen_instance(0);
  MechanismView v(inst);
  auto enc = cga::encode(m.cfg, b.T, b.G, b.tape, v);
  CHECK_THROWS_AS(cga::generate(m.cfg, b.G, b.tape, enc, cga::phi_for(v, true), 6,
                                DecodeMode::greedy),
                  std::invalid_argument);
  CHECK_THROWS_AS(cga::generate(m.cfg, b.G, b.tape, enc, cga::phi_for(v, true), 3,
                                DecodeMode::sample),
                  std::invalid_argument);
}

TEST_CASE("evaluator ranges, the zeroed-head identity, and dead impressions", "[cga]") {
  auto world = make_world(6, 3, 29);
  auto m = cga::make_model(CgaConfig{}, 3, 11);

  Rng rng(4, stream_id("eval-fuzz"));
  for (int id = 0; id < 25; ++id) {
    auto inst = world.gen_instance(id);
    MechanismView v(inst);
    Binding b(std::as_const(m));
    auto se = cga::encode_set(m.cfg, b.T, b.tape, v);
    Allocation A{{0, 3, 5}};
    std::vector<double> alpha = {rng.uniform(), rng.uniform(), rng.uniform()};
    auto H_A = neural::gather_rows(se.H, A.slots);
    auto ev = cga::evaluator_forward(m.cfg, b.E, H_A, se.h_u, alpha);
    for (int t = 0; t < 3; ++t) {
      double g = ev.gamma.val().data[std::size_t(t)];
      double th = ev.theta.val().data[std::size_t(t)];
      CHECK((g > 0.0 && g < 2.0));
      CHECK(th == std::min(alpha[std::size_t(t)] * g, 1.0));
    }
  }

  // zeroed head MLP: gamma is exactly 1, so theta collapses to alpha
  zero_store(m.eval);
  auto inst = world.gen_instance(0);
  MechanismView v(inst);
  Binding b(std::as_const(m));
  auto se = cga::encode_set(m.cfg, b.T, b.tape, v);
  auto H_A = neural::gather_rows(se.H, std::vector<int>{1, 4, 2});
  std::vector<double> alpha = {0.7, 0.2, 0.05};
  auto ev = cga::evaluator_forward(m.cfg, b.E, H_A, se.h_u, alpha);
  for (int t = 0; t < 3; ++t) {
    CHECK(ev.gamma.val().data[std::size_t(t)] == 1.0);
    CHECK(ev.theta.val().data[std::size_t(t)] == alpha[std::size_t(t)]);
  }

  auto dead = cga::evaluator_forward(m.cfg, b.E, H_A, se.h_u, {0.0, 0.0, 0.0});
  for (double th : dead.theta.val().data) CHECK(th == 0.0);

  CHECK_THROWS_AS(cga::evaluator_forward(m.cfg, b.E, H_A, se.h_u, {0.5}),
                  std::invalid_argument);
}

TEST_CASE("record_bce reproduces hand-computed cross-entropies", "[cga]") {
  auto world = make_world(6, 3, 53);
  auto inst = world.gen_instance(0);
  auto m = cga::make_model(CgaConfig{}, 3, 13);
  zero_store(m.eval);  // theta == alpha exactly

  worldsim::ClickRecord rec;
  rec.auction_id = 0;
  rec.alloc = Allocation{{0, 1, 2}};
  rec.pctr = {0.5, 0.5, 0.5};
  rec.clicks = {1, 0, 1};

  Binding b(std::as_const(m));
  double coin = cga::record_bce(m, b, inst, rec, 1.0).val().data[0];
  CHECK(coin == Catch::Approx(3.0 * std::log(2.0)).margin(1e-12));

  rec.pctr = {1.0, 1.0, 1.0};
  rec.clicks = {1, 1, 1};
  Binding b2(std::as_const(m));
  CHECK(cga::record_bce(m, b2, inst, rec, 1.0).val().data[0] < 1e-5);  // perfect, up to clamp

  rec.clicks = {0, 0, 0};
  Binding b3(std::as_const(m));
  CHECK(cga::record_bce(m, b3, inst, rec, 1.0).val().data[0] > 10.0);  // confidently wrong

  // the alpha baseline is the same quantity computed without the network
  worldsim::Dataset ds;
  ds.instances = {inst};
  rec.pctr = {0.5, 0.5, 0.5};
  rec.clicks = {1, 0, 1};
  ds.log = {rec};
  CHECK(cga::alpha_logloss(ds, 0, 1) == Catch::Approx(3.0 * std::log(2.0)).margin(1e-12));
}

TEST_CASE("evaluator training beats the point-wise baseline on held-out data", "[cga]") {
  auto world = make_world(6, 3, 2029);
  auto data = world.gen_dataset(900);
  auto m = cga::make_model(CgaConfig{}, 3, 71);

  double alpha_ll = cga::alpha_logloss(data, 600, 900);
  double before = cga::evaluator_logloss(m, data, 600, 900);
  auto curve = cga::evaluator_train(m, data, 0, 600, 6, 2e-3, 64);
  double after = cga::evaluator_logloss(m, data, 600, 900);

  REQUIRE(curve.size() == 6);
  CHECK(curve.back() < curve.front());
  CHECK(after < before);
  CHECK(after < alpha_ll);
}

TEST_CASE("rewards decompose against a hand-computed point-wise oracle", "[cga]") {
  auto inst = flat_instance({0.9, 0.3, 0.6, 0.45}, 3);
  MechanismView v(inst);
  auto m = cga::make_model(flat_config(), 3, 2);
  std::vector<double> qhat = {0.8, 0.5, 0.9, 0.4};
  const double rho = 0.7;

  Allocation A{{0, 2, 3}};
  auto phi = cga::phi_for(v, true);
  auto rb = cga::rewards(m, v, A, phi, qhat, rho);

  // scratch recomputation: vw of the full slate and of each drop-one slate
  double vw_full = pointwise_vw(v, A, qhat, rho);
  CHECK(rb.vw_full == Catch::Approx(vw_full).margin(1e-12));
  for (int i = 0; i < 3; ++i) {
    double vw_minus = pointwise_vw(v, cga::drop_slot(A, i), qhat, rho);
    CHECK(rb.vw_minus[std::size_t(i)] == Catch::Approx(vw_minus).margin(1e-12));
    CHECK(rb.self_r[std::size_t(i)] + rb.external_r[std::size_t(i)] ==
          Catch::Approx(vw_full - vw_minus).margin(1e-12));
    CHECK(rb.total[std::size_t(i)] ==
          Catch::Approx(rb.self_r[std::size_t(i)] + rb.external_r[std::size_t(i)]).margin(1e-15));
  }

  // position decay 1: removing an ad cannot change the others, externality 0
  auto flat = cga::rewards(m, v, A, phi, qhat, 1.0);
  for (double e : flat.external_r) CHECK(e == Catch::Approx(0.0).margin(1e-12));

  // a single slot has no one to harm
  auto m1 = cga::make_model(flat_config(), 1, 2);
  auto solo = cga::rewards(m1, v, Allocation{{2}}, phi, qhat, rho);
  CHECK(solo.external_r[0] == 0.0);
  CHECK(solo.self_r[0] == Catch::Approx(solo.vw_full).margin(1e-12));

  // ablation flags gate the components of the trained-on total
  auto cfg_noself = flat_config();
  cfg_noself.use_self_reward = false;
  auto rb_noself = cga::rewards(cga::make_model(cfg_noself, 3, 2), v, A, phi, qhat, rho);
  CHECK(rb_noself.total == rb_noself.external_r);
  auto cfg_noext = flat_config();
  cfg_noext.use_external_reward = false;
  auto rb_noext = cga::rewards(cga::make_model(cfg_noext, 3, 2), v, A, phi, qhat, rho);
  CHECK(rb_noext.total == rb_noext.self_r);
}

TEST_CASE("rewards under the evaluator keep the decomposition identity", "[cga]") {
  auto world = make_world(6, 3, 67);
  auto m = cga::make_model(CgaConfig{}, 3, 23);
  for (int id = 0; id < 10; ++id) {
    auto inst = world.gen_instance(id);
    MechanismView v(inst);
    auto phi = cga::phi_for(v, true);
    auto qhat = world.pctr(inst);
    auto rb = cga::rewards(m, v, Allocation{{1, 5, 3}}, phi, qhat, 0.8);
    for (int i = 0; i < 3; ++i)
      CHECK(rb.self_r[std::size_t(i)] + rb.external_r[std::size_t(i)] ==
            Catch::Approx(rb.vw_full - rb.vw_minus[std::size_t(i)]).margin(1e-9));
  }
}

TEST_CASE("generator training concentrates on high-value slates", "[cga]") {
  auto world = make_world(4, 2, 808, -0.3, 0.0);
  auto cfg = flat_config();
  cfg.d_a = 8;
  cfg.d_u = 8;
  auto m = cga::make_model(cfg, 2, 31);

  // quality signal linear in the ad features, so the score head has to pick it
  // up from the embeddings to beat the prior-only ranking
  cga::PctrFn pctr = [](const MechanismView& v) {
    std::vector<double> q(std::size_t(v.n), 0.0);
    for (int i = 0; i < v.n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < v.ad_features[std::size_t(i)].size(); ++j)
        s += v.ad_features[std::size_t(i)][j] * (j % 2 == 0 ? 1.0 : -1.0);
      q[std::size_t(i)] = 1.0 / (1.0 + std::exp(-2.0 * s));
    }
    return q;
  };

  std::vector<core::AuctionInstance> train;
  for (int id = 0; id < 600; ++id) train.push_back(world.gen_instance(id));

  auto held_ratio = [&] {
    double got = 0.0, best = 0.0;
    for (int id = 1000; id < 1500; ++id) {
      auto inst = world.gen_instance(id);
      MechanismView v(inst);
      auto qhat = pctr(v);
      Binding b(std::as_const(m));
      auto f = cga::cga_forward(m, b, v, qhat, world.cfg.pos_decay, DecodeMode::greedy);
      got += pointwise_vw(v, f.A, qhat, world.cfg.pos_decay);
      double mx = -1e300;
      oracle::for_each_allocation(4, 2, [&](const Allocation& a) {
        mx = std::max(mx, pointwise_vw(v, a, qhat, world.cfg.pos_decay));
      });
      best += mx;
    }
    REQUIRE(best > 0.0);
    return got / best;
  };

  double before = held_ratio();
  auto curve = cga::generator_train(m, train, pctr, world.cfg.pos_decay, 50, 2e-3, 30, 77, 0.15);
  REQUIRE(curve.size() == 50);
  CHECK((curve[47] + curve[48] + curve[49]) / 3 > (curve[0] + curve[1] + curve[2]) / 3);
  double after = held_ratio();
  CHECK(after > before);
  CHECK(after >= 0.95);
}

TEST_CASE("zeroed-out rewards leave the generator untouched", "[cga]") {
  auto world = make_world(4, 2, 808, -0.3, 0.0);
  auto cfg = flat_config();
  cfg.d_a = 8;
  cfg.d_u = 8;
  cfg.use_self_reward = false;
  cfg.use_external_reward = false;
  auto m = cga::make_model(cfg, 2, 31);

  std::vector<core::AuctionInstance> train;
  for (int id = 0; id < 40; ++id) train.push_back(world.gen_instance(id));

  auto before = m.gen.to_json().dump();
  auto trunk_before = m.trunk.to_json().dump();
  auto curve = cga::generator_train(m, train, world_pctr(world), world.cfg.pos_decay, 2, 1e-2,
                                    20, 5);
  CHECK(m.gen.to_json().dump() == before);
  CHECK(m.trunk.to_json().dump() == trunk_before);
  for (double r : curve) CHECK(r == 0.0);
}

TEST_CASE("payment head stays inside [0, bid] and halves bids when zeroed", "[cga]") {
  auto world = make_world(6, 3, 301);
  auto m = cga::make_model(CgaConfig{}, 3, 19);
  auto pctr = world_pctr(world);

  for (int id = 0; id < 30; ++id) {
    auto inst = world.gen_instance(id);
    MechanismView v(inst);
    Binding b(std::as_const(m));
    auto f = cga::cga_forward(m, b, v, pctr(v), 0.8, DecodeMode::greedy);
    for (int t = 0; t < 3; ++t) {
      double bid = inst.bids[std::size_t(f.A[t])];
      CHECK(f.payments[std::size_t(t)] >= 0.0);
      CHECK(f.payments[std::size_t(t)] <= bid);
      if (bid > 0.0) CHECK(f.payments[std::size_t(t)] < bid);  // the rate is strictly < 1
    }
  }

  // zero bids pay zero whatever the network thinks
  auto dead = flat_instance({0.0, 0.0, 0.0, 0.5}, 3);
  auto mf = cga::make_model(flat_config(), 3, 19);
  auto pay = greedy_payments(mf, MechanismView(dead), unit_pctr(), 1.0);
  int zeros = 0;
  for (double p : pay) zeros += p == 0.0 ? 1 : 0;
  CHECK(zeros >= 2);

  // zeroed head: rate sigmoid(0) = 1/2 exactly
  zero_store(mf.pay);
  auto half = flat_instance({0.9, 0.3, 0.6, 0.45}, 3);
  MechanismView hv(half);
  Binding b(std::as_const(mf));
  auto f = cga::cga_forward(mf, b, hv, unit_pctr()(hv), 1.0, DecodeMode::greedy);
  for (int t = 0; t < 3; ++t)
    CHECK(f.payments[std::size_t(t)] == half.bids[std::size_t(f.A[t])] / 2.0);
}

TEST_CASE("cga mechanism handle is deterministic, feasible, and scored on true CTRs", "[cga]") {
  auto world = make_world(6, 3, 97);
  auto ctr = oracle::make_true_ctr_oracle(world);
  auto model = std::make_shared<CgaModel>(cga::make_model(CgaConfig{}, 3, 43));
  auto mech = cga::make_cga_mechanism(model, world_pctr(world), world.cfg.pos_decay, ctr);
  CHECK(mech.name == "cga");
  CHECK(!mech.truthful_prices);

  for (int id = 0; id < 15; ++id) {
    auto inst = world.gen_instance(id);
    MechanismView v(inst);
    auto r1 = mech.run(v), r2 = mech.run(v);
    CHECK(core::check_feasible(r1.outcome.allocation, inst));
    CHECK(r1.outcome.allocation == r2.outcome.allocation);
    CHECK(r1.outcome.payments == r2.outcome.payments);
    CHECK(r1.outcome.ctrs == world.true_ctr(inst, r1.outcome.allocation));
    CHECK(r1.scored == 1);

    auto phi = cga::phi_for(v, true);
    double score = 0.0;
    for (int t = 0; t < 3; ++t)
      score += phi[std::size_t(r1.outcome.allocation[t])] * r1.outcome.ctrs[std::size_t(t)];
    CHECK(r1.score == Catch::Approx(score).margin(1e-12));

    for (int t = 0; t < 3; ++t) {
      auto one = mech.run_one(v, r1.outcome.allocation[t]);
      CHECK(one.slot == t);
      CHECK(one.payment == r1.outcome.payments[std::size_t(t)]);
    }
  }
}

TEST_CASE("checkpoints round-trip the whole mechanism", "[cga]") {
  auto world = make_world(6, 3, 113);
  auto m = cga::make_model(CgaConfig{}, 3, 47);
  const std::string prefix = "cga_ckpt_test_";
  cga::save_model(m, prefix);

  auto m2 = cga::make_model(CgaConfig{}, 3, 48);  // different init, then overwritten
  cga::load_model(m2, prefix);
  for (const char* f : {"trunk.json", "gen.json", "eval.json", "pay.json"})
    std::remove((prefix + f).c_str());

  auto pctr = world_pctr(world);
  for (int id = 0; id < 5; ++id) {
    auto inst = world.gen_instance(id);
    MechanismView v(inst);
    Binding b1(std::as_const(m)), b2(std::as_const(m2));
    auto f1 = cga::cga_forward(m, b1, v, pctr(v), 0.8, DecodeMode::greedy);
    auto f2 = cga::cga_forward(m2, b2, v, pctr(v), 0.8, DecodeMode::greedy);
    CHECK(f1.A == f2.A);
    CHECK(f1.payments == f2.payments);
    CHECK(f1.theta == f2.theta);
  }
}

TEST_CASE("empirical regret vanishes for VCG and flags a first-price control", "[cga]") {
  auto world = make_world(6, 3, 131);
  auto ctr = oracle::make_true_ctr_oracle(world);
  auto vcg = oracle::make_vcg_mechanism(ctr);
  cga::RegretOptions opt;
  Rng rng(1, stream_id("regret-test"));

  double psi = 0.0;
  long long profiles = 0;
  for (int id = 0; id < 25; ++id) {
    auto sum = cga::empirical_regret(world.gen_instance(id), vcg, opt, rng);
    for (double r : sum.slot_regret) CHECK(r < 1e-9);
    psi += sum.psi_sum;
    profiles += sum.profiles;
  }
  CHECK(profiles == 25);
  CHECK(psi < 1e-6);

  // first-price control: winners pay their bid, so shading is always profitable
  oracle::Mechanism fp;
  fp.name = "first-price";
  fp.run = [ctr](const MechanismView& v) {
    auto r = oracle::extremal_allocate(v, ctr, v.bids, true);
    r.outcome.payments.assign(std::size_t(v.k), 0.0);
    for (int t = 0; t < v.k; ++t)
      r.outcome.payments[std::size_t(t)] = v.bids[std::size_t(r.outcome.allocation[t])];
    return r;
  };
  fp.run_one = [&fp](const MechanismView& v, int ad) {
    return oracle::ad_outcome_from(fp.run(v), ad);
  };

  double shading_regret = 0.0;
  long long skipped = 0;
  for (int id = 0; id < 10; ++id) {
    auto sum = cga::empirical_regret(world.gen_instance(id), fp, opt, rng);
    for (double r : sum.slot_regret) shading_regret += r;
    skipped += sum.skipped;
    CHECK(sum.psi_sum == 0.0);  // truthful utility is exactly 0, below the floor
  }
  CHECK(shading_regret > 0.01);
  CHECK(skipped == 30);
}

TEST_CASE("regret evaluation validates its inputs and honors the grid", "[cga]") {
  auto world = make_world(6, 3, 131);
  auto vcg = oracle::make_vcg_mechanism(oracle::make_true_ctr_oracle(world));
  auto inst = world.gen_instance(0);
  Rng rng(2, stream_id("regret-test"));

  cga::RegretOptions only_truth;
  only_truth.grid = {1.0};
  auto sum = cga::empirical_regret(inst, vcg, only_truth, rng);
  CHECK(sum.psi_sum == 0.0);
  for (double r : sum.slot_regret) CHECK(r == 0.0);

  cga::RegretOptions redraws;
  redraws.L = 3;
  CHECK(cga::empirical_regret(inst, vcg, redraws, rng).profiles == 3);

  cga::RegretOptions bad;
  bad.grid = {0.5, 2.0};
  CHECK_THROWS_AS(cga::empirical_regret(inst, vcg, bad, rng), std::invalid_argument);
  bad = cga::RegretOptions{};
  bad.L = 0;
  CHECK_THROWS_AS(cga::empirical_regret(inst, vcg, bad, rng), std::invalid_argument);

  auto no_values = flat_instance({0.5, 0.4, 0.3, 0.2, 0.1, 0.05}, 3);
  no_values.values.clear();
  CHECK_THROWS_AS(cga::empirical_regret(no_values, vcg, cga::RegretOptions{}, rng),
                  std::invalid_argument);
}

TEST_CASE("scan_deviations finds the hand-computed shading optimum", "[cga]") {
  auto inst = flat_instance({0.8, 0.6}, 1);
  MechanismView v(inst);
  auto m = cga::make_model(flat_config(), 1, 3);
  zero_store(m.gen);
  zero_store(m.pay);  // payment = bid / 2

  auto scan = cga::scan_deviations(m, v, inst.values, unit_pctr(), 1.0,
                                   cga::default_misreport_grid());
  REQUIRE(scan.A.slots == std::vector<int>{0});
  CHECK(scan.utility[0] == Catch::Approx(0.4).margin(1e-12));
  // bidding 0.8x keeps the slot (phi 0.28 vs 0.2) and pays 0.32
  CHECK(scan.best_factor[0] == Catch::Approx(0.8).margin(1e-12));
  CHECK(scan.best_utility[0] == Catch::Approx(0.48).margin(1e-12));

  // the same gap surfaces as empirical regret of the mechanism handle
  auto mech = cga::make_cga_mechanism(std::make_shared<CgaModel>(std::move(m)), unit_pctr(), 1.0,
                                      oracle::make_constant_ctr_oracle(1.0));
  Rng rng(3, stream_id("scan-test"));
  auto sum = cga::empirical_regret(inst, mech, cga::RegretOptions{}, rng);
  CHECK(sum.slot_regret[0] == Catch::Approx(0.08).margin(1e-12));
  CHECK(sum.psi_sum == Catch::Approx(0.2).margin(1e-12));
}

TEST_CASE("multiplier updates and train-state validation", "[cga]") {
  cga::TrainState st;
  st.lambda = {0.5, 1.0, 0.0};
  cga::update_multipliers(st, {0.1, 0.0, 0.0});
  CHECK(st.lambda == std::vector<double>{0.6, 1.0, 0.0});
  st.rho = 2.0;
  cga::update_multipliers(st, {0.0, 0.05, 0.0});
  CHECK(st.lambda[1] == Catch::Approx(1.1));
  CHECK_THROWS_AS(cga::update_multipliers(st, {0.1}), std::invalid_argument);

  cga::TrainState bad;
  bad.rho = 0.0;
  CHECK_THROWS_AS(bad.validate(3), std::invalid_argument);
  bad = cga::TrainState{};
  bad.lambda = {0.0};
  CHECK_THROWS_AS(bad.validate(3), std::invalid_argument);
  bad = cga::TrainState{};
  bad.grid = {0.5};
  CHECK_THROWS_AS(bad.validate(3), std::invalid_argument);
  CHECK_NOTHROW(cga::TrainState{}.validate(3));
}

TEST_CASE("payment training freezes everything but its own stage", "[cga]") {
  auto world = make_world(5, 2, 509);
  auto m = cga::make_model(CgaConfig{}, 2, 61);
  auto pctr = world_pctr(world);

  std::vector<core::AuctionInstance> train;
  for (int id = 0; id < 12; ++id) train.push_back(world.gen_instance(id));

  // single batch: the first epoch's revenue is measured entirely at the
  // starting parameters, so it must match an independent forward pass
  double rev0 = 0.0;
  for (const auto& inst : train) {
    MechanismView v(inst);
    Binding b(std::as_const(m));
    auto f = cga::cga_forward(m, b, v, pctr(v), world.cfg.pos_decay, DecodeMode::greedy);
    for (int t = 0; t < 2; ++t)
      rev0 += f.payments[std::size_t(t)] * f.theta[std::size_t(t)];
  }
  rev0 /= double(train.size());

  auto trunk = m.trunk.to_json().dump();
  auto gen = m.gen.to_json().dump();
  auto eval = m.eval.to_json().dump();
  auto pay = m.pay.to_json().dump();

  auto report = cga::paymentnet_train(m, train, pctr, world.cfg.pos_decay, cga::TrainState{}, 2,
                                      1e-3, 64, 19);
  REQUIRE(report.revenue_curve.size() == 2);
  CHECK(report.revenue_curve[0] == Catch::Approx(rev0).margin(1e-9));
  CHECK(m.trunk.to_json().dump() == trunk);
  CHECK(m.gen.to_json().dump() == gen);
  CHECK(m.eval.to_json().dump() == eval);
  CHECK(m.pay.to_json().dump() != pay);
  CHECK(report.state.lambda.size() == 2);
  for (double r : report.regret_curve) CHECK(std::isfinite(r));

  // end2end routes payment gradients into the decoder as well
  auto cfg2 = CgaConfig{};
  cfg2.end2end = true;
  auto m2 = cga::make_model(cfg2, 2, 61);
  auto gen2 = m2.gen.to_json().dump();
  cga::paymentnet_train(m2, train, pctr, world.cfg.pos_decay, cga::TrainState{}, 1, 1e-3, 64, 19);
  CHECK(m2.gen.to_json().dump() != gen2);

  cga::TrainState bad;
  bad.rho = -1.0;
  CHECK_THROWS_AS(cga::paymentnet_train(m, train, pctr, 0.8, bad, 1, 1e-3, 64, 19),
                  std::invalid_argument);
}
