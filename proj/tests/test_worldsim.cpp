#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <sstream>

#include "aforge/worldsim.hpp"

using namespace aforge;
using namespace aforge::worldsim;
using core::Allocation;

namespace {

// test-local enumerator, independent of the oracle module
void each_allocation(int n, int k, const std::function<void(const Allocation&)>& fn) {
  std::vector<int> slots;
  std::vector<bool> used(std::size_t(n), false);
  std::function<void()> rec = [&] {
    if (int(slots.size()) == k) {
      fn(Allocation{slots});
      return;
    }
    for (int i = 0; i < n; ++i) {
      if (used[std::size_t(i)]) continue;
      used[std::size_t(i)] = true;
      slots.push_back(i);
      rec();
      slots.pop_back();
      used[std::size_t(i)] = false;
    }
  };
  rec();
}

}  // namespace

TEST_CASE("instance generation is deterministic and unit-normalized", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 8;
  cfg.k = 3;
  cfg.seed = 7;
  WorldModel world(cfg);

  auto a = world.gen_instance(12);
  auto b = world.gen_instance(12);
  CHECK(a.user_features == b.user_features);
  CHECK(a.ad_features == b.ad_features);
  CHECK(a.bids == b.bids);
  CHECK(a.values == b.values);
  CHECK_NOTHROW(a.validate());

  double un = std::inner_product(a.user_features.begin(), a.user_features.end(),
                                 a.user_features.begin(), 0.0);
  CHECK(std::abs(un - 1.0) < 1e-9);
  for (const auto& row : a.ad_features) {
    double nn = std::inner_product(row.begin(), row.end(), row.begin(), 0.0);
    CHECK(std::abs(nn - 1.0) < 1e-9);
  }

  auto c = world.gen_instance(13);
  CHECK(a.bids != c.bids);
}

TEST_CASE("mean bid matches the value distribution", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 4;
  cfg.k = 2;
  cfg.d_a = 4;
  cfg.d_u = 4;
  cfg.seed = 99;
  WorldModel world(cfg);
  double sum = 0.0;
  long long cnt = 0;
  for (int id = 0; id < 10000; ++id) {
    auto inst = world.gen_instance(id);
    for (double b : inst.bids) sum += b, ++cnt;
  }
  CHECK(std::abs(sum / double(cnt) - 0.5) < 0.01);
}

TEST_CASE("true_ctr basics: no externality at k=1, purity, feasibility", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 5;
  cfg.k = 1;
  cfg.competition = 0.0;
  cfg.seed = 3;
  WorldModel world(cfg);
  auto inst = world.gen_instance(0);
  auto q = world.base_quality(inst);

  for (int i = 0; i < inst.n; ++i) {
    auto theta = world.true_ctr(inst, Allocation{{i}});
    REQUIRE(theta.size() == 1);
    CHECK(theta[0] == Catch::Approx(std::clamp(q[std::size_t(i)], cfg.ctr_floor, 1.0)));
  }

  auto t1 = world.true_ctr(inst, Allocation{{2}});
  auto t2 = world.true_ctr(inst, Allocation{{2}});
  CHECK(t1 == t2);

  CHECK_THROWS_AS(world.true_ctr(inst, Allocation{{1, 1}}), std::invalid_argument);
  CHECK_THROWS_AS(world.true_ctr(inst, Allocation{{7}}), std::invalid_argument);
}

TEST_CASE("true_ctr stays in [floor, 1] and kappa=0 removes cross effects", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 6;
  cfg.k = 3;
  cfg.seed = 31;

  WorldConfig flat = cfg;
  flat.competition = 0.0;
  WorldModel world(cfg), world_flat(flat);

  for (int id = 0; id < 20; ++id) {
    auto inst = world.gen_instance(id);
    each_allocation(inst.n, inst.k, [&](const Allocation& a) {
      auto theta = world.true_ctr(inst, a);
      for (double th : theta) {
        CHECK(th >= cfg.ctr_floor);
        CHECK(th <= 1.0);
      }
    });

    // with kappa=0 an ad's CTR depends on its slot only
    auto theta_a = world_flat.true_ctr(inst, Allocation{{0, 1, 2}});
    auto theta_b = world_flat.true_ctr(inst, Allocation{{0, 4, 5}});
    CHECK(theta_a[0] == theta_b[0]);
  }
}

TEST_CASE("interaction symmetry under equal-similarity equal-distance swap", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 4;
  cfg.k = 3;
  cfg.seed = 5;
  WorldModel world(cfg);
  auto inst = world.gen_instance(1);
  inst.ad_features[2] = inst.ad_features[3];  // identical neighbors

  // ad 0 sits in the middle; ads 2 and 3 flank it at distance 1
  auto theta = world.true_ctr(inst, Allocation{{2, 0, 3}});
  auto swapped = world.true_ctr(inst, Allocation{{3, 0, 2}});
  CHECK(theta[1] == swapped[1]);
}

TEST_CASE("negative competition produces slot non-monotonicity somewhere", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 6;
  cfg.k = 3;
  // low-dimensional features give strong pairwise similarities, which is
  // what lets the interaction term overcome the position decay
  cfg.d_a = 3;
  cfg.d_u = 3;
  cfg.competition = -0.3;
  cfg.seed = 7;
  WorldModel world(cfg);

  bool found = false;
  for (int id = 0; id < 50 && !found; ++id) {
    auto inst = world.gen_instance(id);
    for (int i = 0; i < inst.n && !found; ++i) {
      // best welfare context with ad i pinned to slot 1 resp. slot 2
      double best_w[2] = {-1e300, -1e300};
      double theta_at[2] = {0.0, 0.0};
      each_allocation(inst.n, inst.k, [&](const Allocation& a) {
        for (int pin = 0; pin < 2; ++pin) {
          if (a[pin] != i) continue;
          auto theta = world.true_ctr(inst, a);
          double w = 0.0;
          for (int t = 0; t < inst.k; ++t) w += inst.bids[std::size_t(a[t])] * theta[std::size_t(t)];
          if (w > best_w[pin]) {
            best_w[pin] = w;
            theta_at[pin] = theta[std::size_t(pin)];
          }
        }
      });
      if (theta_at[1] > theta_at[0] + 1e-12) found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("sample_clicks follows Bernoulli(theta)", "[worldsim]") {
  Rng rng(17, stream_id("clicks-test"));
  CHECK(sample_clicks({0.0, 0.0, 0.0}, rng) == std::vector<int>{0, 0, 0});
  CHECK(sample_clicks({1.0, 1.0, 1.0}, rng) == std::vector<int>{1, 1, 1});

  long long hits = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) hits += sample_clicks({0.3}, rng)[0];
  CHECK(std::abs(double(hits) / draws - 0.3) < 0.01);

  CHECK_THROWS_AS(sample_clicks({1.2}, rng), std::invalid_argument);
}

TEST_CASE("pred_noise=0 makes the predictor exact", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 5;
  cfg.k = 2;
  cfg.pred_noise = 0.0;
  cfg.seed = 77;
  WorldModel world(cfg);
  auto inst = world.gen_instance(4);
  CHECK(world.pctr(inst) == world.base_quality(inst));
}

TEST_CASE("logged slot-1 clicks concentrate on mean slot-1 CTR", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 5;
  cfg.k = 2;
  cfg.d_a = 4;
  cfg.d_u = 4;
  cfg.seed = 404;
  WorldModel world(cfg);
  const int N = 100000;
  auto ds = world.gen_dataset(N);
  double clicks = 0.0, theta_sum = 0.0;
  for (int j = 0; j < N; ++j) {
    clicks += ds.log[std::size_t(j)].clicks[0];
    theta_sum += world.true_ctr(ds.instances[std::size_t(j)], ds.log[std::size_t(j)].alloc)[0];
  }
  double p = theta_sum / N;
  double sd = std::sqrt(p * (1.0 - p) / N);
  CHECK(std::abs(clicks / N - p) <= 2.0 * sd);
}

TEST_CASE("datasets serialize deterministically and round-trip", "[worldsim]") {
  WorldConfig cfg;
  cfg.n = 4;
  cfg.k = 2;
  cfg.seed = 1234;
  auto ds = WorldModel(cfg).gen_dataset(25);
  auto ds2 = WorldModel(cfg).gen_dataset(25);

  std::ostringstream s1, s2;
  write_jsonl(ds, s1);
  write_jsonl(ds2, s2);
  CHECK(s1.str() == s2.str());
  CHECK(s1.str().find("\"dist\"") != std::string::npos);

  std::istringstream in(s1.str());
  auto back = read_jsonl(in);
  REQUIRE(back.instances.size() == ds.instances.size());
  for (std::size_t j = 0; j < back.instances.size(); ++j) {
    CHECK(back.instances[j].bids == ds.instances[j].bids);
    CHECK(back.instances[j].ad_features == ds.instances[j].ad_features);
    CHECK(back.log[j].alloc == ds.log[j].alloc);
    CHECK(back.log[j].pctr == ds.log[j].pctr);
    CHECK(back.log[j].clicks == ds.log[j].clicks);
  }

  std::ostringstream s3;
  write_jsonl(back, s3);
  CHECK(s3.str() == s1.str());
}
