// Command-line front end over the harness: dataset generation, staged
// training, experiment evaluation with report emission, and self-checks of
// the enumeration oracle. Exit codes: 0 success, 1 failed self-check,
// 2 config error, 3 cap or resource error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aforge/harness.hpp"

namespace {

using namespace aforge;
using core::MechanismView;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

bool check_monotonicity(std::uint64_t seed) {
  worldsim::WorldConfig wc;
  wc.n = 6;
  wc.k = 3;
  wc.d_a = 4;
  wc.d_u = 4;
  wc.seed = seed;
  worldsim::WorldModel world(wc);
  auto ctr = oracle::make_true_ctr_oracle(world);
  std::vector<double> grid;
  for (int g = 0; g <= 20; ++g) grid.push_back(0.1 * g);

  long long violations = 0, control = 0;
  int pairs = 0;
  for (int id = 0; id < 50; ++id) {
    auto inst = world.gen_instance(id);
    MechanismView v(inst);
    for (int ad = 0; ad < wc.n; ++ad) {
      violations += long(oracle::monotonicity_check(v, ctr, ad, grid, true).violations.size());
      control += long(oracle::monotonicity_check(v, ctr, ad, grid, false).violations.size());
      ++pairs;
    }
  }
  std::cout << "monotonicity: " << pairs << " (instance, ad) pairs on a 21-point bid grid; "
            << violations << " violations, argmin control produced " << control << "\n";
  bool ok = violations == 0 && control > 0;
  std::cout << (ok ? "PASS" : "FAIL") << " allocation CTR nondecreasing in own bid\n";
  return ok;
}

bool check_theorem2(std::uint64_t seed) {
  worldsim::WorldConfig wc;
  wc.n = 5;
  wc.k = 2;
  wc.d_a = 4;
  wc.d_u = 4;
  wc.seed = seed;
  worldsim::WorldModel world(wc);
  auto ctr = oracle::make_true_ctr_oracle(world);
  const int profiles = 2000, S = 800;
  double rev = 0.0, vw = 0.0;
  for (int id = 0; id < profiles; ++id) {
    auto inst = world.gen_instance(id);
    MechanismView v(inst);
    auto res = oracle::optimal_mechanism(v, ctr, S, seed);
    rev += core::revenue(res.outcome);
    auto phi = oracle::virtual_bids(v);
    for (int t = 0; t < v.k; ++t)
      vw += phi[std::size_t(res.outcome.allocation[t])] * res.outcome.ctrs[std::size_t(t)];
  }
  rev /= profiles;
  vw /= profiles;
  double gap = std::abs(rev - vw) / std::abs(rev);
  std::cout << "theorem2: mean revenue " << rev << ", mean winner virtual welfare " << vw
            << ", relative gap " << gap << " (" << profiles << " profiles, S=" << S << ")\n";
  bool ok = gap < 0.03;
  std::cout << (ok ? "PASS" : "FAIL") << " expected revenue tracks expected virtual welfare\n";
  return ok;
}

bool check_mc_convergence(std::uint64_t seed) {
  worldsim::WorldConfig wc;
  wc.n = 4;
  wc.k = 2;
  wc.d_a = 4;
  wc.d_u = 4;
  wc.seed = seed;
  worldsim::WorldModel world(wc);
  auto ctr = oracle::make_true_ctr_oracle(world);
  auto inst = world.gen_instance(0);
  MechanismView v(inst);
  auto phi_fn = [&v](int j, double b) {
    return valuation::virtual_value_ext(v.dists[std::size_t(j)], b);
  };
  int ad = oracle::optimal_allocate(v, ctr, oracle::virtual_bids(v)).outcome.allocation[0];

  const int reps = 40;
  const std::vector<int> sizes{100, 1000, 10000};
  std::vector<double> sigmas;
  for (int S : sizes) {
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      Rng rng(seed, stream_id("mc-check", std::uint64_t(S) * 100 + std::uint64_t(r)));
      double p = oracle::myerson_payment_mc(v, ctr, phi_fn, ad, S, rng);
      sum += p;
      sum2 += p * p;
    }
    double mean = sum / reps;
    sigmas.push_back(std::sqrt(std::max(0.0, sum2 / reps - mean * mean)));
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    double x = std::log(double(sizes[i])), y = std::log(sigmas[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double n = double(sizes.size());
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  std::cout << "mc-convergence: payment sigma";
  for (std::size_t i = 0; i < sizes.size(); ++i)
    std::cout << (i ? ", " : " ") << sigmas[i] << " @S=" << sizes[i];
  std::cout << "; log-log slope " << slope << "\n";
  bool ok = std::abs(slope + 0.5) <= 0.1;
  std::cout << (ok ? "PASS" : "FAIL") << " payment noise decays as 1/sqrt(S)\n";
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale laboratory for multi-slot ad auctions"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, ckpt_dir, report_path, json_path, slots_path;
  std::string stage, variant = "cga", mechanisms_csv, check;
  std::uint64_t seed = 0;
  bool timing = false, no_train = false;

  auto* gen = app.add_subcommand("gen", "Generate the training click log as JSONL");
  gen->add_option("--config", config_path, "experiment config JSON")->required();
  gen->add_option("--out", out_path, "output JSONL path")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "override the config seeds");

  auto* train = app.add_subcommand("train", "Train one pipeline stage of a cga variant");
  train->add_option("stage", stage, "pipeline stage")
      ->required()
      ->check(CLI::IsMember({"evaluator", "generator", "payment"}));
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_option("--data", data_path, "training dataset JSONL")->required();
  train->add_option("--ckpt", ckpt_dir, "checkpoint directory (overrides config)");
  train->add_option("--variant", variant, "cga variant name");
  auto* train_seed = train->add_option("--seed", seed, "override the config seeds");

  auto* eval = app.add_subcommand("eval", "Run the experiment and emit reports");
  eval->add_option("--config", config_path, "experiment config JSON")->required();
  eval->add_option("--mechanisms", mechanisms_csv, "comma-separated list (overrides config)");
  eval->add_option("--report", report_path, "CSV report path")->required();
  eval->add_option("--json", json_path, "also write the JSON mirror");
  eval->add_option("--slots", slots_path, "also write per-slot CTR curves as CSV");
  eval->add_flag("--timing", timing, "measure mean per-auction runtime");
  eval->add_flag("--no-train", no_train, "fail on missing checkpoints instead of training");
  auto* eval_seed = eval->add_option("--seed", seed, "override the config seeds");

  auto* orc = app.add_subcommand("oracle", "Self-checks of the enumeration oracle");
  orc->add_option("--check", check, "which check to run")
      ->required()
      ->check(CLI::IsMember({"monotonicity", "theorem2", "mc-convergence"}));
  orc->add_option("--seed", seed, "world seed for the check")->default_val(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      auto cfg = harness::load_config(config_path);
      if (gen_seed->count()) {
        cfg.world.seed = seed;
        cfg.eval.seed = seed;
      }
      worldsim::WorldModel world(cfg.world);
      auto data = world.gen_dataset(cfg.eval.train_auctions);
      worldsim::write_jsonl(data, out_path);
      std::cout << "wrote " << data.instances.size() << " auctions to " << out_path << "\n";
    } else if (train->parsed()) {
      auto cfg = harness::load_config(config_path);
      if (train_seed->count()) {
        cfg.world.seed = seed;
        cfg.eval.seed = seed;
      }
      if (!ckpt_dir.empty()) cfg.ckpt_dir = ckpt_dir;
      worldsim::WorldModel world(cfg.world);
      auto data = worldsim::read_jsonl(data_path);
      harness::train_stage(stage, variant, cfg, world, data);
      std::cout << "trained " << stage << " of " << variant << "; checkpoints at "
                << harness::ckpt_prefix(cfg, variant) << "{trunk,gen,eval,pay}.json\n";
    } else if (eval->parsed()) {
      auto cfg = harness::load_config(config_path);
      if (eval_seed->count()) {
        cfg.world.seed = seed;
        cfg.eval.seed = seed;
      }
      if (!mechanisms_csv.empty()) cfg.mechanisms = split_csv(mechanisms_csv);
      if (timing) cfg.timing = true;
      if (no_train) cfg.train_missing = false;
      harness::Report rep = harness::run_experiment(cfg);
      harness::emit_report(rep, "csv", report_path);
      std::cout << "wrote " << report_path << "\n";
      if (!json_path.empty()) {
        harness::emit_report(rep, "json", json_path);
        std::cout << "wrote " << json_path << "\n";
      }
      if (!slots_path.empty()) {
        harness::emit_slot_ctr(rep, slots_path);
        std::cout << "wrote " << slots_path << "\n";
      }
      std::cout << std::left << std::setw(14) << "mechanism" << std::right << std::setw(12)
                << "rpm" << std::setw(10) << "ctr" << std::setw(10) << "psi" << "\n";
      for (const auto& row : rep.rows)
        std::cout << std::left << std::setw(14) << row.mechanism << std::right << std::fixed
                  << std::setprecision(4) << std::setw(12) << row.rpm << std::setw(10) << row.ctr
                  << std::setw(10) << row.psi << std::defaultfloat << "\n";
    } else if (orc->parsed()) {
      bool ok = check == "monotonicity"      ? check_monotonicity(seed)
                : check == "theorem2"        ? check_theorem2(seed)
                                             : check_mc_convergence(seed);
      return ok ? 0 : 1;
    }
    return 0;
  } catch (const harness::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const oracle::CapExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
