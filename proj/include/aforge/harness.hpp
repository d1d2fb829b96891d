#pragma once
// Experiment orchestration: strict JSON configs, the staged training pipeline
// over checkpoints, mechanism evaluation (RPM, CTR, Psi, per-slot CTR), and
// report emission as CSV or JSON. Everything downstream of a config is keyed
// by (config, seed), so a rerun reproduces every byte.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aforge/cga/train.hpp"
#include "aforge/oracle.hpp"
#include "aforge/worldsim.hpp"

namespace aforge::harness {

using core::AuctionInstance;
using core::MechanismView;

// Anything wrong with a config: unknown keys, bad values, or references to
// checkpoints that do not exist. The CLI maps this family to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-3;
  int batch = 512;
  int evaluator_epochs = 8;
  int generator_epochs = 20;
  int payment_epochs = 8;
  double entropy_bonus = 0.05;
  double rho = 1.0;
  int S = 2000;  // Monte Carlo draws behind each oracle-optimal payment
  std::vector<double> grid = cga::default_misreport_grid();
};

struct EvalConfig {
  int train_auctions = 5000;
  int eval_auctions = 1000;
  int psi_instances = 200;  // the misreport scan dominates eval cost
  int L = 1;                // valuation redraws per Psi instance
  std::uint64_t seed = 7;
};

// Ablation rows: the flag set of each named variant. The name doubles as the
// checkpoint prefix, and CgaConfig::variant_name() inverts this map.
inline bool cga_variant_flags(const std::string& name, cga::CgaConfig& cfg) {
  cfg = cga::CgaConfig{};
  if (name == "cga") return true;
  if (name == "cga-theta") {
    cfg.use_evaluator = false;
    return true;
  }
  if (name == "cga-end2end") {
    cfg.end2end = true;
    return true;
  }
  if (name == "cga-noself") {
    cfg.use_self_reward = false;
    return true;
  }
  if (name == "cga-noext") {
    cfg.use_external_reward = false;
    return true;
  }
  if (name == "cga-nophi") {
    cfg.use_virtual_value = false;
    return true;
  }
  return false;
}

inline bool known_mechanism(const std::string& name) {
  cga::CgaConfig probe;
  return name == "gsp" || name == "vcg" || name == "optimal" || cga_variant_flags(name, probe);
}

struct ExperimentConfig {
  worldsim::WorldConfig world;
  std::vector<std::string> mechanisms{"gsp", "vcg", "optimal", "cga"};
  TrainConfig train;
  EvalConfig eval;
  std::string ckpt_dir = "ckpts";
  bool timing = false;        // wall-clock columns break byte-identical reports
  bool train_missing = true;  // false: a missing checkpoint is an error

  void validate() const {
    world.validate();
    if (mechanisms.empty()) throw ConfigError("config: mechanisms must be non-empty");
    for (std::size_t i = 0; i < mechanisms.size(); ++i) {
      if (!known_mechanism(mechanisms[i]))
        throw ConfigError("config: unknown mechanism '" + mechanisms[i] + "'");
      for (std::size_t j = 0; j < i; ++j)
        if (mechanisms[j] == mechanisms[i])
          throw ConfigError("config: duplicate mechanism '" + mechanisms[i] + "'");
    }
    if (!(train.lr > 0.0)) throw ConfigError("config: train.lr must be > 0");
    if (train.batch < 1) throw ConfigError("config: train.batch must be >= 1");
    if (train.evaluator_epochs < 0 || train.generator_epochs < 0 || train.payment_epochs < 0)
      throw ConfigError("config: epoch counts must be >= 0");
    if (train.entropy_bonus < 0.0) throw ConfigError("config: train.entropy_bonus must be >= 0");
    if (!(train.rho > 0.0)) throw ConfigError("config: train.rho must be > 0");
    if (train.S < 1) throw ConfigError("config: train.S must be >= 1");
    if (std::find(train.grid.begin(), train.grid.end(), 1.0) == train.grid.end())
      throw ConfigError("config: the misreport grid must contain 1.0");
    if (eval.train_auctions < 1 || eval.eval_auctions < 1)
      throw ConfigError("config: eval.train_auctions and eval.eval_auctions must be >= 1");
    if (eval.psi_instances < 1) throw ConfigError("config: eval.psi_instances must be >= 1");
    if (eval.L < 1) throw ConfigError("config: eval.L must be >= 1");
    if (ckpt_dir.empty()) throw ConfigError("config: ckpt_dir must be non-empty");
  }
};

// ---------------------------------------------------------------------------
// Config parsing: one JSON document, unknown keys rejected at every level.

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <class T>
inline void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  try {
    ExperimentConfig cfg;
    check_keys(j, "config",
               {"world", "mechanisms", "train", "eval", "ckpt_dir", "timing", "train_missing"});
    if (j.contains("world")) {
      const auto& w = j.at("world");
      check_keys(w, "world", {"n", "k", "d_a", "d_u", "pos_decay", "competition", "pred_noise",
                              "ctr_floor", "seed", "dist"});
      read_field(w, "n", cfg.world.n);
      read_field(w, "k", cfg.world.k);
      read_field(w, "d_a", cfg.world.d_a);
      read_field(w, "d_u", cfg.world.d_u);
      read_field(w, "pos_decay", cfg.world.pos_decay);
      read_field(w, "competition", cfg.world.competition);
      read_field(w, "pred_noise", cfg.world.pred_noise);
      read_field(w, "ctr_floor", cfg.world.ctr_floor);
      read_field(w, "seed", cfg.world.seed);
      if (w.contains("dist")) {
        check_keys(w.at("dist"), "world.dist", {"kind", "params"});
        cfg.world.dist = worldsim::dist_from_json(w.at("dist"));
      }
    }
    read_field(j, "mechanisms", cfg.mechanisms);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, "train", {"lr", "batch", "evaluator_epochs", "generator_epochs",
                              "payment_epochs", "entropy_bonus", "rho", "S", "grid"});
      read_field(t, "lr", cfg.train.lr);
      read_field(t, "batch", cfg.train.batch);
      read_field(t, "evaluator_epochs", cfg.train.evaluator_epochs);
      read_field(t, "generator_epochs", cfg.train.generator_epochs);
      read_field(t, "payment_epochs", cfg.train.payment_epochs);
      read_field(t, "entropy_bonus", cfg.train.entropy_bonus);
      read_field(t, "rho", cfg.train.rho);
      read_field(t, "S", cfg.train.S);
      read_field(t, "grid", cfg.train.grid);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, "eval", {"train_auctions", "eval_auctions", "psi_instances", "L", "seed"});
      read_field(e, "train_auctions", cfg.eval.train_auctions);
      read_field(e, "eval_auctions", cfg.eval.eval_auctions);
      read_field(e, "psi_instances", cfg.eval.psi_instances);
      read_field(e, "L", cfg.eval.L);
      read_field(e, "seed", cfg.eval.seed);
    }
    read_field(j, "ckpt_dir", cfg.ckpt_dir);
    read_field(j, "timing", cfg.timing);
    read_field(j, "train_missing", cfg.train_missing);
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

// Canonical re-serialization; input formatting and key order wash out.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {{"world",
           {{"n", c.world.n},
            {"k", c.world.k},
            {"d_a", c.world.d_a},
            {"d_u", c.world.d_u},
            {"pos_decay", c.world.pos_decay},
            {"competition", c.world.competition},
            {"pred_noise", c.world.pred_noise},
            {"ctr_floor", c.world.ctr_floor},
            {"seed", c.world.seed},
            {"dist", worldsim::dist_to_json(c.world.dist)}}},
          {"mechanisms", c.mechanisms},
          {"train",
           {{"lr", c.train.lr},
            {"batch", c.train.batch},
            {"evaluator_epochs", c.train.evaluator_epochs},
            {"generator_epochs", c.train.generator_epochs},
            {"payment_epochs", c.train.payment_epochs},
            {"entropy_bonus", c.train.entropy_bonus},
            {"rho", c.train.rho},
            {"S", c.train.S},
            {"grid", c.train.grid}}},
          {"eval",
           {{"train_auctions", c.eval.train_auctions},
            {"eval_auctions", c.eval.eval_auctions},
            {"psi_instances", c.eval.psi_instances},
            {"L", c.eval.L},
            {"seed", c.eval.seed}}},
          {"ckpt_dir", c.ckpt_dir},
          {"timing", c.timing},
          {"train_missing", c.train_missing}};
}

inline std::string config_hash(const ExperimentConfig& cfg) {
  std::ostringstream hex;
  hex << std::hex << std::setfill('0') << std::setw(16) << fnv1a(config_to_json(cfg).dump());
  return hex.str();
}

// ---------------------------------------------------------------------------
// Metrics.

// RPM and CTR of a batch of outcomes: clicks simulated once per impression
// (every auction contributes k impressions), next to their variance-free
// closed forms.
struct RpmCtr {
  double rpm = 0.0, ctr = 0.0;
  double rpm_expected = 0.0, ctr_expected = 0.0;
  long long impressions = 0;
  long long clicks = 0;
};

using ClickSim = std::function<std::vector<int>(const std::vector<double>&, Rng&)>;

inline RpmCtr metric_rpm_ctr(const std::vector<core::Outcome>& outcomes,
                             const ClickSim& click_sim, Rng& rng) {
  RpmCtr m;
  double paid = 0.0, paid_expected = 0.0, clicks_expected = 0.0;
  for (const auto& o : outcomes) {
    std::vector<int> y = click_sim(o.ctrs, rng);
    for (std::size_t t = 0; t < o.ctrs.size(); ++t) {
      ++m.impressions;
      m.clicks += y[t];
      paid += y[t] ? o.payments[t] : 0.0;
      paid_expected += o.payments[t] * o.ctrs[t];
      clicks_expected += o.ctrs[t];
    }
  }
  if (m.impressions == 0) return m;
  m.rpm = paid / double(m.impressions) * 1000.0;
  m.ctr = double(m.clicks) / double(m.impressions);
  m.rpm_expected = paid_expected / double(m.impressions) * 1000.0;
  m.ctr_expected = clicks_expected / double(m.impressions);
  return m;
}

inline RpmCtr metric_rpm_ctr(const std::vector<core::Outcome>& outcomes, Rng& rng) {
  return metric_rpm_ctr(
      outcomes, [](const std::vector<double>& theta, Rng& r) {
        return worldsim::sample_clicks(theta, r);
      },
      rng);
}

// Mean relative utility gain over the misreport grid: the per-instance regret
// scan sums rgt/u across winning slots, and slots whose truthful utility sits
// below the floor are counted instead of divided by.
struct PsiSummary {
  double psi = 0.0;
  long long skipped = 0;
  long long profiles = 0;
};

inline PsiSummary ic_metric_psi(const oracle::Mechanism& mech,
                                const std::vector<AuctionInstance>& instances,
                                const cga::RegretOptions& opt, std::uint64_t seed) {
  PsiSummary out;
  double psi_sum = 0.0;
  for (const auto& inst : instances) {
    Rng rng(seed, stream_id("psi", std::uint64_t(inst.id)));
    cga::RegretSummary rs = cga::empirical_regret(inst, mech, opt, rng);
    psi_sum += rs.psi_sum;
    out.skipped += rs.skipped;
    out.profiles += rs.profiles;
  }
  if (out.profiles > 0) out.psi = psi_sum / double(out.profiles);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints and the staged training pipeline.

inline std::string ckpt_prefix(const ExperimentConfig& cfg, const std::string& name) {
  return cfg.ckpt_dir + "/" + name + "_";
}

inline bool has_checkpoint(const std::string& prefix) {
  for (const char* part : {"trunk", "gen", "eval", "pay"})
    if (!std::filesystem::exists(prefix + part + ".json")) return false;
  return true;
}

inline cga::PctrFn world_pctr_fn(const worldsim::WorldModel& world) {
  return [world](const MechanismView& v) { return world.pctr(v); };
}

inline cga::CgaConfig variant_config(const std::string& name, const ExperimentConfig& cfg) {
  cga::CgaConfig vcfg;
  if (!cga_variant_flags(name, vcfg))
    throw ConfigError("config: '" + name + "' is not a cga variant");
  vcfg.d_a = cfg.world.d_a;
  vcfg.d_u = cfg.world.d_u;
  return vcfg;
}

inline std::uint64_t variant_seed(const std::string& name, const ExperimentConfig& cfg) {
  return cfg.eval.seed ^ stream_id(name);
}

// The full pipeline of one variant in memory: evaluator (unless ablated),
// then decoder, then payment head.
inline cga::CgaModel train_variant(const std::string& name, const ExperimentConfig& cfg,
                                   const worldsim::WorldModel& world,
                                   const worldsim::Dataset& data) {
  cga::CgaConfig vcfg = variant_config(name, cfg);
  std::uint64_t seed = variant_seed(name, cfg);
  cga::CgaModel m = cga::make_model(vcfg, cfg.world.k, seed);
  cga::PctrFn pctr = world_pctr_fn(world);
  if (vcfg.use_evaluator)
    cga::evaluator_train(m, data, 0, int(data.log.size()), cfg.train.evaluator_epochs,
                         cfg.train.lr, cfg.train.batch);
  cga::generator_train(m, data.instances, pctr, cfg.world.pos_decay, cfg.train.generator_epochs,
                       cfg.train.lr, cfg.train.batch, seed, cfg.train.entropy_bonus);
  cga::TrainState st;
  st.rho = cfg.train.rho;
  st.grid = cfg.train.grid;
  cga::paymentnet_train(m, data.instances, pctr, cfg.world.pos_decay, st,
                        cfg.train.payment_epochs, cfg.train.lr, cfg.train.batch, seed);
  return m;
}

// One stage of the pipeline against the checkpoint on disk; this is what the
// CLI's train subcommand does. The first applicable stage starts from the
// seeded init, later stages refuse to run without their predecessor's bytes.
inline void train_stage(const std::string& stage, const std::string& name,
                        const ExperimentConfig& cfg, const worldsim::WorldModel& world,
                        const worldsim::Dataset& data) {
  cga::CgaConfig vcfg = variant_config(name, cfg);
  std::uint64_t seed = variant_seed(name, cfg);
  std::string prefix = ckpt_prefix(cfg, name);
  std::filesystem::create_directories(cfg.ckpt_dir);
  if (stage != "evaluator" && stage != "generator" && stage != "payment")
    throw ConfigError("train: unknown stage '" + stage +
                      "' (expected evaluator, generator, or payment)");
  if (stage == "evaluator" && !vcfg.use_evaluator)
    throw ConfigError("train: variant '" + name + "' has no evaluator stage");
  cga::CgaModel m = cga::make_model(vcfg, cfg.world.k, seed);
  const std::string first = vcfg.use_evaluator ? "evaluator" : "generator";
  if (stage != first) {
    if (!has_checkpoint(prefix))
      throw ConfigError("train: stage '" + stage + "' of '" + name + "' needs " + prefix +
                        "{trunk,gen,eval,pay}.json; run the earlier stages first");
    cga::load_model(m, prefix);
  }
  cga::PctrFn pctr = world_pctr_fn(world);
  if (stage == "evaluator") {
    cga::evaluator_train(m, data, 0, int(data.log.size()), cfg.train.evaluator_epochs,
                         cfg.train.lr, cfg.train.batch);
  } else if (stage == "generator") {
    cga::generator_train(m, data.instances, pctr, cfg.world.pos_decay,
                         cfg.train.generator_epochs, cfg.train.lr, cfg.train.batch, seed,
                         cfg.train.entropy_bonus);
  } else {
    cga::TrainState st;
    st.rho = cfg.train.rho;
    st.grid = cfg.train.grid;
    cga::paymentnet_train(m, data.instances, pctr, cfg.world.pos_decay, st,
                          cfg.train.payment_epochs, cfg.train.lr, cfg.train.batch, seed);
  }
  cga::save_model(m, prefix);
}

inline void check_checkpoint_shapes(const neural::ParamStore& fresh,
                                    const neural::ParamStore& loaded, const std::string& file) {
  auto complain = [&](const std::string& tensor) {
    throw ConfigError("checkpoint " + file + " does not match the configured architecture (" +
                      tensor + "); retrain or fix the config");
  };
  if (fresh.entries.size() != loaded.entries.size()) complain("tensor set differs");
  auto a = fresh.entries.begin();
  auto b = loaded.entries.begin();
  for (; a != fresh.entries.end(); ++a, ++b) {
    if (a->first != b->first) complain(a->first + " vs " + b->first);
    if (a->second.value.rows != b->second.value.rows ||
        a->second.value.cols != b->second.value.cols)
      complain(a->first);
  }
}

inline cga::CgaModel load_variant(const std::string& name, const ExperimentConfig& cfg) {
  cga::CgaConfig vcfg = variant_config(name, cfg);
  std::string prefix = ckpt_prefix(cfg, name);
  if (!has_checkpoint(prefix))
    throw ConfigError("eval: missing checkpoint " + prefix +
                      "{trunk,gen,eval,pay}.json for '" + name +
                      "'; train it first or leave train_missing on");
  cga::CgaModel fresh = cga::make_model(vcfg, cfg.world.k, variant_seed(name, cfg));
  cga::CgaModel m = fresh;
  cga::load_model(m, prefix);
  check_checkpoint_shapes(fresh.trunk, m.trunk, prefix + "trunk.json");
  check_checkpoint_shapes(fresh.gen, m.gen, prefix + "gen.json");
  check_checkpoint_shapes(fresh.eval, m.eval, prefix + "eval.json");
  check_checkpoint_shapes(fresh.pay, m.pay, prefix + "pay.json");
  return m;
}

// Trains whichever requested variants have no checkpoint yet; the rest are
// reused as-is so reruns skip straight to evaluation.
inline void ensure_checkpoints(const ExperimentConfig& cfg, const worldsim::WorldModel& world) {
  std::vector<std::string> needed;
  cga::CgaConfig probe;
  for (const auto& name : cfg.mechanisms)
    if (cga_variant_flags(name, probe) && !has_checkpoint(ckpt_prefix(cfg, name)))
      needed.push_back(name);
  if (needed.empty()) return;
  if (!cfg.train_missing) {
    std::string list;
    for (const auto& name : needed) list += (list.empty() ? "" : ", ") + name;
    throw ConfigError("eval: missing checkpoints for " + list +
                      " under '" + cfg.ckpt_dir + "' and train_missing is off");
  }
  std::filesystem::create_directories(cfg.ckpt_dir);
  worldsim::Dataset data = world.gen_dataset(cfg.eval.train_auctions);
  for (const auto& name : needed)
    cga::save_model(train_variant(name, cfg, world, data), ckpt_prefix(cfg, name));
}

// ---------------------------------------------------------------------------
// Evaluation and reports.

// Held-out auctions live far above the training id range, so their features,
// values, and predictor noise come from disjoint streams.
inline constexpr int kEvalIdOffset = 1'000'000;

inline std::vector<AuctionInstance> eval_instances(const ExperimentConfig& cfg,
                                                   const worldsim::WorldModel& world) {
  std::vector<AuctionInstance> out;
  out.reserve(std::size_t(cfg.eval.eval_auctions));
  for (int j = 0; j < cfg.eval.eval_auctions; ++j)
    out.push_back(world.gen_instance(kEvalIdOffset + j));
  return out;
}

inline oracle::Mechanism build_mechanism(const std::string& name, const ExperimentConfig& cfg,
                                         const worldsim::WorldModel& world) {
  oracle::CtrOracle truth = oracle::make_true_ctr_oracle(world);
  if (name == "gsp") return oracle::make_gsp_mechanism(world_pctr_fn(world), truth);
  if (name == "vcg") return oracle::make_vcg_mechanism(truth);
  if (name == "optimal") return oracle::make_optimal_mechanism(truth, cfg.train.S, cfg.eval.seed);
  auto model = std::make_shared<cga::CgaModel>(load_variant(name, cfg));
  return cga::make_cga_mechanism(std::move(model), world_pctr_fn(world), cfg.world.pos_decay,
                                 truth);
}

struct MechanismReport {
  std::string mechanism;
  double rpm = 0.0;
  double ctr = 0.0;
  double psi = 0.0;
  long long psi_skipped = 0;
  double runtime_ms = 0.0;       // mean per auction; zero unless timing is on
  std::vector<double> slot_ctr;  // mean CTR per slot over the held-out set
};

struct Report {
  std::vector<MechanismReport> rows;
  std::uint64_t seed = 0;
  std::string config_hash;
  int k = 0;
};

inline MechanismReport evaluate_mechanism(const std::string& name, const oracle::Mechanism& mech,
                                          const std::vector<AuctionInstance>& instances,
                                          const ExperimentConfig& cfg) {
  MechanismReport row;
  row.mechanism = name;

  std::vector<core::Outcome> outcomes;
  outcomes.reserve(instances.size());
  auto started = std::chrono::steady_clock::now();
  for (const auto& inst : instances) outcomes.push_back(mech.run(MechanismView(inst)).outcome);
  if (cfg.timing) {
    auto elapsed = std::chrono::steady_clock::now() - started;
    row.runtime_ms =
        std::chrono::duration<double, std::milli>(elapsed).count() / double(instances.size());
  }

  Rng clicks(cfg.eval.seed, stream_id("click-sim-" + name));
  RpmCtr m = metric_rpm_ctr(outcomes, clicks);
  row.rpm = m.rpm;
  row.ctr = m.ctr;

  row.slot_ctr.assign(std::size_t(cfg.world.k), 0.0);
  for (const auto& o : outcomes)
    for (std::size_t t = 0; t < o.ctrs.size(); ++t) row.slot_ctr[t] += o.ctrs[t];
  for (double& c : row.slot_ctr) c /= double(instances.size());

  cga::RegretOptions opt;
  opt.grid = cfg.train.grid;
  opt.L = cfg.eval.L;
  std::vector<AuctionInstance> subset(
      instances.begin(),
      instances.begin() +
          std::min(instances.size(), std::size_t(cfg.eval.psi_instances)));
  PsiSummary psi = ic_metric_psi(mech, subset, opt, cfg.eval.seed);
  row.psi = psi.psi;
  row.psi_skipped = psi.skipped;
  return row;
}

// gen, train whatever is missing, evaluate every requested mechanism on the
// same held-out auctions. Mechanisms are always rebuilt from checkpoint bytes
// so a fresh run and a rerun see identical models.
inline Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  worldsim::WorldModel world(cfg.world);
  ensure_checkpoints(cfg, world);
  std::vector<AuctionInstance> held = eval_instances(cfg, world);
  Report rep;
  rep.seed = cfg.eval.seed;
  rep.config_hash = config_hash(cfg);
  rep.k = cfg.world.k;
  for (const auto& name : cfg.mechanisms)
    rep.rows.push_back(evaluate_mechanism(name, build_mechanism(name, cfg, world), held, cfg));
  return rep;
}

// Round-trippable decimal text so CSV consumers see the same doubles the
// JSON mirror carries.
inline std::string fmt_double(double x) {
  std::ostringstream s;
  s << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
  return s.str();
}

inline void emit_csv(const Report& rep, std::ostream& out) {
  out << "mechanism,rpm,ctr,psi,psi_skipped,runtime_ms,seed,config_hash\n";
  for (const auto& r : rep.rows)
    out << r.mechanism << ',' << fmt_double(r.rpm) << ',' << fmt_double(r.ctr) << ','
        << fmt_double(r.psi) << ',' << r.psi_skipped << ',' << fmt_double(r.runtime_ms) << ','
        << rep.seed << ',' << rep.config_hash << "\n";
}

inline nlohmann::json report_to_json(const Report& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"mechanism", r.mechanism},
                    {"rpm", r.rpm},
                    {"ctr", r.ctr},
                    {"psi", r.psi},
                    {"psi_skipped", r.psi_skipped},
                    {"runtime_ms", r.runtime_ms},
                    {"slot_ctr", r.slot_ctr}});
  return {{"seed", rep.seed},
          {"config_hash", rep.config_hash},
          {"k", rep.k},
          {"mechanisms", rows}};
}

inline void emit_report(const Report& rep, const std::string& format, std::ostream& out) {
  if (format == "csv") {
    emit_csv(rep, out);
  } else if (format == "json") {
    out << report_to_json(rep).dump(2) << "\n";
  } else {
    throw std::invalid_argument("emit_report: format must be csv or json");
  }
}

inline void emit_report(const Report& rep, const std::string& format, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_report: cannot open " + path);
  emit_report(rep, format, out);
}

// Plot-ready companion: one row per (mechanism, slot) with the mean CTR.
inline void emit_slot_ctr(const Report& rep, std::ostream& out) {
  out << "mechanism,slot,mean_ctr\n";
  for (const auto& r : rep.rows)
    for (std::size_t t = 0; t < r.slot_ctr.size(); ++t)
      out << r.mechanism << ',' << t << ',' << fmt_double(r.slot_ctr[t]) << "\n";
}

inline void emit_slot_ctr(const Report& rep, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_slot_ctr: cannot open " + path);
  emit_slot_ctr(rep, out);
}

}  // namespace aforge::harness
