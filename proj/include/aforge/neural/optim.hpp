#pragma once
// Named parameter tensors with gradient slots, bias-corrected Adam, and a
// versioned JSON checkpoint format ("AFORGE1").

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "aforge/neural/tape.hpp"
#include "aforge/rng.hpp"

namespace aforge::neural {

struct ParamStore {
  struct Entry {
    Mat value;
    Mat grad;
    Mat m, v;  // Adam moments
  };

  std::map<std::string, Entry> entries;  // ordered: iteration is deterministic
  long long step = 0;

  bool has(const std::string& name) const { return entries.count(name) > 0; }

  Entry& entry(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }

  Mat& get(const std::string& name) { return entry(name).value; }
  const Mat& get(const std::string& name) const { return entry(name).value; }

  // Create a parameter filled by init; re-creating an existing name is a
  // wiring bug, so it throws.
  Mat& create(const std::string& name, int rows, int cols,
              const std::function<double()>& init) {
    if (has(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    Entry e{Mat(rows, cols), Mat(rows, cols), Mat(rows, cols), Mat(rows, cols)};
    for (auto& w : e.value.data) w = init();
    return entries.emplace(name, std::move(e)).first->second.value;
  }

  Mat& create_uniform(const std::string& name, int rows, int cols, int fan_in, Rng& rng) {
    double s = 1.0 / std::sqrt(double(fan_in));
    return create(name, rows, cols, [&] { return rng.uniform(-s, s); });
  }

  Mat& create_zeros(const std::string& name, int rows, int cols) {
    return create(name, rows, cols, [] { return 0.0; });
  }

  Mat& create_const(const std::string& name, int rows, int cols, double fill) {
    return create(name, rows, cols, [fill] { return fill; });
  }

  void zero_grads() {
    for (auto& [name, e] : entries)
      for (auto& g : e.grad.data) g = 0.0;
  }

  // Bias-corrected Adam over every entry; gradients are cleared afterward.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    ++step;
    double c1 = 1.0 - std::pow(beta1, double(step));
    double c2 = 1.0 - std::pow(beta2, double(step));
    for (auto& [name, e] : entries) {
      for (std::size_t s = 0; s < e.value.size(); ++s) {
        double g = e.grad.data[s];
        e.m.data[s] = beta1 * e.m.data[s] + (1.0 - beta1) * g;
        e.v.data[s] = beta2 * e.v.data[s] + (1.0 - beta2) * g * g;
        double mhat = e.m.data[s] / c1;
        double vhat = e.v.data[s] / c2;
        e.value.data[s] -= lr * mhat / (std::sqrt(vhat) + eps);
        e.grad.data[s] = 0.0;
      }
    }
  }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries) n += e.value.size();
    return n;
  }

  nlohmann::json to_json() const {
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, e] : entries)
      tensors[name] = {{"shape", {e.value.rows, e.value.cols}}, {"data", e.value.data}};
    return {{"magic", "AFORGE1"}, {"tensors", tensors}};
  }

  // Replaces the store's contents; optimizer state starts fresh.
  void from_json(const nlohmann::json& j) {
    if (!j.contains("magic") || j.at("magic").get<std::string>() != "AFORGE1")
      throw std::runtime_error("checkpoint: missing or wrong magic header (want AFORGE1)");
    entries.clear();
    step = 0;
    for (const auto& [name, tj] : j.at("tensors").items()) {
      int r = tj.at("shape").at(0).get<int>(), c = tj.at("shape").at(1).get<int>();
      Entry e{Mat(r, c), Mat(r, c), Mat(r, c), Mat(r, c)};
      e.value.data = tj.at("data").get<std::vector<double>>();
      if (e.value.data.size() != std::size_t(r) * std::size_t(c))
        throw std::runtime_error("checkpoint: tensor " + name + " has inconsistent shape");
      entries.emplace(name, std::move(e));
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out << to_json().dump();
  }

  void load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    nlohmann::json j;
    in >> j;
    from_json(j);
  }
};

// Bridges a ParamStore into a tape: the first use of each parameter in a
// forward pass creates one leaf, later uses share it. After backward(),
// flush_grads() adds the leaf gradients back into the store (skipped when
// the store is bound frozen, e.g. the Evaluator during Generator training).
struct BoundParams {
  Tape* tape;
  ParamStore* store;
  bool trainable = true;
  std::map<std::string, Var> bound;

  BoundParams(Tape& t, ParamStore& s, bool train = true)
      : tape(&t), store(&s), trainable(train) {}

  // Read-only binding: a const store can only ever be frozen.
  BoundParams(Tape& t, const ParamStore& s)
      : tape(&t), store(const_cast<ParamStore*>(&s)), trainable(false) {}

  Var operator[](const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    Var v = tape->leaf(store->get(name));
    bound.emplace(name, v);
    return v;
  }

  void flush_grads() {
    if (!trainable) return;
    for (auto& [name, var] : bound) {
      Mat& dst = store->entry(name).grad;
      const Mat& src = var.grad();
      for (std::size_t s = 0; s < dst.size(); ++s) dst.data[s] += src.data[s];
    }
  }
};

}  // namespace aforge::neural
