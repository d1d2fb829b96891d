#pragma once
// Value distributions (uniform, exponential), sampling, and virtual values,
// including the generic ironing path over the quantile-space revenue curve.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "aforge/rng.hpp"

namespace aforge::valuation {

enum class DistKind { Uniform, Exponential };

struct ValueDistribution {
  DistKind kind = DistKind::Uniform;
  double lo = 0.0, hi = 1.0;  // Uniform support
  double rate = 1.0;          // Exponential rate

  static ValueDistribution uniform(double lo, double hi) {
    if (!(lo < hi) || lo < 0.0)
      throw std::invalid_argument("ValueDistribution: uniform requires 0 <= lo < hi");
    ValueDistribution d;
    d.kind = DistKind::Uniform;
    d.lo = lo;
    d.hi = hi;
    return d;
  }

  static ValueDistribution exponential(double rate) {
    if (!(rate > 0.0))
      throw std::invalid_argument("ValueDistribution: exponential requires rate > 0");
    ValueDistribution d;
    d.kind = DistKind::Exponential;
    d.rate = rate;
    return d;
  }

  double support_lo() const { return kind == DistKind::Uniform ? lo : 0.0; }
  double support_hi() const {
    return kind == DistKind::Uniform ? hi : std::numeric_limits<double>::infinity();
  }

  // F^{-1}(p), p in [0, 1)
  double quantile(double p) const {
    if (kind == DistKind::Uniform) return lo + p * (hi - lo);
    return -std::log1p(-p) / rate;
  }
};

struct DistEval {
  double pdf = 0.0, cdf = 0.0;
};

inline DistEval dist_eval(const ValueDistribution& d, double v) {
  if (v < 0.0) throw std::invalid_argument("dist_eval: v must be nonnegative");
  if (d.kind == DistKind::Uniform) {
    if (v < d.lo) return {0.0, 0.0};
    if (v > d.hi) return {0.0, 1.0};
    return {1.0 / (d.hi - d.lo), (v - d.lo) / (d.hi - d.lo)};
  }
  return {d.rate * std::exp(-d.rate * v), 1.0 - std::exp(-d.rate * v)};
}

inline double sample(const ValueDistribution& d, Rng& rng) {
  return d.quantile(rng.uniform());
}

// phi(v) = v - (1 - F(v)) / f(v); both supported families are regular.
// Errors outside the support per the operation contract.
inline double virtual_value(const ValueDistribution& d, double v) {
  if (d.kind == DistKind::Uniform) {
    if (v < d.lo || v > d.hi)
      throw std::domain_error("virtual_value: v outside uniform support");
    return 2.0 * v - d.hi;
  }
  if (v < 0.0) throw std::domain_error("virtual_value: v outside exponential support");
  return v - 1.0 / d.rate;
}

// Monotone continuation of phi for bid queries outside the support
// (misreport grids go up to 2x the bid). Identical to virtual_value inside.
inline double virtual_value_ext(const ValueDistribution& d, double v) {
  if (d.kind == DistKind::Uniform) return v <= d.hi ? 2.0 * v - d.hi : v;
  return v - 1.0 / d.rate;
}

struct IronedCurve {
  std::vector<double> grid;        // quantiles q_m = 1 - F(v_m); values ascend along m
  std::vector<double> values;      // v_m at each grid point, ascending
  std::vector<double> phi_values;  // hull slope at q_m, nondecreasing along m

  // piecewise-linear interpolation in value space
  double phi_at(double v) const {
    if (v <= values.front()) return phi_values.front();
    if (v >= values.back()) return phi_values.back();
    auto it = std::upper_bound(values.begin(), values.end(), v);
    std::size_t j = std::size_t(it - values.begin());
    double t = (v - values[j - 1]) / (values[j] - values[j - 1]);
    return phi_values[j - 1] + t * (phi_values[j] - phi_values[j - 1]);
  }
};

// Discretize the revenue curve R(q) = q * F^{-1}(1 - q), take its concave
// hull, and read phi as the hull slope. The hull itself is built on a
// geometric-in-q refinement of the M-point output grid; chord slopes on the
// coarse grid alone are too crude near the exponential tail.
inline IronedCurve iron_curve(const ValueDistribution& d, int M) {
  if (M < 2) throw std::invalid_argument("iron_curve: M must be >= 2");
  const bool expo = d.kind == DistKind::Exponential;
  const double p_cap = expo ? 0.9999 : 1.0;  // tail truncation for unbounded support
  const double q_min = expo ? 1.0 - p_cap : 1e-7;

  const int fine = std::max(4096, 64 * M);
  std::vector<double> qs, rs;
  qs.reserve(std::size_t(fine) + 1);
  rs.reserve(std::size_t(fine) + 1);
  if (!expo) {  // bounded support reaches q = 0 with R = 0
    qs.push_back(0.0);
    rs.push_back(0.0);
  }
  const double lratio = std::log(1.0 / q_min);
  for (int j = 0; j < fine; ++j) {
    double q = j + 1 == fine ? 1.0 : q_min * std::exp(lratio * double(j) / double(fine - 1));
    qs.push_back(q);
    rs.push_back(q * d.quantile(1.0 - q));
  }

  // upper concave hull, monotone chain over ascending q
  std::vector<double> hx, hy;
  for (std::size_t j = 0; j < qs.size(); ++j) {
    while (hx.size() >= 2) {
      std::size_t m = hx.size();
      double cross = (hx[m - 1] - hx[m - 2]) * (rs[j] - hy[m - 2]) -
                     (hy[m - 1] - hy[m - 2]) * (qs[j] - hx[m - 2]);
      if (cross >= 0.0)
        hx.pop_back(), hy.pop_back();
      else
        break;
    }
    hx.push_back(qs[j]);
    hy.push_back(rs[j]);
  }

  auto hull_slope = [&](double q) {
    auto it = std::upper_bound(hx.begin(), hx.end(), q);
    std::size_t j = std::size_t(it - hx.begin());
    j = std::min(std::max<std::size_t>(j, 1), hx.size() - 1);
    return (hy[j] - hy[j - 1]) / (hx[j] - hx[j - 1]);
  };

  IronedCurve c;
  c.grid.resize(std::size_t(M));
  c.values.resize(std::size_t(M));
  c.phi_values.resize(std::size_t(M));
  for (int m = 0; m < M; ++m) {
    double p = p_cap * double(m) / double(M - 1);
    double q = 1.0 - p;
    c.grid[std::size_t(m)] = q;
    c.values[std::size_t(m)] = d.quantile(p);
    c.phi_values[std::size_t(m)] = hull_slope(q);
  }
  return c;
}

}  // namespace aforge::valuation
