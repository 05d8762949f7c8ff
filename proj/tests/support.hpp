#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "popinterp/density.hpp"
#include "popinterp/functionals.hpp"
#include "popinterp/model.hpp"
#include "popinterp/random.hpp"

namespace testing_support {

using namespace popinterp;

inline std::vector<double> random_simplex(Rng& rng, std::size_t K, double floor = 0.0) {
  std::vector<double> p(K);
  double s = 0.0;
  for (auto& v : p) {
    v = -std::log(rng.uniform_open()) + floor;
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

/// Random density with 1..8 bins. Bounded support when `finite_support`,
/// otherwise an unbounded Pareto top bin with alpha in (2.5, 6).
inline PiecewiseDensity random_density(Rng& rng, bool finite_support) {
  const std::size_t K = 1 + rng.below(8);
  std::vector<double> knots{rng.uniform() < 0.3 ? 0.0 : 0.5 + 10.0 * rng.uniform()};
  const std::size_t n_finite = finite_support ? K + 1 : K;
  while (knots.size() < n_finite) knots.push_back(knots.back() + 0.2 + 20.0 * rng.uniform());
  KnotVector kv(knots, !finite_support);
  std::vector<BinFamily> fam;
  for (std::size_t k = 0; k < K; ++k) {
    if (kv.bin_is_unbounded(k)) {
      if (kv.lower(k) == 0.0) return random_density(rng, finite_support);
      fam.emplace_back(UnboundedPareto{2.5 + 3.5 * rng.uniform()});
    } else if (kv.lower(k) > 0.0 && rng.uniform() < 0.5) {
      fam.emplace_back(TruncatedPareto{0.2 + 4.0 * rng.uniform()});
    } else {
      fam.emplace_back(Uniform{});
    }
  }
  return PiecewiseDensity(kv, random_simplex(rng, K, 0.05), fam);
}

/// Adaptive Gauss-Kronrod over each finite bin of f(x) * pdf(x).
template <class F>
double integrate_bins(const PiecewiseDensity& d, F f) {
  double total = 0.0;
  const auto& kv = d.knots();
  for (std::size_t k = 0; k < d.num_bins(); ++k) {
    if (kv.bin_is_unbounded(k)) continue;
    const double a = kv.lower(k), b = kv.upper(k);
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double x) { return f(x) * d.pdf(x); }, a, b, 15, 1e-14);
  }
  return total;
}

/// The ACS household-income layout: breaks 10, 15, ..., 200 thousand.
inline std::vector<double> acs_breaks() {
  return {0, 10000, 15000, 25000, 35000, 50000, 75000, 100000, 150000, 200000};
}

inline std::vector<double> acs12_breaks() {
  return {0,     5000,  10000, 15000,  20000,  25000,
          35000, 50000, 75000, 100000, 150000, 200000};
}

/// PRLN-shaped truth on the 12-bin layout: uniform through [35k, 50k],
/// Pareto above with shapes in [1.2, 3].
inline PiecewiseDensity acs12_truth() {
  KnotVector kv(acs12_breaks(), true);
  std::vector<double> p{0.05, 0.06, 0.07, 0.07, 0.07, 0.13, 0.15, 0.17, 0.10, 0.08, 0.02, 0.03};
  std::vector<BinFamily> fam(7, Uniform{});
  fam.emplace_back(TruncatedPareto{1.2});
  fam.emplace_back(TruncatedPareto{1.8});
  fam.emplace_back(TruncatedPareto{2.4});
  fam.emplace_back(TruncatedPareto{3.0});
  fam.emplace_back(UnboundedPareto{2.2});
  return PiecewiseDensity(kv, p, fam);
}

/// Exact bin, mean and median records of `d`, each with se = rel * value
/// (floored at `floor_se`).
struct ExactRecords {
  std::vector<EstimateRecord> bins;
  EstimateRecord mean;
  EstimateRecord median;
};

inline ExactRecords exact_records(const PiecewiseDensity& d, double rel, double floor_se = 1e-4) {
  ExactRecords out;
  const auto& kv = d.knots();
  for (std::size_t k = 0; k < d.num_bins(); ++k) {
    const double v = d.probs()[k];
    out.bins.push_back({BinProportion{kv.lower(k), kv.upper(k)}, v, std::max(rel * v, floor_se)});
  }
  const double m = d.mean();
  out.mean = {MeanEstimate{}, m, rel * m};
  const double med = d.quantile(0.5);
  out.median = {QuantileEstimate{0.5}, med, rel * med};
  return out;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

/// Central differences of f at x with step h.
template <class F>
std::vector<double> central_diff(F f, std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double dn = f(x);
    x[i] = x0;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

}  // namespace testing_support
