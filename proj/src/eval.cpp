#include "popinterp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "popinterp/errors.hpp"

namespace popinterp {

double log_mean_exp(std::span<const double> x) {
  if (x.empty()) throw DomainError("log-mean-exp of an empty sequence");
  const double hi = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double v : x) s += std::exp(v - hi);
  return hi + std::log(s / static_cast<double>(x.size()));
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) throw DomainError("sample variance needs at least two values");
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

WaicTerm waic_term(std::span<const double> loglik_draws) {
  if (loglik_draws.size() < 2) throw DomainError("WAIC needs at least two draws");
  WaicTerm t;
  // Any zero-likelihood draw makes the variance term infinite.
  if (std::any_of(loglik_draws.begin(), loglik_draws.end(),
                  [](double v) { return v == -std::numeric_limits<double>::infinity(); })) {
    t.degenerate = true;
    t.value = t.log_mean_exp = -std::numeric_limits<double>::infinity();
    return t;
  }
  t.log_mean_exp = log_mean_exp(loglik_draws);
  t.variance = sample_variance(loglik_draws);
  t.value = t.log_mean_exp - t.variance;
  return t;
}

double waic_pointwise(std::span<const double> loglik_draws) {
  return waic_term(loglik_draws).value;
}

const WaicGroup* WaicReport::find(const std::string& type) const {
  for (const auto& g : groups) {
    if (g.type == type) return &g;
  }
  return nullptr;
}

WaicReport waic_by_type(std::span<const WaicObservation> observations) {
  WaicReport rep;
  std::map<std::string, std::size_t> index;
  for (const auto& obs : observations) {
    auto [it, added] = index.try_emplace(obs.type, rep.groups.size());
    if (added) rep.groups.push_back(WaicGroup{.type = obs.type, .pointwise = {}});
    auto& g = rep.groups[it->second];
    if (!obs.loglik_draws) {
      ++g.excluded;
      continue;
    }
    const auto t = waic_term(*obs.loglik_draws);
    g.pointwise.push_back({obs.geo_id, t.value, t.degenerate});
  }
  for (auto& g : rep.groups) {
    std::vector<double> v;
    for (const auto& p : g.pointwise) v.push_back(p.value);
    g.waic_sum = 0.0;
    for (double x : v) g.waic_sum += x;
    g.se = v.size() < 2 ? 0.0 : std::sqrt(static_cast<double>(v.size()) * sample_variance(v));
  }
  return rep;
}

std::vector<double> loglik_draws(std::span<const PiecewiseDensity> densities,
                                 const EstimateRecord& record) {
  std::vector<double> out;
  out.reserve(densities.size());
  for (const auto& d : densities) out.push_back(loglik_record(d, record));
  return out;
}

std::vector<double> loglik_draws(std::span<const double> predicted, double value, double se) {
  if (!(se > 0.0)) throw DomainError("standard error must be positive");
  std::vector<double> out;
  out.reserve(predicted.size());
  for (double p : predicted) {
    out.push_back(std::isfinite(p) ? gaussian_log_pdf(value, p, se)
                                   : -std::numeric_limits<double>::infinity());
  }
  return out;
}

Metrics metrics(std::span<const double> estimates, std::span<const double> truths) {
  if (estimates.size() != truths.size()) throw DomainError("estimates and truths differ in length");
  if (estimates.empty()) throw DomainError("metrics of an empty sequence");
  Metrics m;
  m.n = estimates.size();
  double se = 0.0, ae = 0.0, spe = 0.0, ape = 0.0;
  std::size_t np = 0;
  for (std::size_t i = 0; i < m.n; ++i) {
    const double e = estimates[i] - truths[i];
    se += e * e;
    ae += std::abs(e);
    if (truths[i] == 0.0) {
      ++m.zero_truths;
      continue;
    }
    const double pe = 100.0 * e / truths[i];
    spe += pe * pe;
    ape += std::abs(pe);
    ++np;
  }
  m.rmse = std::sqrt(se / static_cast<double>(m.n));
  m.mad = ae / static_cast<double>(m.n);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.rmspe = np ? std::sqrt(spe / static_cast<double>(np)) : nan;
  m.mape = np ? ape / static_cast<double>(np) : nan;
  return m;
}

double coverage(std::span<const double> lower, std::span<const double> upper,
                std::span<const double> truths) {
  if (lower.size() != truths.size() || upper.size() != truths.size()) {
    throw DomainError("interval and truth sequences differ in length");
  }
  if (truths.empty()) throw DomainError("coverage of an empty sequence");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (lower[i] <= truths[i] && truths[i] <= upper[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

}  // namespace popinterp
