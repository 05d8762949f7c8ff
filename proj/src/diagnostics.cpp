#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "popinterp/errors.hpp"
#include "popinterp/sampler.hpp"

namespace popinterp {

namespace {

using Chains = std::vector<std::vector<double>>;

Chains split(std::span<const std::vector<double>> chains) {
  Chains out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + half);
    out.emplace_back(c.end() - half, c.end());
  }
  return out;
}

// Pooled ranks with ties averaged, mapped through the normal quantile.
Chains rank_normalize(const Chains& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t i = 0; i < chains[c].size(); ++i) {
      pooled.emplace_back(chains[c][i], c * chains[0].size() + i);
    }
  }
  std::sort(pooled.begin(), pooled.end());
  const double S = static_cast<double>(pooled.size());
  std::vector<double> z(pooled.size());
  const boost::math::normal_distribution<double> std_normal;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    const double v = boost::math::quantile(std_normal, (rank - 0.375) / (S + 0.25));
    for (std::size_t k = i; k < j; ++k) z[pooled[k].second] = v;
    i = j;
  }
  Chains out(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    out[c].assign(z.begin() + c * chains[0].size(), z.begin() + (c + 1) * chains[0].size());
  }
  return out;
}

double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(const std::vector<double>& x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double rhat(const Chains& chains) {
  const double n = static_cast<double>(chains[0].size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean(c));
    vars.push_back(variance(c));
  }
  const double W = mean(vars);
  const double B_over_n = variance(means);
  if (W == 0.0) return B_over_n == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(((n - 1.0) / n * W + B_over_n) / W);
}

double autocov(const std::vector<double>& x, double m, std::size_t lag) {
  double s = 0.0;
  for (std::size_t i = 0; i + lag < x.size(); ++i) s += (x[i] - m) * (x[i + lag] - m);
  return s / static_cast<double>(x.size());
}

// Multi-chain ESS with Geyer's initial monotone sequence.
double ess(const Chains& chains) {
  const std::size_t M = chains.size();
  const std::size_t N = chains[0].size();
  std::vector<double> means(M), vars(M);
  for (std::size_t c = 0; c < M; ++c) {
    means[c] = mean(chains[c]);
    vars[c] = variance(chains[c]);
  }
  const double mean_var = mean(vars);
  double var_plus = mean_var * (static_cast<double>(N) - 1.0) / static_cast<double>(N);
  if (M > 1) var_plus += variance(means);
  if (var_plus == 0.0) return 0.0;

  auto rho_at = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < M; ++c) acov += autocov(chains[c], means[c], lag);
    acov /= static_cast<double>(M);
    return 1.0 - (mean_var - acov) / var_plus;
  };

  std::vector<double> rho(N + 1, 0.0);
  double rho_even = 1.0;
  double rho_odd = rho_at(1);
  rho[0] = rho_even;
  rho[1] = rho_odd;
  std::size_t s = 1;
  while (s + 4 < N && rho_even + rho_odd > 0.0) {
    rho_even = rho_at(s + 1);
    rho_odd = rho_at(s + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho[s + 1] = rho_even;
      rho[s + 2] = rho_odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (rho_even > 0.0) rho[max_s + 1] = rho_even;
  for (std::size_t t = 1; t + 3 <= max_s; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
  }
  const double total = static_cast<double>(M * N);
  double tau = -1.0 + rho[max_s + 1];
  for (std::size_t t = 0; t < max_s; ++t) tau += 2.0 * rho[t];
  tau = std::max(tau, 1.0 / std::log10(total));
  return std::min(total / tau, total * std::log10(total));
}

}  // namespace

ParameterDiagnostics diagnose(std::span<const std::vector<double>> chains) {
  if (chains.size() < 2) throw DiagnosticError("diagnostics need at least 2 chains");
  const std::size_t n = chains[0].size();
  if (n < 100) throw DiagnosticError("diagnostics need at least 100 draws per chain");
  for (const auto& c : chains) {
    if (c.size() != n) throw DiagnosticError("chains must have equal length");
    for (double v : c) {
      if (!std::isfinite(v)) throw DiagnosticError("draws must be finite");
    }
  }
  ParameterDiagnostics out;
  const double first = chains[0][0];
  const bool constant = std::all_of(chains.begin(), chains.end(), [&](const auto& c) {
    return std::all_of(c.begin(), c.end(), [&](double v) { return v == first; });
  });
  if (constant) {
    out.degenerate = true;
    return out;
  }

  const Chains halves = split(chains);
  const Chains z = rank_normalize(halves);

  std::vector<double> pooled;
  for (const auto& c : halves) pooled.insert(pooled.end(), c.begin(), c.end());
  std::nth_element(pooled.begin(), pooled.begin() + pooled.size() / 2, pooled.end());
  double med = pooled[pooled.size() / 2];
  if (pooled.size() % 2 == 0) {
    const double lo = *std::max_element(pooled.begin(), pooled.begin() + pooled.size() / 2);
    med = 0.5 * (med + lo);
  }
  Chains folded = halves;
  for (auto& c : folded) {
    for (double& v : c) v = std::abs(v - med);
  }
  out.rhat = std::max(rhat(z), rhat(rank_normalize(folded)));
  out.ess_bulk = ess(z);
  return out;
}

DiagnosticsReport diagnostics(const PosteriorDraws& pd) {
  DiagnosticsReport r;
  double accept = 0.0;
  std::size_t transitions = 0;
  for (const auto& c : pd.chains) {
    r.divergences_per_chain.push_back(c.divergences);
    r.step_sizes.push_back(c.step_size);
    accept += std::accumulate(c.accept_stat.begin(), c.accept_stat.end(), 0.0);
    transitions += c.accept_stat.size();
  }
  if (transitions > 0) {
    r.mean_accept_stat = accept / static_cast<double>(transitions);
    r.divergence_rate = static_cast<double>(pd.divergences()) / static_cast<double>(transitions);
  }
  r.high_divergence = r.divergence_rate > 0.10;
  r.min_ess_bulk = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pd.dimension; ++k) {
    const auto chains = pd.coordinate(k);
    r.parameters.push_back(diagnose(chains));
    const auto& p = r.parameters.back();
    if (p.degenerate) continue;
    r.max_rhat = std::max(r.max_rhat, p.rhat);
    r.min_ess_bulk = std::min(r.min_ess_bulk, p.ess_bulk);
  }
  if (!std::isfinite(r.min_ess_bulk)) r.min_ess_bulk = 0.0;
  return r;
}

}  // namespace popinterp
