#include "popinterp/predictive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "popinterp/errors.hpp"
#include "popinterp/parallel.hpp"

namespace popinterp {

std::string feature_name(const Feature& f) {
  if (const auto* p = std::get_if<Percentile>(&f)) {
    std::ostringstream os;
    os << "p" << std::lround(p->tau * 1000) / 10.0;
    return os.str();
  }
  return std::holds_alternative<Gini>(f) ? "gini" : "mean";
}

std::vector<double> fifth_percentile_grid() {
  std::vector<double> taus;
  for (int i = 1; i < 20; ++i) taus.push_back(i / 20.0);
  return taus;
}

double sample_quantile(std::span<const double> sorted, double tau) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("sample quantile level must lie in (0, 1]");
  const double pos = std::ceil(static_cast<double>(sorted.size()) * tau);
  const auto idx = static_cast<std::size_t>(std::max(pos, 1.0)) - 1;
  return sorted[std::min(idx, sorted.size() - 1)];
}

double interpolated_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double gini_sorted(std::span<const double> sorted) {
  if (sorted.empty()) throw DomainError("Gini of an empty population");
  const double n = static_cast<double>(sorted.size());
  double total = 0.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    total += sorted[i];
    weighted += (2.0 * static_cast<double>(i + 1) - n - 1.0) * sorted[i];
  }
  if (!(total > 0.0)) throw UndefinedFeatureError("Gini coefficient of a zero-mean population");
  return weighted / (n * total);
}

double gini(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return gini_sorted(values);
}

double feature_value(const Feature& f, std::span<const double> sorted) {
  if (const auto* p = std::get_if<Percentile>(&f)) return sample_quantile(sorted, p->tau);
  if (std::holds_alternative<Gini>(f)) return gini_sorted(sorted);
  if (sorted.empty()) throw DomainError("mean of an empty population");
  return std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
}

std::vector<double> synthesize_population(const PiecewiseDensity& d, std::size_t N, Rng& rng) {
  if (N < 1) throw DomainError("population size must be at least 1");
  return d.sample(N, rng);
}

SizedPopulation size_uncertain_synthesis(const PiecewiseDensity& d, std::size_t N, double H,
                                         Rng& rng) {
  if (!(H >= 0.0)) throw DomainError("population size standard error must be non-negative");
  if (N < 1) throw DomainError("population size must be at least 1");
  SizedPopulation out;
  std::size_t size = N;
  if (H > 0.0) {
    const double eta = std::round(rng.normal(static_cast<double>(N), H));
    if (eta < 1.0) {
      out.floored = true;
      size = 1;
    } else {
      size = static_cast<std::size_t>(eta);
    }
  }
  out.values = d.sample(size, rng);
  return out;
}

FeatureSummary summarize(const Feature& f, std::span<const double> values, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("interval level must lie in (0, 1)");
  FeatureSummary s;
  s.feature = f;
  std::vector<double> finite;
  for (double v : values) {
    if (std::isfinite(v)) {
      finite.push_back(v);
    } else {
      ++s.excluded;
    }
  }
  s.draws = finite.size();
  if (finite.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean = s.median = s.lower = s.upper = nan;
    return s;
  }
  std::sort(finite.begin(), finite.end());
  // Sum in sorted order so the mean does not depend on draw order.
  s.mean = std::accumulate(finite.begin(), finite.end(), 0.0) / static_cast<double>(finite.size());
  s.median = interpolated_quantile(finite, 0.5);
  s.lower = interpolated_quantile(finite, 0.5 * (1.0 - level));
  s.upper = interpolated_quantile(finite, 0.5 * (1.0 + level));
  return s;
}

std::vector<std::size_t> select_draws(std::size_t total, std::size_t stride,
                                      std::size_t draws_used) {
  if (stride < 1) throw DomainError("draw stride must be at least 1");
  std::vector<std::size_t> idx;
  for (std::size_t m = 0; m < total; m += stride) idx.push_back(m);
  if (draws_used == 0 || draws_used >= idx.size()) {
    if (draws_used > idx.size()) throw DomainError("more draws requested than available");
    return idx;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < draws_used; ++i) out.push_back(idx[i * idx.size() / draws_used]);
  return out;
}

FeaturePosterior feature_posterior(std::span<const PiecewiseDensity> densities,
                                   const PopulationFeatureRequest& req) {
  if (req.features.empty()) throw DomainError("no features requested");
  for (const auto& f : req.features) {
    if (const auto* p = std::get_if<Percentile>(&f); p && !(p->tau > 0.0 && p->tau < 1.0)) {
      throw DomainError("percentile level must lie in (0, 1)");
    }
  }
  const std::size_t M = densities.size();
  const std::size_t F = req.features.size();
  const double H = req.size_se.value_or(0.0);
  FeaturePosterior out;
  out.draws = M;
  out.values.assign(F, std::vector<double>(M, std::numeric_limits<double>::quiet_NaN()));
  std::vector<unsigned char> floored(M, 0);

  parallel_for(
      M,
      [&](std::size_t m) {
        Rng rng(derive_seed(req.seed, m));
        auto pop = size_uncertain_synthesis(densities[m], req.population_size, H, rng);
        floored[m] = pop.floored ? 1 : 0;
        std::sort(pop.values.begin(), pop.values.end());
        for (std::size_t f = 0; f < F; ++f) {
          try {
            out.values[f][m] = feature_value(req.features[f], pop.values);
          } catch (const UndefinedFeatureError&) {
            // left as NaN and counted as excluded
          }
        }
      },
      req.threads);

  out.floored_sizes = static_cast<std::size_t>(std::count(floored.begin(), floored.end(), 1));
  for (std::size_t f = 0; f < F; ++f) {
    out.summaries.push_back(summarize(req.features[f], out.values[f], req.interval_level));
  }
  return out;
}

FeaturePosterior feature_posterior(const PosteriorDraws& pd, const ModelSpec& spec,
                                   const PopulationFeatureRequest& req) {
  const auto idx = select_draws(pd.total_draws(), req.stride, req.draws_used);
  std::vector<PiecewiseDensity> dens;
  dens.reserve(idx.size());
  for (std::size_t m : idx) dens.push_back(to_density(pd.draw(m), spec));
  return feature_posterior(dens, req);
}

}  // namespace popinterp
