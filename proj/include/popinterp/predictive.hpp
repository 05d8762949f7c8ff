#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "popinterp/density.hpp"
#include "popinterp/model.hpp"
#include "popinterp/random.hpp"
#include "popinterp/sampler.hpp"

namespace popinterp {

struct Percentile {
  double tau;
  bool operator==(const Percentile&) const = default;
};
struct PopulationMean {
  bool operator==(const PopulationMean&) const = default;
};
struct Gini {
  bool operator==(const Gini&) const = default;
};

using Feature = std::variant<Percentile, PopulationMean, Gini>;

std::string feature_name(const Feature& f);

/// Every fifth percentile 5, 10, ..., 95.
std::vector<double> fifth_percentile_grid();

/// Type-1 sample quantile of sorted data: y[ceil(n tau) - 1], tau in (0, 1].
double sample_quantile(std::span<const double> sorted, double tau);

/// Type-7 (linear interpolation) quantile of sorted data; used for
/// posterior interval endpoints across draws.
double interpolated_quantile(std::span<const double> sorted, double p);

/// G = sum_i (2i - n - 1) y_(i) / (n^2 mean) on sorted non-negative data.
/// Throws UndefinedFeatureError when the mean is zero.
double gini_sorted(std::span<const double> sorted);
double gini(std::vector<double> values);

/// Feature of a finite population given in sorted order.
double feature_value(const Feature& f, std::span<const double> sorted);

/// N i.i.d. draws from d (bin, then within-bin inverse CDF).
std::vector<double> synthesize_population(const PiecewiseDensity& d, std::size_t N, Rng& rng);

struct SizedPopulation {
  std::vector<double> values;
  /// The size draw was <= 0 and was replaced by 1.
  bool floored = false;
};

/// Draws eta ~ N(N, H^2), rounds to the nearest integer, floors at 1, then
/// synthesizes eta values. H = 0 consumes no extra randomness and reduces
/// exactly to synthesize_population.
SizedPopulation size_uncertain_synthesis(const PiecewiseDensity& d, std::size_t N, double H,
                                         Rng& rng);

struct PopulationFeatureRequest {
  std::vector<Feature> features;
  std::size_t population_size = 1000;
  /// Standard error H of the population size; unset or 0 treats N as known.
  std::optional<double> size_se;
  /// Number of posterior draws to use, evenly spaced; 0 = all (after stride).
  std::size_t draws_used = 0;
  std::size_t stride = 1;
  double interval_level = 0.95;
  std::uint64_t seed = 1;
  /// Worker threads over draws (0 = hardware concurrency).
  std::size_t threads = 0;
};

struct FeatureSummary {
  Feature feature;
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t draws = 0;
  /// Draws where the feature was undefined (e.g. Gini of all zeros).
  std::size_t excluded = 0;
};

struct FeaturePosterior {
  std::vector<FeatureSummary> summaries;
  /// values[f][m]: feature f on draw m's population (NaN when excluded).
  std::vector<std::vector<double>> values;
  std::size_t draws = 0;
  /// Population-size draws that were <= 0 and floored to 1.
  std::size_t floored_sizes = 0;
};

/// Posterior mean, median and central interval of finite values.
FeatureSummary summarize(const Feature& f, std::span<const double> values, double level);

/// Features over one synthetic population per density; draw m uses a
/// generator seeded by derive_seed(req.seed, m).
FeaturePosterior feature_posterior(std::span<const PiecewiseDensity> densities,
                                   const PopulationFeatureRequest& req);

/// Same, with densities taken from the selected posterior draws.
FeaturePosterior feature_posterior(const PosteriorDraws& pd, const ModelSpec& spec,
                                   const PopulationFeatureRequest& req);

/// Indices of the draws selected by stride and draws_used.
std::vector<std::size_t> select_draws(std::size_t total, std::size_t stride,
                                      std::size_t draws_used);

}  // namespace popinterp
