#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popinterp/density.hpp"
#include "popinterp/eval.hpp"
#include "popinterp/predictive.hpp"
#include "popinterp/random.hpp"
#include "popinterp/sampler.hpp"

namespace popinterp {

// ---------------------------------------------------------------------------
// Reference microdata and world layout

struct Stratum {
  /// Reference sample size n_s.
  std::size_t sample_size;
  /// Survey weight w_s shared by every reference record of the stratum.
  double weight;
  /// Population n_s w_s (rounded to a whole number of households).
  std::size_t population;
};

struct ReferenceRecord {
  /// log(income + 1)
  double z;
  std::size_t stratum;
};

struct ReferencePums {
  std::vector<Stratum> strata;
  std::vector<ReferenceRecord> records;
};

struct ReferenceConfig {
  std::size_t strata = 40;
  std::size_t households = 20000;
  std::uint64_t seed = 1;
};

/// Synthetic stand-in for a PUMA's microdata: stratum sizes, weights scaled
/// so that sum n_s w_s == households, and log incomes with a stratum effect.
ReferencePums make_reference_pums(const ReferenceConfig& cfg);

struct Point {
  double x;
  double y;
};

/// Tract centroids on a widening spiral so distances from the center vary.
std::vector<Point> ring_layout(std::size_t tracts);

/// Distance of each centroid from the center of their bounding box.
std::vector<double> center_distances(std::span<const Point> centroids);

/// (v - mean) / sd with the n - 1 sd; all zeros when sd is 0.
std::vector<double> standardize(std::span<const double> v);

/// Splits `total` into `parts` positive integers summing to `total`, with
/// relative sizes 1 + spread * U(0, 1).
std::vector<std::size_t> split_total(std::size_t total, std::size_t parts, double spread, Rng& rng);

// ---------------------------------------------------------------------------
// Strata to tracts

struct AssignmentBlock {
  std::size_t tract;
  std::size_t stratum;
  std::size_t count;
};

/// For each tract in turn: while short of its target, pick a stratum with
/// remaining population uniformly at random and assign
/// min(stratum remaining, tract need) of it.
std::vector<AssignmentBlock> assign_strata(std::span<const std::size_t> tract_targets,
                                           std::span<const std::size_t> stratum_pops, Rng& rng);

// ---------------------------------------------------------------------------
// Income generation

struct StratumStats {
  double m_hat = 0.0;
  double s_hat = 0.0;
  std::vector<double> D;
  std::vector<double> H;
  /// Strata without reference records (D = 0, H = s_hat).
  std::vector<std::size_t> empty_strata;
};

StratumStats stratum_stats(const ReferencePums& ref);

struct MixtureParams {
  double omega;
  double mu1;
  double mu2;
  double sigma1;
  double sigma2;
};

MixtureParams mixture_params(double sdist, double W, double m_hat, double D, double H);

struct Household {
  std::size_t tract;
  std::size_t stratum;
  double income;
};

struct SyntheticWorld {
  std::vector<std::size_t> tract_targets;
  std::vector<Stratum> strata;
  std::vector<AssignmentBlock> assignment;
  std::vector<Household> households;
  std::vector<double> sdist;
  std::vector<double> W;
  StratumStats stats;

  std::size_t num_tracts() const { return tract_targets.size(); }
  std::size_t num_strata() const { return strata.size(); }
};

/// Draws incomes for every household of the assignment from the
/// two-component lognormal mixture of its (tract, stratum).
void generate_incomes(SyntheticWorld& world, const ReferencePums& ref, Rng& rng);

struct WorldConfig {
  std::size_t tracts = 5;
  std::size_t households = 20000;
  std::size_t strata = 40;
  /// Relative spread of tract sizes.
  double tract_spread = 0.5;
  std::optional<std::vector<Point>> centroids;
  std::uint64_t seed = 20181;
};

struct WorldBundle {
  ReferencePums reference;
  SyntheticWorld world;
};

WorldBundle make_world(const WorldConfig& cfg);

// ---------------------------------------------------------------------------
// Sampling and direct estimates

struct SampledHousehold {
  std::size_t household;
  std::size_t tract;
  std::size_t stratum;
  double income;
  double weight;
};

/// Per-stratum sample sizes proportional to reference sample sizes, with a
/// total of about fraction * population; each at least 1 and at most the
/// stratum population.
std::vector<std::size_t> proportional_allocation(const SyntheticWorld& world, double fraction);

/// Simple random sampling without replacement within each stratum. Design
/// weight = stratum population / stratum sample size.
std::vector<SampledHousehold> stratified_sample(const SyntheticWorld& world,
                                                std::span<const std::size_t> allocation, Rng& rng);

/// Hadamard matrix of order n (entries +-1) for n a power of two, n = q + 1
/// with q prime and q = 3 mod 4, or twice such an order.
std::vector<std::vector<int>> hadamard(std::size_t n);

/// Weighted type-1 quantile: smallest y with cumulative weight >= tau W.
double weighted_quantile(std::span<const double> sorted_y, std::span<const double> sorted_w,
                         double tau);
/// sum_ij w_i w_j |y_i - y_j| / (2 W^2 mean_w) on data sorted by y.
double weighted_gini(std::span<const double> sorted_y, std::span<const double> sorted_w);

struct DirectEstimate {
  double value = 0.0;
  double se = 0.0;
};

struct TractDirectEstimates {
  bool missing = false;
  std::size_t sample_size = 0;
  std::vector<DirectEstimate> bins;
  DirectEstimate mean;
  DirectEstimate median;
  /// Every fifth percentile, tau = 0.05, ..., 0.95.
  std::vector<DirectEstimate> percentiles;
  DirectEstimate gini;
};

struct DirectEstimateSet {
  std::vector<double> breaks;
  std::size_t replicates = 0;
  double fraction = 0.0;
  std::vector<TractDirectEstimates> tracts;
};

/// Weighted point estimates per tract, SEs by successive difference
/// replication. Sample unit i (in sample order) uses Hadamard rows
/// 1 + (i mod (R - 1)) and 1 + ((i + 1) mod (R - 1)); replicate weights are
/// w_i (1 + 2^{-3/2} (H[a][r] - H[b][r])) and SE^2 = (4 / R) sum_r (t_r - t)^2.
DirectEstimateSet direct_estimates_with_sdr(std::span<const SampledHousehold> sample,
                                            std::size_t tracts, std::span<const double> breaks,
                                            std::size_t replicates, double fraction = 0.0);

/// Finite-population truth for every tract.
struct TractTruth {
  std::size_t population = 0;
  std::vector<double> bins;
  double mean = 0.0;
  std::vector<double> percentiles;
  double gini = 0.0;
};
std::vector<TractTruth> population_truth(const SyntheticWorld& world,
                                         std::span<const double> breaks);

/// Knots 0 < 5k < ... < 200k used for the twelve bins.
std::vector<double> acs_income_breaks();

/// Bin shares of the reference incomes, weighted by stratum weights.
std::vector<double> reference_bin_shares(const ReferencePums& ref, std::span<const double> breaks);

// ---------------------------------------------------------------------------
// Simulation loop

struct SimulationConfig {
  std::size_t n_reps = 50;
  double fraction = 0.1;
  std::size_t replicates = 80;
  std::vector<double> breaks = acs_income_breaks();
  SamplerConfig sampler;
  /// Posterior draws used for predictive features (0 = all).
  std::size_t feature_draws = 0;
  double interval_level = 0.95;
  bool fit_model = true;
  std::uint64_t seed = 20181;
  /// Worker threads over (replication, tract) fits (0 = hardware).
  std::size_t threads = 0;
};

enum class Estimator { posterior_mean, posterior_median, prln, direct };
std::string estimator_name(Estimator e);
inline constexpr Estimator kEstimators[] = {Estimator::posterior_mean,
                                            Estimator::posterior_median, Estimator::prln,
                                            Estimator::direct};

/// Every fifth percentile then the Gini coefficient.
std::vector<Feature> simulation_features();

struct TractOutcome {
  std::size_t rep;
  std::size_t tract;
  bool fitted = false;
  std::string failure;
  /// estimates[estimator][feature]; NaN when unavailable.
  std::vector<std::vector<double>> estimates;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> truth;
  std::vector<double> direct_bins;
};

struct MetricRow {
  std::string metric;
  Estimator estimator;
  /// One value per feature.
  std::vector<double> values;
};

struct SimulationResult {
  std::vector<Feature> features;
  std::vector<TractOutcome> outcomes;
  std::vector<TractTruth> truth;
  /// Raw metrics pooled over replications and tracts.
  std::vector<MetricRow> metrics;
  /// 100 (metric - direct metric) / direct metric, non-direct estimators.
  std::vector<MetricRow> relative;
  /// Coverage of the credible intervals against truth and against PRLN.
  std::vector<double> coverage_truth;
  std::vector<double> coverage_prln;
  std::size_t failures = 0;
  std::size_t missing = 0;
};

/// Metric tables from outcomes (used by run_simulation; exposed for tests).
void tabulate(SimulationResult& result);

SimulationResult run_simulation(const SyntheticWorld& world, const ReferencePums& ref,
                                const SimulationConfig& cfg);

}  // namespace popinterp
