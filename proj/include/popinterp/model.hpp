#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "popinterp/density.hpp"
#include "popinterp/functionals.hpp"

namespace popinterp {

enum class FamilyKind { uniform, pareto };

/// Normal(location, scale^2) restricted to (lower, infinity).
struct AlphaPrior {
  double location = 2.0;
  double scale = 1.0;
  double lower = 1.0;
};

constexpr double kDefaultPriorScale = 0.1;

/// A single area's assembled model: knots at the published bin boundaries
/// (0 and +infinity at the ends), uniform bins through the median's bin and
/// Pareto bins above it, the records entering the likelihood, and the
/// Dirichlet/truncated-normal priors.
struct ModelSpec {
  KnotVector knots;
  std::vector<FamilyKind> families;
  std::size_t median_bin = 0;
  /// Bin and mean records, used as published (bins are not renormalized).
  std::vector<EstimateRecord> records;
  /// Quantile records in inverted form.
  std::vector<InvertedQuantileDatum> quantile_data;
  /// Prior center g (a simplex with strictly positive entries).
  std::vector<double> prior_center;
  double prior_scale = kDefaultPriorScale;
  AlphaPrior alpha_prior;

  std::size_t num_bins() const { return families.size(); }
  std::size_t num_pareto() const;
  /// Length of the flattened unconstrained parameter: (K - 1) + J.
  std::size_t dimension() const { return num_bins() - 1 + num_pareto(); }
  /// Pareto shape index for bin k, or nullopt for uniform bins.
  std::optional<std::size_t> alpha_index(std::size_t k) const;
  /// Number of terms in the likelihood (records plus inverted quantiles).
  std::size_t likelihood_terms() const { return records.size() + quantile_data.size(); }
};

struct BinLayout {
  KnotVector knots;
  std::vector<double> values;
};

/// Knots and estimates from contiguous bin records covering [0, inf).
BinLayout parse_bins(std::span<const EstimateRecord> bins);

/// Builds the tract model from contiguous bin records covering [0, inf),
/// an optional mean record, and a median record. `prior_center` entries
/// that are zero or negative are floored at 1e-6 and the vector is
/// renormalized. Throws ValidationError for non-contiguous bins or a
/// median in the unbounded top bin.
ModelSpec build_spec(std::span<const EstimateRecord> bins,
                     const std::optional<EstimateRecord>& mean,
                     const EstimateRecord& median, std::span<const double> prior_center,
                     double prior_scale = kDefaultPriorScale);

/// Unconstrained coordinates: K - 1 stick-breaking logits and J log shifts
/// with alpha_j = 1 + exp(shift_j).
struct ParameterVector {
  std::vector<double> stick;
  std::vector<double> log_alpha_shift;

  std::vector<double> flatten() const;
  static ParameterVector unflatten(std::span<const double> theta, const ModelSpec& spec);
};

struct TransformResult {
  PiecewiseDensity density;
  double log_jacobian;
};

TransformResult transform(const ParameterVector& pv, const ModelSpec& spec);
PiecewiseDensity to_density(std::span<const double> theta, const ModelSpec& spec);

/// Inverse of transform. Requires strictly positive probabilities and
/// alpha > 1 on every Pareto bin.
ParameterVector untransform(const PiecewiseDensity& d, const ModelSpec& spec);

/// Dirichlet(g / t) log-density of d's probabilities plus the truncated
/// normal log-density of every Pareto shape, normalizing constants included.
double log_prior(const PiecewiseDensity& d, const ModelSpec& spec);

/// Sum of the data-model log-likelihoods (bins, mean, inverted quantiles).
double log_likelihood(const PiecewiseDensity& d, const ModelSpec& spec);

/// log prior + log likelihood + log Jacobian at an unconstrained point.
double log_posterior(const ParameterVector& pv, const ModelSpec& spec);

/// Same value; writes the exact gradient into `grad` when it is non-empty.
double log_posterior(std::span<const double> theta, const ModelSpec& spec,
                     std::span<double> grad);

std::vector<double> gradient(const ParameterVector& pv, const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Nested areas within a larger region with weighted unit-level records.

struct WeightedObservation {
  double value;
  double weight;
};

struct NestedSpec {
  std::vector<ModelSpec> tracts;
  /// o_r = N_r / sum N.
  std::vector<double> tract_shares;
  /// Unit records with weights rescaled to sum to the record count.
  std::vector<WeightedObservation> records;

  std::size_t dimension() const;
  /// Start of tract r's slice in the flattened parameter.
  std::size_t offset(std::size_t r) const;
};

NestedSpec make_nested_spec(std::vector<ModelSpec> tracts, std::span<const double> tract_pops,
                            std::vector<WeightedObservation> records);

/// Sum of the tract log posteriors plus the weighted mixture log-likelihood
/// sum_i log sum_r o_r^w_i pi_r(z_i)^w_i (log-sum-exp stabilized).
double log_posterior_nested(std::span<const double> theta, const NestedSpec& spec,
                            std::span<double> grad);
double log_posterior_nested(std::span<const ParameterVector> pvs, const NestedSpec& spec);

/// Tract densities of the flattened nested parameter.
std::vector<PiecewiseDensity> nested_densities(std::span<const double> theta,
                                               const NestedSpec& spec);

/// P(unit belongs to tract r | z, w), proportional to o_r^w pi_r(z)^w.
std::vector<double> tract_membership_posterior(std::span<const PiecewiseDensity> densities,
                                               std::span<const double> shares, double z,
                                               double w);

}  // namespace popinterp
