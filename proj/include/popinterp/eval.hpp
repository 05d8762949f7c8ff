#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popinterp/density.hpp"
#include "popinterp/functionals.hpp"

namespace popinterp {

double log_mean_exp(std::span<const double> x);

/// Sample variance with the M - 1 denominator.
double sample_variance(std::span<const double> x);

struct WaicTerm {
  double value = 0.0;
  double log_mean_exp = 0.0;
  double variance = 0.0;
  /// Every draw had log-likelihood -inf; value is -inf.
  bool degenerate = false;
};

/// log(mean_m exp(l_m)) - var_m(l_m), larger is better. Needs M >= 2.
WaicTerm waic_term(std::span<const double> loglik_draws);
double waic_pointwise(std::span<const double> loglik_draws);

struct WaicObservation {
  std::string geo_id;
  std::string type;
  /// Empty when the estimate was not published for this area.
  std::optional<std::vector<double>> loglik_draws;
};

struct WaicPoint {
  std::string geo_id;
  double value;
  bool degenerate;
};

struct WaicGroup {
  std::string type;
  double waic_sum = 0.0;
  double se = 0.0;
  std::vector<WaicPoint> pointwise;
  std::size_t excluded = 0;
};

struct WaicReport {
  /// Groups in order of first appearance of each type.
  std::vector<WaicGroup> groups;
  const WaicGroup* find(const std::string& type) const;
};

/// Groups observations by type; a group's SE is sqrt(n * sample variance of
/// its pointwise terms), 0 when n = 1.
WaicReport waic_by_type(std::span<const WaicObservation> observations);

/// Per-draw Gaussian log-likelihood of an estimate under each density,
/// using the plain data model on the estimate's own scale.
std::vector<double> loglik_draws(std::span<const PiecewiseDensity> densities,
                                 const EstimateRecord& record);

/// Per-draw Gaussian log-likelihood of `value` given per-draw predictions.
std::vector<double> loglik_draws(std::span<const double> predicted, double value, double se);

struct Metrics {
  double rmse = 0.0;
  double mad = 0.0;
  /// Percent units; computed over pairs with nonzero truth.
  double rmspe = 0.0;
  double mape = 0.0;
  std::size_t n = 0;
  std::size_t zero_truths = 0;
};

Metrics metrics(std::span<const double> estimates, std::span<const double> truths);

/// Fraction of truths inside [lower, upper].
double coverage(std::span<const double> lower, std::span<const double> upper,
                std::span<const double> truths);

}  // namespace popinterp
