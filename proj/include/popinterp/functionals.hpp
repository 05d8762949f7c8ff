#pragma once

#include <span>
#include <string>
#include <variant>

#include "popinterp/density.hpp"

namespace popinterp {

/// Share of the population with value in (lower, upper]; upper may be +inf.
struct BinProportion {
  double lower;
  double upper;
  bool operator==(const BinProportion&) const = default;
};

struct MeanEstimate {
  bool operator==(const MeanEstimate&) const = default;
};

struct QuantileEstimate {
  double tau;
  bool operator==(const QuantileEstimate&) const = default;
};

/// What a published estimate measures. Inequality indices such as the Gini
/// coefficient are deliberately absent: they are not simple functionals of
/// the bin densities and are only available through posterior predictive
/// synthesis.
using EstimateKind = std::variant<BinProportion, MeanEstimate, QuantileEstimate>;

/// One published estimate with its standard error.
struct EstimateRecord {
  EstimateKind kind;
  double value = 0.0;
  double se = 1.0;
};

/// Throws DomainError when the record breaks its invariants (se <= 0,
/// proportion outside [0, 1], tau outside (0, 1), reversed bin bounds).
void validate(const EstimateRecord& rec);

std::string describe(const EstimateKind& kind);

/// A quantile estimate rewritten as an observation of the CDF level at q.
struct InvertedQuantileDatum {
  double tau;
  double q;
  double effective_sd;
};

/// How the density at the published quantile is replaced by data.
enum class QuantilePlugIn {
  /// Bin of q is modeled as uniform: density is exactly b / width.
  uniform_bin,
  /// Same expression used as an approximation for any finite bin.
  general_bin,
};

/// Q_u(d): bin mass, mean or quantile.
double evaluate_functional(const PiecewiseDensity& d, const EstimateKind& kind);

double gaussian_log_pdf(double x, double mean, double sd);

/// Gaussian log-likelihood of rec.value at Q_u(d) with sd rec.se.
/// Quantile records are not smooth in the bin probabilities; this form is
/// for evaluating held-out estimates, not for gradient-based fitting.
double loglik_record(const PiecewiseDensity& d, const EstimateRecord& rec);

/// Delta-method inversion of a quantile estimate. `bin_estimates[k]` is the
/// published share of bin k over `knots`; the bin holding q (right-closed
/// convention) supplies the density plug-in.
InvertedQuantileDatum invert_quantile(const EstimateRecord& rec,
                                      std::span<const double> bin_estimates,
                                      const KnotVector& knots,
                                      QuantilePlugIn method = QuantilePlugIn::uniform_bin);

/// log N(tau | cdf(q), effective_sd^2); smooth in the bin probabilities.
double loglik_inverted_quantile(const PiecewiseDensity& d, const InvertedQuantileDatum& datum);

}  // namespace popinterp
