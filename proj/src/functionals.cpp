#include "popinterp/functionals.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "popinterp/errors.hpp"

namespace popinterp {

void validate(const EstimateRecord& rec) {
  if (!(rec.se > 0.0) || !std::isfinite(rec.se)) {
    throw DomainError("estimate standard error must be positive and finite");
  }
  if (!std::isfinite(rec.value)) throw DomainError("estimate value must be finite");
  if (const auto* b = std::get_if<BinProportion>(&rec.kind)) {
    if (!(b->lower < b->upper)) throw DomainError("bin bounds must satisfy lower < upper");
    if (rec.value < 0.0 || rec.value > 1.0) {
      throw DomainError("bin proportion must lie in [0, 1]");
    }
  } else if (const auto* q = std::get_if<QuantileEstimate>(&rec.kind)) {
    if (!(q->tau > 0.0 && q->tau < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
  }
}

std::string describe(const EstimateKind& kind) {
  std::ostringstream os;
  if (const auto* b = std::get_if<BinProportion>(&kind)) {
    os << "bin(" << b->lower << "," << b->upper << "]";
  } else if (const auto* q = std::get_if<QuantileEstimate>(&kind)) {
    os << "quantile(" << q->tau << ")";
  } else {
    os << "mean";
  }
  return os.str();
}

double evaluate_functional(const PiecewiseDensity& d, const EstimateKind& kind) {
  if (const auto* b = std::get_if<BinProportion>(&kind)) return d.bin_mass(b->lower, b->upper);
  if (const auto* q = std::get_if<QuantileEstimate>(&kind)) return d.quantile(q->tau);
  return d.mean();
}

double gaussian_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * std::log(2.0 * std::numbers::pi * sd * sd) - 0.5 * z * z;
}

double loglik_record(const PiecewiseDensity& d, const EstimateRecord& rec) {
  return gaussian_log_pdf(rec.value, evaluate_functional(d, rec.kind), rec.se);
}

InvertedQuantileDatum invert_quantile(const EstimateRecord& rec,
                                      std::span<const double> bin_estimates,
                                      const KnotVector& knots, QuantilePlugIn method) {
  const auto* q = std::get_if<QuantileEstimate>(&rec.kind);
  if (q == nullptr) throw DomainError("invert_quantile needs a quantile estimate");
  if (bin_estimates.size() != knots.num_bins()) {
    throw DomainError("one bin estimate per bin is required");
  }
  const std::size_t k = knots.locate(rec.value);
  if (knots.bin_is_unbounded(k)) {
    throw UnsupportedApproximationError(
        method == QuantilePlugIn::uniform_bin
            ? "quantile lies in the unbounded bin, which cannot be uniform"
            : "bin-width density approximation needs a finite bin");
  }
  const double b = bin_estimates[k];
  if (!(b > 0.0)) {
    throw DegeneratePlugInError("bin holding the quantile estimate has a zero bin estimate");
  }
  const double width = knots.upper(k) - knots.lower(k);
  return InvertedQuantileDatum{q->tau, rec.value, rec.se / b * width};
}

double loglik_inverted_quantile(const PiecewiseDensity& d, const InvertedQuantileDatum& datum) {
  return gaussian_log_pdf(datum.tau, d.cdf(datum.q), datum.effective_sd);
}

}  // namespace popinterp
