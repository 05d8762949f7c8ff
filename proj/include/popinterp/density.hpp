#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "popinterp/random.hpp"

namespace popinterp {

/// Strictly increasing bin boundaries. The final boundary may be the
/// distinguished "unbounded" marker; it is reported as +infinity by
/// operator[] but every formula checks unbounded() rather than relying on
/// infinite arithmetic.
class KnotVector {
 public:
  KnotVector() = default;

  /// `finite` holds every finite knot; when `unbounded_top` is set an
  /// implicit +infinity knot follows the last one.
  KnotVector(std::vector<double> finite, bool unbounded_top);

  /// Accepts a knot list whose last element may be +infinity.
  static KnotVector from_values(std::span<const double> knots);

  std::size_t num_bins() const {
    return unbounded_ ? finite_.size() : finite_.size() - 1;
  }
  std::size_t size() const { return num_bins() + 1; }
  bool unbounded() const { return unbounded_; }
  bool bin_is_unbounded(std::size_t bin) const {
    return unbounded_ && bin + 1 == num_bins();
  }

  double operator[](std::size_t i) const;
  double lower(std::size_t bin) const { return finite_[bin]; }
  double upper(std::size_t bin) const { return (*this)[bin + 1]; }
  double front() const { return finite_.front(); }
  std::span<const double> finite() const { return finite_; }

  /// Index of the bin (lower, upper] containing x. Values at or below the
  /// first knot map to bin 0; values beyond a bounded top map to the last bin.
  std::size_t locate(double x) const;

 private:
  std::vector<double> finite_;
  bool unbounded_ = false;
};

struct Uniform {
  bool operator==(const Uniform&) const = default;
};

/// Pareto density truncated to a finite bin (lower, upper], lower > 0.
struct TruncatedPareto {
  double alpha;
  bool operator==(const TruncatedPareto&) const = default;
};

/// Pareto density on (lower, infinity); only valid on the unbounded last bin.
struct UnboundedPareto {
  double alpha;
  bool operator==(const UnboundedPareto&) const = default;
};

using BinFamily = std::variant<Uniform, TruncatedPareto, UnboundedPareto>;

bool is_pareto(const BinFamily& family);
double family_alpha(const BinFamily& family);  // 0 for Uniform

/// One bin's normalized within-bin density f_k together with the closed
/// forms for its CDF, inverse CDF and first two moments. The *_dalpha
/// members are derivatives with respect to the Pareto shape (zero for
/// uniform bins) and feed the analytic gradient of the model.
class Bin {
 public:
  Bin(double lower, double upper, BinFamily family)
      : lower_(lower), upper_(upper), family_(family) {}

  double lower() const { return lower_; }
  double upper() const { return upper_; }
  const BinFamily& family() const { return family_; }

  double pdf(double x) const;
  double log_pdf(double x) const;
  double cdf(double x) const;
  double quantile(double u) const;
  double mean() const;
  double variance() const;

  double cdf_dalpha(double x) const;
  double mean_dalpha() const;
  double log_pdf_dalpha(double x) const;

 private:
  double lower_;
  double upper_;
  BinFamily family_;
};

/// Mixture of per-bin densities weighted by bin probabilities.
/// Immutable after construction; all members are safe for concurrent use.
class PiecewiseDensity {
 public:
  PiecewiseDensity(KnotVector knots, std::vector<double> probs,
                   std::vector<BinFamily> families);

  const KnotVector& knots() const { return knots_; }
  std::span<const double> probs() const { return probs_; }
  std::span<const BinFamily> families() const { return families_; }
  std::size_t num_bins() const { return probs_.size(); }
  Bin bin(std::size_t k) const;

  /// Sum of probabilities of bins strictly before `k`.
  double cumulative(std::size_t k) const { return cumulative_[k]; }

  double pdf(double x) const;
  double cdf(double x) const;
  double quantile(double tau) const;
  double mean() const;
  double variance() const;
  double bin_mass(double a, double b) const;

  double sample_one(Rng& rng) const;
  std::vector<double> sample(std::size_t n, Rng& rng) const;

 private:
  KnotVector knots_;
  std::vector<double> probs_;
  std::vector<BinFamily> families_;
  std::vector<double> cumulative_;  // size K + 1
};

}  // namespace popinterp
