#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popinterp/density.hpp"
#include "popinterp/functionals.hpp"
#include "popinterp/predictive.hpp"

namespace popinterp {

enum class PrlnRule {
  /// Interior Pareto bin with shape <= 1 or undefined; uniform used instead.
  interior_uniform,
  /// Top bin shape <= 1 or undefined; all top mass placed at its lower knot.
  top_point_mass,
};

struct PrlnFallback {
  std::size_t bin;
  PrlnRule rule;
};

/// Pareto-linear point fit. Either a plain piecewise density, or a bounded
/// body on [0, kappa_top] plus an atom of mass p_top at kappa_top.
class PrlnFit {
 public:
  PrlnFit(PiecewiseDensity density, std::vector<double> alphas, std::size_t median_bin,
          double median, std::vector<PrlnFallback> fallbacks);
  PrlnFit(std::optional<PiecewiseDensity> body, double atom_at, std::vector<double> probs,
          std::vector<double> alphas, std::size_t median_bin, double median,
          std::vector<PrlnFallback> fallbacks);

  bool has_atom() const { return atom_; }
  double atom_location() const { return atom_at_; }
  double atom_mass() const { return atom_mass_; }
  /// The full density (no atom) or the renormalized body (atom variant);
  /// empty only when the atom carries all the mass.
  const std::optional<PiecewiseDensity>& density() const { return density_; }

  std::span<const double> probs() const { return probs_; }
  /// Estimated shape per bin; 0 for uniform bins and for an atom top bin.
  std::span<const double> alphas() const { return alphas_; }
  std::size_t median_bin() const { return median_bin_; }
  /// Median location used to pick the uniform bins.
  double median() const { return median_; }
  std::span<const PrlnFallback> fallbacks() const { return fallbacks_; }

  double cdf(double x) const;
  double quantile(double tau) const;
  double mean() const;

 private:
  std::optional<PiecewiseDensity> density_;
  bool atom_ = false;
  double atom_at_ = 0.0;
  double atom_mass_ = 0.0;
  std::vector<double> probs_;
  std::vector<double> alphas_;
  std::size_t median_bin_ = 0;
  double median_ = 0.0;
  std::vector<PrlnFallback> fallbacks_;
};

/// Tail-ratio shape estimate for the boundary pair (lo, hi):
/// log(T_lo / T_hi) / log(hi / lo). NaN when undefined.
double tail_ratio_alpha(double tail_lo, double tail_hi, double lo, double hi);

/// Fits the Pareto-linear baseline to contiguous bin records covering
/// [0, inf). Bin values are renormalized to sum to one. Without a hint the
/// median is found by linear interpolation of the bin CDF.
PrlnFit prln_fit(std::span<const EstimateRecord> bins,
                 std::optional<double> median_hint = std::nullopt);

/// n values Q(u_i) with u_i uniform from a generator seeded by `seed`.
std::vector<double> prln_population(const PrlnFit& fit, std::size_t n, std::uint64_t seed);

inline constexpr std::size_t kPrlnGiniPopulation = 100000;
inline constexpr std::uint64_t kPrlnGiniSeed = 20181;

/// Point estimates: percentiles from the quantile function, mean in closed
/// form, Gini from a fixed-seed synthetic population of size n.
std::vector<double> prln_features(const PrlnFit& fit, std::span<const Feature> features,
                                  std::size_t n = kPrlnGiniPopulation,
                                  std::uint64_t seed = kPrlnGiniSeed);

std::string rule_name(PrlnRule r);

}  // namespace popinterp
