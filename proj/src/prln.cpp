#include "popinterp/prln.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "popinterp/errors.hpp"
#include "popinterp/model.hpp"
#include "popinterp/random.hpp"

namespace popinterp {

PrlnFit::PrlnFit(PiecewiseDensity density, std::vector<double> alphas, std::size_t median_bin,
                 double median, std::vector<PrlnFallback> fallbacks)
    : density_(std::move(density)),
      alphas_(std::move(alphas)),
      median_bin_(median_bin),
      median_(median),
      fallbacks_(std::move(fallbacks)) {
  const auto p = density_->probs();
  probs_.assign(p.begin(), p.end());
}

PrlnFit::PrlnFit(std::optional<PiecewiseDensity> body, double atom_at, std::vector<double> probs,
                 std::vector<double> alphas, std::size_t median_bin, double median,
                 std::vector<PrlnFallback> fallbacks)
    : density_(std::move(body)),
      atom_(true),
      atom_at_(atom_at),
      atom_mass_(probs.back()),
      probs_(std::move(probs)),
      alphas_(std::move(alphas)),
      median_bin_(median_bin),
      median_(median),
      fallbacks_(std::move(fallbacks)) {}

double PrlnFit::cdf(double x) const {
  if (!has_atom()) return density_->cdf(x);
  const double body = density_ ? (1.0 - atom_mass_) * density_->cdf(x) : 0.0;
  return x >= atom_at_ ? body + atom_mass_ : body;
}

double PrlnFit::quantile(double tau) const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
  if (!has_atom()) return density_->quantile(tau);
  const double body_mass = 1.0 - atom_mass_;
  if (density_ && tau <= body_mass) return density_->quantile(tau / body_mass);
  return atom_at_;
}

double PrlnFit::mean() const {
  if (!has_atom()) return density_->mean();
  const double body = density_ ? (1.0 - atom_mass_) * density_->mean() : 0.0;
  return body + atom_mass_ * atom_at_;
}

double tail_ratio_alpha(double tail_lo, double tail_hi, double lo, double hi) {
  if (!(tail_hi > 0.0) || !(tail_lo > 0.0) || !(lo > 0.0) || !(hi > lo)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return std::log(tail_lo / tail_hi) / std::log(hi / lo);
}

PrlnFit prln_fit(std::span<const EstimateRecord> bins, std::optional<double> median_hint) {
  auto layout = parse_bins(bins);
  const KnotVector& kv = layout.knots;
  const std::size_t K = kv.num_bins();
  std::vector<double> p = layout.values;
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (!(total > 0.0)) throw DegenerateInputError("all bin estimates are zero");
  for (double& v : p) v /= total;

  // tail[k] = sum_{j >= k} p_j
  std::vector<double> tail(K + 1, 0.0);
  for (std::size_t k = K; k-- > 0;) tail[k] = tail[k + 1] + p[k];

  std::size_t median_bin = 0;
  double median = 0.0;
  if (median_hint) {
    if (!(*median_hint >= 0.0)) throw ValidationError("median hint must be non-negative");
    median = *median_hint;
    median_bin = kv.locate(median);
  } else {
    double below = 0.0;
    for (median_bin = 0; median_bin + 1 < K; ++median_bin) {
      if (below + p[median_bin] >= 0.5) break;
      below += p[median_bin];
    }
    if (kv.bin_is_unbounded(median_bin)) {
      median = kv.lower(median_bin);
    } else {
      const double frac = p[median_bin] > 0.0 ? (0.5 - below) / p[median_bin] : 0.0;
      median = kv.lower(median_bin) + frac * (kv.upper(median_bin) - kv.lower(median_bin));
    }
  }

  std::vector<BinFamily> families(K, Uniform{});
  std::vector<double> alphas(K, 0.0);
  std::vector<PrlnFallback> log;
  for (std::size_t k = median_bin + 1; k + 1 < K; ++k) {
    const double a = tail_ratio_alpha(tail[k], tail[k + 1], kv.lower(k), kv.upper(k));
    if (std::isfinite(a) && a > 1.0) {
      families[k] = TruncatedPareto{a};
      alphas[k] = a;
    } else {
      log.push_back({k, PrlnRule::interior_uniform});
    }
  }

  // Top bin: shape from the last interior boundary pair.
  const std::size_t top = K - 1;
  const double a_top = tail_ratio_alpha(tail[top - 1], tail[top], kv.lower(top - 1), kv.lower(top));
  if (std::isfinite(a_top) && a_top > 1.0) {
    families[top] = UnboundedPareto{a_top};
    alphas[top] = a_top;
    return PrlnFit(PiecewiseDensity(kv, std::move(p), std::move(families)), std::move(alphas),
                   median_bin, median, std::move(log));
  }
  log.push_back({top, PrlnRule::top_point_mass});
  const double atom_at = kv.lower(top);
  const double atom_mass = p[top];
  std::optional<PiecewiseDensity> body;
  const double body_mass = 1.0 - atom_mass;
  if (body_mass > 0.0) {
    std::vector<double> finite(kv.finite().begin(), kv.finite().end());
    std::vector<double> bp(p.begin(), p.end() - 1);
    for (double& v : bp) v /= body_mass;
    families.pop_back();
    body.emplace(KnotVector(std::move(finite), false), std::move(bp), std::move(families));
  }
  return PrlnFit(std::move(body), atom_at, std::move(p), std::move(alphas), median_bin, median,
                 std::move(log));
}

std::vector<double> prln_population(const PrlnFit& fit, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = fit.quantile(rng.uniform_open());
  return out;
}

std::vector<double> prln_features(const PrlnFit& fit, std::span<const Feature> features,
                                  std::size_t n, std::uint64_t seed) {
  std::vector<double> out;
  std::vector<double> pop;
  for (const auto& f : features) {
    if (const auto* q = std::get_if<Percentile>(&f)) {
      out.push_back(fit.quantile(q->tau));
    } else if (std::holds_alternative<PopulationMean>(f)) {
      out.push_back(fit.mean());
    } else {
      if (pop.empty()) {
        pop = prln_population(fit, n, seed);
        std::sort(pop.begin(), pop.end());
      }
      out.push_back(gini_sorted(pop));
    }
  }
  return out;
}

std::string rule_name(PrlnRule r) {
  return r == PrlnRule::interior_uniform ? "interior_uniform" : "top_point_mass";
}

}  // namespace popinterp
