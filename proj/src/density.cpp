#include "popinterp/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "popinterp/errors.hpp"

namespace popinterp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// expm1(beta * L) / beta, continuous at beta = 0.
double expm1_ratio(double beta, double L) {
  if (beta == 0.0) return L;
  return std::expm1(beta * L) / beta;
}

// d/dbeta of expm1_ratio.
double expm1_ratio_dbeta(double beta, double L) {
  const double x = beta * L;
  if (std::abs(x) < 1e-4) {
    return L * L * (0.5 + x / 3.0 + x * x / 8.0);
  }
  return (x * std::exp(x) - std::expm1(x)) / (beta * beta);
}

}  // namespace

// ---------------------------------------------------------------------------
// KnotVector

KnotVector::KnotVector(std::vector<double> finite, bool unbounded_top)
    : finite_(std::move(finite)), unbounded_(unbounded_top) {
  if (finite_.empty() || (!unbounded_ && finite_.size() < 2)) {
    throw DomainError("knot vector needs at least two knots");
  }
  for (std::size_t i = 0; i < finite_.size(); ++i) {
    if (!std::isfinite(finite_[i])) {
      throw DomainError("only the final knot may be infinite");
    }
    if (i > 0 && !(finite_[i] > finite_[i - 1])) {
      throw DomainError("knots must be strictly increasing");
    }
  }
  if (finite_.front() < 0.0) {
    throw DomainError("first knot must be non-negative");
  }
}

KnotVector KnotVector::from_values(std::span<const double> knots) {
  if (knots.size() < 2) throw DomainError("knot vector needs at least two knots");
  const bool top = std::isinf(knots.back()) && knots.back() > 0;
  std::vector<double> finite(knots.begin(), top ? knots.end() - 1 : knots.end());
  return KnotVector(std::move(finite), top);
}

double KnotVector::operator[](std::size_t i) const {
  if (i < finite_.size()) return finite_[i];
  return kInf;
}

std::size_t KnotVector::locate(double x) const {
  const auto it = std::lower_bound(finite_.begin(), finite_.end(), x);
  const auto idx = static_cast<std::size_t>(it - finite_.begin());
  if (idx == 0) return 0;
  return std::min(idx - 1, num_bins() - 1);
}

// ---------------------------------------------------------------------------
// Bin

bool is_pareto(const BinFamily& family) {
  return !std::holds_alternative<Uniform>(family);
}

double family_alpha(const BinFamily& family) {
  if (const auto* t = std::get_if<TruncatedPareto>(&family)) return t->alpha;
  if (const auto* u = std::get_if<UnboundedPareto>(&family)) return u->alpha;
  return 0.0;
}

double Bin::pdf(double x) const {
  if (std::holds_alternative<Uniform>(family_)) return 1.0 / (upper_ - lower_);
  const double a = family_alpha(family_);
  const double tail = std::exp(-a * std::log(x / lower_));
  if (std::holds_alternative<UnboundedPareto>(family_)) return a / x * tail;
  const double c = -std::expm1(-a * std::log(upper_ / lower_));
  return a / x * tail / c;
}

double Bin::log_pdf(double x) const {
  if (std::holds_alternative<Uniform>(family_)) return -std::log(upper_ - lower_);
  const double a = family_alpha(family_);
  const double base = std::log(a) - std::log(x) - a * std::log(x / lower_);
  if (std::holds_alternative<UnboundedPareto>(family_)) return base;
  return base - std::log(-std::expm1(-a * std::log(upper_ / lower_)));
}

double Bin::cdf(double x) const {
  if (x <= lower_) return 0.0;
  if (!std::holds_alternative<UnboundedPareto>(family_) && x >= upper_) return 1.0;
  if (std::holds_alternative<Uniform>(family_)) return (x - lower_) / (upper_ - lower_);
  const double a = family_alpha(family_);
  const double num = -std::expm1(-a * std::log(x / lower_));
  if (std::holds_alternative<UnboundedPareto>(family_)) return num;
  return num / -std::expm1(-a * std::log(upper_ / lower_));
}

double Bin::quantile(double u) const {
  if (std::holds_alternative<Uniform>(family_)) return lower_ + u * (upper_ - lower_);
  const double a = family_alpha(family_);
  if (std::holds_alternative<UnboundedPareto>(family_)) {
    return lower_ * std::exp(-std::log1p(-u) / a);
  }
  if (u >= 1.0) return upper_;
  const double c = -std::expm1(-a * std::log(upper_ / lower_));
  return std::min(upper_, lower_ * std::exp(-std::log1p(-u * c) / a));
}

double Bin::mean() const {
  if (std::holds_alternative<Uniform>(family_)) return 0.5 * (lower_ + upper_);
  const double a = family_alpha(family_);
  if (std::holds_alternative<UnboundedPareto>(family_)) {
    if (!(a > 1.0)) {
      throw MomentUndefinedError("unbounded Pareto bin has no mean for alpha <= 1");
    }
    return a * lower_ / (a - 1.0);
  }
  const double L = std::log(upper_ / lower_);
  const double c = -std::expm1(-a * L);
  return a * lower_ * expm1_ratio(1.0 - a, L) / c;
}

double Bin::variance() const {
  if (std::holds_alternative<Uniform>(family_)) {
    const double w = upper_ - lower_;
    return w * w / 12.0;
  }
  const double a = family_alpha(family_);
  if (std::holds_alternative<UnboundedPareto>(family_)) {
    if (!(a > 2.0)) {
      throw MomentUndefinedError("unbounded Pareto bin has no variance for alpha <= 2");
    }
    return a * lower_ * lower_ / ((a - 1.0) * (a - 1.0) * (a - 2.0));
  }
  const double L = std::log(upper_ / lower_);
  const double c = -std::expm1(-a * L);
  const double m1 = a * lower_ * expm1_ratio(1.0 - a, L) / c;
  const double m2 = a * lower_ * lower_ * expm1_ratio(2.0 - a, L) / c;
  return std::max(0.0, m2 - m1 * m1);
}

double Bin::cdf_dalpha(double x) const {
  if (!is_pareto(family_) || x <= lower_) return 0.0;
  const double a = family_alpha(family_);
  const double l = std::log(x / lower_);
  if (std::holds_alternative<UnboundedPareto>(family_)) return l * std::exp(-a * l);
  if (x >= upper_) return 0.0;
  const double L = std::log(upper_ / lower_);
  const double c = -std::expm1(-a * L);
  const double num = -std::expm1(-a * l);
  return (l * std::exp(-a * l) * c - num * L * std::exp(-a * L)) / (c * c);
}

double Bin::mean_dalpha() const {
  if (!is_pareto(family_)) return 0.0;
  const double a = family_alpha(family_);
  if (std::holds_alternative<UnboundedPareto>(family_)) {
    return -lower_ / ((a - 1.0) * (a - 1.0));
  }
  const double L = std::log(upper_ / lower_);
  const double c = -std::expm1(-a * L);
  const double dc = L * std::exp(-a * L);
  const double e = expm1_ratio(1.0 - a, L);
  const double de = -expm1_ratio_dbeta(1.0 - a, L);
  return lower_ * (e / c + a * de / c - a * e * dc / (c * c));
}

double Bin::log_pdf_dalpha(double x) const {
  if (!is_pareto(family_)) return 0.0;
  const double a = family_alpha(family_);
  const double base = 1.0 / a - std::log(x / lower_);
  if (std::holds_alternative<UnboundedPareto>(family_)) return base;
  const double L = std::log(upper_ / lower_);
  const double c = -std::expm1(-a * L);
  return base - L * std::exp(-a * L) / c;
}

// ---------------------------------------------------------------------------
// PiecewiseDensity

PiecewiseDensity::PiecewiseDensity(KnotVector knots, std::vector<double> probs,
                                   std::vector<BinFamily> families)
    : knots_(std::move(knots)), probs_(std::move(probs)), families_(std::move(families)) {
  const std::size_t K = knots_.num_bins();
  if (probs_.size() != K || families_.size() != K) {
    throw DomainError("density needs one probability and one family per bin");
  }
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw DomainError("bin probabilities must be finite and non-negative");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw DomainError("bin probabilities must sum to one (sum = " +
                      std::to_string(total) + ")");
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto& f = families_[k];
    const bool open = knots_.bin_is_unbounded(k);
    if (std::holds_alternative<UnboundedPareto>(f)) {
      if (!open) throw DomainError("unbounded Pareto only allowed on an unbounded last bin");
    } else if (open) {
      throw DomainError("the unbounded bin must use the unbounded Pareto family");
    }
    if (is_pareto(f)) {
      if (!(family_alpha(f) > 0.0) || !std::isfinite(family_alpha(f))) {
        throw DomainError("Pareto shape must be positive and finite");
      }
      if (!(knots_.lower(k) > 0.0)) {
        throw DomainError("Pareto bins need a strictly positive lower knot");
      }
    }
  }
  cumulative_.assign(K + 1, 0.0);
  for (std::size_t k = 0; k < K; ++k) cumulative_[k + 1] = cumulative_[k] + probs_[k];
}

Bin PiecewiseDensity::bin(std::size_t k) const {
  return Bin(knots_.lower(k), knots_.upper(k), families_[k]);
}

double PiecewiseDensity::pdf(double x) const {
  if (x < knots_.front()) return 0.0;
  if (!knots_.unbounded() && x > knots_[knots_.size() - 1]) return 0.0;
  const std::size_t k = knots_.locate(x);
  if (probs_[k] == 0.0) return 0.0;
  // x == first knot lands in bin 0, so zero incomes get the first bin's value.
  return probs_[k] * bin(k).pdf(x);
}

double PiecewiseDensity::cdf(double x) const {
  if (x <= knots_.front()) return 0.0;
  if (!knots_.unbounded() && x >= knots_[knots_.size() - 1]) return 1.0;
  const std::size_t k = knots_.locate(x);
  return std::min(1.0, cumulative_[k] + probs_[k] * bin(k).cdf(x));
}

double PiecewiseDensity::quantile(double tau) const {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw DomainError("quantile level must lie in [0, 1]");
  }
  if (tau == 0.0) return knots_.front();
  if (tau == 1.0) {
    if (knots_.unbounded()) {
      throw UnboundedQuantileError("quantile(1) is infinite for an unbounded top bin");
    }
    return knots_[knots_.size() - 1];
  }
  const std::size_t K = num_bins();
  std::size_t chosen = K;
  std::size_t last_positive = K;
  for (std::size_t j = 0; j < K; ++j) {
    if (probs_[j] <= 0.0) continue;
    last_positive = j;
    if (cumulative_[j + 1] >= tau) {
      chosen = j;
      break;
    }
  }
  if (chosen == K) chosen = last_positive;  // rounding: total mass slightly below tau
  double u = std::clamp((tau - cumulative_[chosen]) / probs_[chosen], 0.0, 1.0);
  if (knots_.bin_is_unbounded(chosen) && u >= 1.0) u = std::nextafter(1.0, 0.0);
  return bin(chosen).quantile(u);
}

double PiecewiseDensity::mean() const {
  double mu = 0.0;
  for (std::size_t k = 0; k < num_bins(); ++k) {
    if (probs_[k] > 0.0) mu += probs_[k] * bin(k).mean();
  }
  return mu;
}

double PiecewiseDensity::variance() const {
  const double mu = mean();
  double var = 0.0;
  for (std::size_t k = 0; k < num_bins(); ++k) {
    if (probs_[k] == 0.0) continue;
    const Bin b = bin(k);
    const double d = b.mean() - mu;
    var += probs_[k] * (b.variance() + d * d);
  }
  return var;
}

double PiecewiseDensity::bin_mass(double a, double b) const {
  if (!(a < b)) throw DomainError("bin_mass needs a < b");
  return cdf(b) - cdf(a);
}

double PiecewiseDensity::sample_one(Rng& rng) const {
  const double u = rng.uniform();
  const auto first = cumulative_.begin() + 1;
  auto it = std::upper_bound(first, cumulative_.end(), u);
  std::size_t k = static_cast<std::size_t>(it - first);
  if (k >= num_bins()) {
    k = num_bins() - 1;
    while (k > 0 && probs_[k] == 0.0) --k;
  }
  return bin(k).quantile(rng.uniform());
}

std::vector<double> PiecewiseDensity::sample(std::size_t n, Rng& rng) const {
  std::vector<double> out(n);
  for (auto& y : out) y = sample_one(rng);
  return out;
}

}  // namespace popinterp
