#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "model_detail.hpp"
#include "popinterp/errors.hpp"
#include "popinterp/model.hpp"

namespace popinterp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

std::size_t NestedSpec::dimension() const {
  std::size_t n = 0;
  for (const auto& t : tracts) n += t.dimension();
  return n;
}

std::size_t NestedSpec::offset(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < r; ++i) n += tracts[i].dimension();
  return n;
}

NestedSpec make_nested_spec(std::vector<ModelSpec> tracts, std::span<const double> tract_pops,
                            std::vector<WeightedObservation> records) {
  if (tracts.empty()) throw ValidationError("nested model needs at least one tract");
  if (tract_pops.size() != tracts.size()) {
    throw ValidationError("one population per tract is required");
  }
  NestedSpec spec;
  spec.tracts = std::move(tracts);
  const double total = std::accumulate(tract_pops.begin(), tract_pops.end(), 0.0);
  for (double n : tract_pops) {
    if (!(n > 0.0)) throw ValidationError("tract populations must be positive");
    spec.tract_shares.push_back(n / total);
  }
  double weight_sum = 0.0;
  for (const auto& obs : records) {
    if (!(obs.value >= 0.0) || !std::isfinite(obs.value)) {
      throw ValidationError("unit-level values must be finite and non-negative");
    }
    if (!(obs.weight > 0.0) || !std::isfinite(obs.weight)) {
      throw ValidationError("unit-level weights must be positive and finite");
    }
    weight_sum += obs.weight;
  }
  const double scale = records.empty() ? 1.0 : static_cast<double>(records.size()) / weight_sum;
  for (auto& obs : records) obs.weight *= scale;
  spec.records = std::move(records);
  return spec;
}

double log_posterior_nested(std::span<const double> theta, const NestedSpec& spec,
                            std::span<double> grad) {
  if (theta.size() != spec.dimension()) throw DomainError("parameter length mismatch");
  const std::size_t R = spec.tracts.size();
  std::vector<detail::TractState> states;
  states.reserve(R);
  for (std::size_t r = 0; r < R; ++r) {
    states.push_back(detail::forward(
        theta.subspan(spec.offset(r), spec.tracts[r].dimension()), spec.tracts[r]));
    if (!states.back().ok()) {
      std::fill(grad.begin(), grad.end(), 0.0);
      return kNegInf;
    }
  }
  const bool want_grad = !grad.empty();
  std::vector<detail::TractAdjoint> adjs;
  if (want_grad) {
    for (const auto& t : spec.tracts) adjs.emplace_back(t);
  }

  double value = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    value += detail::tract_terms(states[r], spec.tracts[r], want_grad ? &adjs[r] : nullptr);
  }

  std::vector<double> terms(R);
  std::vector<std::size_t> bins(R);
  for (const auto& obs : spec.records) {
    double top = kNegInf;
    for (std::size_t r = 0; r < R; ++r) {
      const PiecewiseDensity& d = *states[r].density;
      const KnotVector& knots = d.knots();
      bins[r] = knots.locate(obs.value);
      const bool outside = obs.value < knots.front() ||
                           (!knots.unbounded() && obs.value > knots[knots.size() - 1]);
      const double log_pi =
          outside ? kNegInf : states[r].log_p[bins[r]] + d.bin(bins[r]).log_pdf(obs.value);
      terms[r] = obs.weight * (std::log(spec.tract_shares[r]) + log_pi);
      top = std::max(top, terms[r]);
    }
    if (top == kNegInf) {
      std::fill(grad.begin(), grad.end(), 0.0);
      return kNegInf;
    }
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - top);
    const double lse = top + std::log(sum);
    value += lse;
    if (!want_grad) continue;
    for (std::size_t r = 0; r < R; ++r) {
      const double coef = obs.weight * std::exp(terms[r] - lse);
      if (coef == 0.0) continue;
      adjs[r].c_logp[bins[r]] += coef;
      if (const auto j = spec.tracts[r].alpha_index(bins[r])) {
        adjs[r].g_alpha[*j] += coef * states[r].density->bin(bins[r]).log_pdf_dalpha(obs.value);
      }
    }
  }

  if (want_grad) {
    for (std::size_t r = 0; r < R; ++r) {
      detail::backprop(states[r], spec.tracts[r], adjs[r],
                       grad.subspan(spec.offset(r), spec.tracts[r].dimension()));
    }
  }
  return value;
}

double log_posterior_nested(std::span<const ParameterVector> pvs, const NestedSpec& spec) {
  if (pvs.size() != spec.tracts.size()) throw DomainError("one parameter vector per tract");
  std::vector<double> theta;
  for (const auto& pv : pvs) {
    const auto part = pv.flatten();
    theta.insert(theta.end(), part.begin(), part.end());
  }
  return log_posterior_nested(theta, spec, {});
}

std::vector<PiecewiseDensity> nested_densities(std::span<const double> theta,
                                               const NestedSpec& spec) {
  std::vector<PiecewiseDensity> out;
  out.reserve(spec.tracts.size());
  for (std::size_t r = 0; r < spec.tracts.size(); ++r) {
    out.push_back(
        to_density(theta.subspan(spec.offset(r), spec.tracts[r].dimension()), spec.tracts[r]));
  }
  return out;
}

std::vector<double> tract_membership_posterior(std::span<const PiecewiseDensity> densities,
                                               std::span<const double> shares, double z,
                                               double w) {
  if (densities.size() != shares.size() || densities.empty()) {
    throw DomainError("one share per tract density is required");
  }
  std::vector<double> logs(densities.size());
  double top = kNegInf;
  for (std::size_t r = 0; r < densities.size(); ++r) {
    const double dens = densities[r].pdf(z);
    logs[r] = (dens > 0.0 && shares[r] > 0.0) ? w * (std::log(shares[r]) + std::log(dens))
                                              : kNegInf;
    top = std::max(top, logs[r]);
  }
  if (top == kNegInf) throw DomainError("value has zero density under every tract");
  double sum = 0.0;
  for (double& l : logs) {
    l = std::exp(l - top);
    sum += l;
  }
  for (double& l : logs) l /= sum;
  return logs;
}

}  // namespace popinterp
