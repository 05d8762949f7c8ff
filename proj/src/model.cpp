#include "popinterp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "model_detail.hpp"
#include "popinterp/errors.hpp"

namespace popinterp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Centering offset so that an all-zero stick maps to the uniform simplex.
double stick_offset(std::size_t k, std::size_t K) {
  return std::log(static_cast<double>(K - 1 - k));
}

std::vector<BinFamily> families_for(const ModelSpec& spec, std::span<const double> alpha) {
  std::vector<BinFamily> out;
  out.reserve(spec.num_bins());
  for (std::size_t k = 0; k < spec.num_bins(); ++k) {
    if (spec.families[k] == FamilyKind::uniform) {
      out.emplace_back(Uniform{});
    } else {
      const double a = alpha[*spec.alpha_index(k)];
      if (spec.knots.bin_is_unbounded(k)) {
        out.emplace_back(UnboundedPareto{a});
      } else {
        out.emplace_back(TruncatedPareto{a});
      }
    }
  }
  return out;
}

double dirichlet_log_norm(const ModelSpec& spec) {
  double total = 0.0;
  double norm = 0.0;
  for (double g : spec.prior_center) {
    const double a = g / spec.prior_scale;
    total += a;
    norm -= std::lgamma(a);
  }
  return norm + std::lgamma(total);
}

double alpha_log_prior(double alpha, const AlphaPrior& prior) {
  if (!(alpha > prior.lower)) return kNegInf;
  const double z = (alpha - prior.location) / prior.scale;
  const double lower_z = (prior.lower - prior.location) / prior.scale;
  const double mass = 0.5 * std::erfc(lower_z / std::numbers::sqrt2);
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(prior.scale) - 0.5 * z * z -
         std::log(mass);
}

// Adds weight * d cdf(x) / d(p, alpha).
void add_cdf_partials(const PiecewiseDensity& d, const ModelSpec& spec, double x, double weight,
                      detail::TractAdjoint& adj) {
  const KnotVector& knots = d.knots();
  if (x <= knots.front()) return;
  const std::size_t K = d.num_bins();
  if (!knots.unbounded() && x >= knots[K]) {
    for (std::size_t k = 0; k < K; ++k) adj.g_p[k] += weight;
    return;
  }
  const std::size_t k = knots.locate(x);
  for (std::size_t j = 0; j < k; ++j) adj.g_p[j] += weight;
  const Bin b = d.bin(k);
  adj.g_p[k] += weight * b.cdf(x);
  if (const auto j = spec.alpha_index(k); j && std::isfinite(x)) {
    adj.g_alpha[*j] += weight * d.probs()[k] * b.cdf_dalpha(x);
  }
}

void add_mean_partials(const PiecewiseDensity& d, const ModelSpec& spec, double weight,
                       detail::TractAdjoint& adj) {
  for (std::size_t k = 0; k < d.num_bins(); ++k) {
    const Bin b = d.bin(k);
    adj.g_p[k] += weight * b.mean();
    if (const auto j = spec.alpha_index(k)) {
      adj.g_alpha[*j] += weight * d.probs()[k] * b.mean_dalpha();
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelSpec

std::size_t ModelSpec::num_pareto() const {
  return static_cast<std::size_t>(std::count(families.begin(), families.end(), FamilyKind::pareto));
}

std::optional<std::size_t> ModelSpec::alpha_index(std::size_t k) const {
  if (families[k] != FamilyKind::pareto) return std::nullopt;
  // Pareto bins form a contiguous block at the top.
  return k - (num_bins() - num_pareto());
}

BinLayout parse_bins(std::span<const EstimateRecord> bins) {
  if (bins.size() < 2) throw ValidationError("at least two bin estimates are required");
  std::vector<double> finite;
  BinLayout out;
  for (std::size_t k = 0; k < bins.size(); ++k) {
    validate(bins[k]);
    const auto* b = std::get_if<BinProportion>(&bins[k].kind);
    if (b == nullptr) throw ValidationError("bin list contains a non-bin record");
    if (k == 0 && b->lower != 0.0) throw ValidationError("first bin must start at 0");
    if (k > 0 && b->lower != finite.back()) {
      throw ValidationError("bin estimates are not contiguous");
    }
    const bool last = k + 1 == bins.size();
    if (last != std::isinf(b->upper)) {
      throw ValidationError("only the last bin may be (and must be) unbounded above");
    }
    if (k == 0) finite.push_back(b->lower);
    if (!last) finite.push_back(b->upper);
    out.values.push_back(bins[k].value);
  }
  out.knots = KnotVector(std::move(finite), true);
  return out;
}

ModelSpec build_spec(std::span<const EstimateRecord> bins, const std::optional<EstimateRecord>& mean,
                     const EstimateRecord& median, std::span<const double> prior_center,
                     double prior_scale) {
  auto layout = parse_bins(bins);
  std::vector<double>& estimates = layout.values;
  validate(median);
  const auto* mq = std::get_if<QuantileEstimate>(&median.kind);
  if (mq == nullptr) throw ValidationError("median record must be a quantile estimate");
  if (!(median.value >= 0.0)) throw ValidationError("median estimate must be non-negative");

  ModelSpec spec;
  spec.knots = layout.knots;
  const std::size_t K = spec.knots.num_bins();
  spec.median_bin = spec.knots.locate(median.value);
  if (spec.knots.bin_is_unbounded(spec.median_bin)) {
    throw ValidationError("median estimate lies in the unbounded top bin");
  }
  spec.families.assign(K, FamilyKind::uniform);
  for (std::size_t k = spec.median_bin + 1; k < K; ++k) spec.families[k] = FamilyKind::pareto;

  spec.records.assign(bins.begin(), bins.end());
  if (mean) {
    validate(*mean);
    if (!std::holds_alternative<MeanEstimate>(mean->kind)) {
      throw ValidationError("mean record must be a mean estimate");
    }
    spec.records.push_back(*mean);
  }
  spec.quantile_data.push_back(invert_quantile(median, estimates, spec.knots));

  if (prior_center.size() != K) {
    throw ValidationError("prior center needs one entry per bin");
  }
  if (!(prior_scale > 0.0)) throw ValidationError("prior scale must be positive");
  spec.prior_center.assign(prior_center.begin(), prior_center.end());
  for (double& g : spec.prior_center) g = std::max(g, 1e-6);
  const double total = std::accumulate(spec.prior_center.begin(), spec.prior_center.end(), 0.0);
  for (double& g : spec.prior_center) g /= total;
  spec.prior_scale = prior_scale;
  return spec;
}

// ---------------------------------------------------------------------------
// Parameterization

std::vector<double> ParameterVector::flatten() const {
  std::vector<double> theta(stick);
  theta.insert(theta.end(), log_alpha_shift.begin(), log_alpha_shift.end());
  return theta;
}

ParameterVector ParameterVector::unflatten(std::span<const double> theta, const ModelSpec& spec) {
  if (theta.size() != spec.dimension()) throw DomainError("parameter length mismatch");
  const std::size_t n_stick = spec.num_bins() - 1;
  ParameterVector pv;
  pv.stick.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(n_stick));
  pv.log_alpha_shift.assign(theta.begin() + static_cast<std::ptrdiff_t>(n_stick), theta.end());
  return pv;
}

namespace detail {

TractState forward(std::span<const double> theta, const ModelSpec& spec) {
  const std::size_t K = spec.num_bins();
  const std::size_t J = spec.num_pareto();
  if (theta.size() != K - 1 + J) throw DomainError("parameter length mismatch");
  TractState s;
  s.z.resize(K - 1);
  s.log_z.resize(K - 1);
  s.log_1mz.resize(K - 1);
  s.log_r.assign(K, 0.0);
  s.log_p.resize(K);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double x = theta[k] - stick_offset(k, K);
    s.log_z[k] = -softplus(-x);
    s.log_1mz[k] = -softplus(x);
    s.z[k] = std::exp(s.log_z[k]);
    s.log_p[k] = s.log_r[k] + s.log_z[k];
    s.log_r[k + 1] = s.log_r[k] + s.log_1mz[k];
  }
  s.log_p[K - 1] = s.log_r[K - 1];

  s.alpha.resize(J);
  double log_jac = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    const double shift = theta[K - 1 + j];
    s.alpha[j] = 1.0 + std::exp(shift);
    log_jac += shift;
  }
  for (double lp : s.log_p) log_jac += lp;
  s.log_jacobian = log_jac;

  if (!std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); }) ||
      !std::all_of(s.alpha.begin(), s.alpha.end(), [](double a) { return std::isfinite(a); })) {
    return s;
  }
  std::vector<double> p(K);
  for (std::size_t k = 0; k < K; ++k) p[k] = std::exp(s.log_p[k]);
  try {
    s.density.emplace(spec.knots, std::move(p), families_for(spec, s.alpha));
  } catch (const DomainError&) {
    s.density.reset();
  }
  return s;
}

double tract_terms(const TractState& state, const ModelSpec& spec, TractAdjoint* adj) {
  const PiecewiseDensity& d = *state.density;
  const std::size_t K = spec.num_bins();

  // Dirichlet prior and stick-breaking Jacobian combine to sum_k a_k log p_k.
  double value = dirichlet_log_norm(spec);
  for (std::size_t k = 0; k < K; ++k) {
    const double a = spec.prior_center[k] / spec.prior_scale;
    value += a * state.log_p[k];
    if (adj) adj->c_logp[k] += a;
  }
  for (std::size_t j = 0; j < state.alpha.size(); ++j) {
    value += alpha_log_prior(state.alpha[j], spec.alpha_prior) + std::log(state.alpha[j] - 1.0);
    if (adj) {
      adj->g_alpha[j] += -(state.alpha[j] - spec.alpha_prior.location) /
                         (spec.alpha_prior.scale * spec.alpha_prior.scale);
    }
  }

  for (const EstimateRecord& rec : spec.records) {
    const double var = rec.se * rec.se;
    if (const auto* b = std::get_if<BinProportion>(&rec.kind)) {
      const double q = d.cdf(b->upper) - d.cdf(b->lower);
      value += gaussian_log_pdf(rec.value, q, rec.se);
      if (adj) {
        const double w = (rec.value - q) / var;
        add_cdf_partials(d, spec, b->upper, w, *adj);
        add_cdf_partials(d, spec, b->lower, -w, *adj);
      }
    } else if (std::holds_alternative<MeanEstimate>(rec.kind)) {
      const double q = d.mean();
      value += gaussian_log_pdf(rec.value, q, rec.se);
      if (adj) add_mean_partials(d, spec, (rec.value - q) / var, *adj);
    } else {
      throw DomainError("quantile records must enter the model in inverted form");
    }
  }
  for (const InvertedQuantileDatum& dq : spec.quantile_data) {
    const double level = d.cdf(dq.q);
    value += gaussian_log_pdf(dq.tau, level, dq.effective_sd);
    if (adj) {
      const double w = (dq.tau - level) / (dq.effective_sd * dq.effective_sd);
      add_cdf_partials(d, spec, dq.q, w, *adj);
    }
  }
  return value;
}

void backprop(const TractState& state, const ModelSpec& spec, const TractAdjoint& adj,
              std::span<double> grad) {
  const std::size_t K = spec.num_bins();
  std::fill(grad.begin(), grad.end(), 0.0);
  if (K >= 2) {
    // Reverse pass through p_k = r_k z_k, r_{k+1} = r_k (1 - z_k).
    double adj_r = adj.g_p[K - 1];
    double suffix_c = adj.c_logp[K - 1];
    for (std::size_t kk = K - 1; kk-- > 0;) {
      const double z = state.z[kk];
      const double one_minus_z = std::exp(state.log_1mz[kk]);
      const double r = std::exp(state.log_r[kk]);
      const double adj_z = (adj.g_p[kk] - adj_r) * r;
      adj_r = adj.g_p[kk] * z + adj_r * one_minus_z;
      grad[kk] = adj_z * z * one_minus_z + adj.c_logp[kk] * one_minus_z - z * suffix_c;
      suffix_c += adj.c_logp[kk];
    }
  }
  for (std::size_t j = 0; j < state.alpha.size(); ++j) {
    grad[K - 1 + j] = adj.g_alpha[j] * (state.alpha[j] - 1.0) + 1.0;
  }
}

}  // namespace detail

TransformResult transform(const ParameterVector& pv, const ModelSpec& spec) {
  const auto theta = pv.flatten();
  auto state = detail::forward(theta, spec);
  if (!state.ok()) throw DomainError("parameter maps outside the representable simplex");
  return TransformResult{std::move(*state.density), state.log_jacobian};
}

PiecewiseDensity to_density(std::span<const double> theta, const ModelSpec& spec) {
  auto state = detail::forward(theta, spec);
  if (!state.ok()) throw DomainError("parameter maps outside the representable simplex");
  return std::move(*state.density);
}

ParameterVector untransform(const PiecewiseDensity& d, const ModelSpec& spec) {
  const std::size_t K = spec.num_bins();
  ParameterVector pv;
  pv.stick.resize(K - 1);
  // Suffix sums keep the remaining stick accurate when it is tiny.
  std::vector<double> suffix(K + 1, 0.0);
  for (std::size_t k = K; k-- > 0;) {
    if (!(d.probs()[k] > 0.0)) throw DomainError("untransform needs strictly positive probabilities");
    suffix[k] = suffix[k + 1] + d.probs()[k];
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    pv.stick[k] = std::log(d.probs()[k]) - std::log(suffix[k + 1]) + stick_offset(k, K);
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (const auto j = spec.alpha_index(k)) {
      const double a = family_alpha(d.families()[k]);
      if (!(a > 1.0)) throw DomainError("untransform needs alpha > 1");
      pv.log_alpha_shift.push_back(std::log(a - 1.0));
    }
  }
  return pv;
}

double log_prior(const PiecewiseDensity& d, const ModelSpec& spec) {
  double value = dirichlet_log_norm(spec);
  for (std::size_t k = 0; k < spec.num_bins(); ++k) {
    const double a = spec.prior_center[k] / spec.prior_scale;
    value += (a - 1.0) * std::log(d.probs()[k]);
  }
  for (std::size_t k = 0; k < spec.num_bins(); ++k) {
    if (spec.alpha_index(k)) value += alpha_log_prior(family_alpha(d.families()[k]), spec.alpha_prior);
  }
  return value;
}

double log_likelihood(const PiecewiseDensity& d, const ModelSpec& spec) {
  double value = 0.0;
  for (const EstimateRecord& rec : spec.records) value += loglik_record(d, rec);
  for (const InvertedQuantileDatum& dq : spec.quantile_data) {
    value += loglik_inverted_quantile(d, dq);
  }
  return value;
}

double log_posterior(std::span<const double> theta, const ModelSpec& spec,
                     std::span<double> grad) {
  const auto state = detail::forward(theta, spec);
  if (!state.ok()) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return kNegInf;
  }
  if (grad.empty()) return detail::tract_terms(state, spec, nullptr);
  detail::TractAdjoint adj(spec);
  const double value = detail::tract_terms(state, spec, &adj);
  detail::backprop(state, spec, adj, grad);
  return value;
}

double log_posterior(const ParameterVector& pv, const ModelSpec& spec) {
  const auto theta = pv.flatten();
  return log_posterior(theta, spec, {});
}

std::vector<double> gradient(const ParameterVector& pv, const ModelSpec& spec) {
  const auto theta = pv.flatten();
  std::vector<double> grad(theta.size());
  log_posterior(theta, spec, grad);
  return grad;
}

}  // namespace popinterp
