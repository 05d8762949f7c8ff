#pragma once

// Shared between the tract and nested posteriors: forward evaluation of the
// unconstrained map and reverse accumulation of the gradient.

#include <optional>
#include <span>
#include <vector>

#include "popinterp/model.hpp"

namespace popinterp::detail {

struct TractState {
  std::vector<double> z;        // stick fractions, K - 1
  std::vector<double> log_z;    // K - 1
  std::vector<double> log_1mz;  // K - 1
  std::vector<double> log_r;    // remaining stick before bin k, K
  std::vector<double> log_p;    // K
  std::vector<double> alpha;    // J
  std::optional<PiecewiseDensity> density;
  double log_jacobian = 0.0;

  bool ok() const { return density.has_value(); }
};

/// Partial derivatives in constrained coordinates. g_p multiplies p_k,
/// c_logp multiplies log p_k (kept separate so tiny probabilities never
/// get divided by), g_alpha is d/d alpha_j.
struct TractAdjoint {
  std::vector<double> g_p;
  std::vector<double> c_logp;
  std::vector<double> g_alpha;

  explicit TractAdjoint(const ModelSpec& spec)
      : g_p(spec.num_bins(), 0.0), c_logp(spec.num_bins(), 0.0),
        g_alpha(spec.num_pareto(), 0.0) {}
};

TractState forward(std::span<const double> theta, const ModelSpec& spec);

/// log prior + log likelihood + log Jacobian for an evaluated state;
/// accumulates partials into `adj` when given.
double tract_terms(const TractState& state, const ModelSpec& spec, TractAdjoint* adj);

/// Maps constrained partials to the unconstrained gradient (overwrites grad).
void backprop(const TractState& state, const ModelSpec& spec, const TractAdjoint& adj,
              std::span<double> grad);

}  // namespace popinterp::detail
