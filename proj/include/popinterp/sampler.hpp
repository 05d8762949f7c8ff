#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace popinterp {

enum class MassMatrix { diagonal_adaptive, identity };

struct SamplerConfig {
  std::size_t chains = 4;
  std::size_t warmup = 4000;
  std::size_t draws = 4000;
  std::uint64_t seed = 20181;
  double target_accept = 0.8;
  /// Leapfrog budget per transition; the tree depth cap is floor(log2(.)).
  std::size_t max_leapfrog = 1024;
  MassMatrix mass_matrix = MassMatrix::diagonal_adaptive;
  /// Random initial values are uniform on [-init_radius, init_radius].
  double init_radius = 2.0;
  /// Run chains on separate threads. Output does not depend on this.
  bool parallel_chains = true;

  void validate() const;
};

/// Log density with gradient on R^dimension. `evaluate(x, grad)` returns
/// log p(x) and writes d log p / dx into grad. Must be safe to call from
/// several threads at once.
struct LogDensity {
  std::size_t dimension = 0;
  std::function<double(std::span<const double>, std::span<double>)> evaluate;
};

struct ChainResult {
  /// Post-warmup draws, row-major (draw, coordinate).
  std::vector<double> draws;
  std::vector<double> log_density;
  std::vector<double> accept_stat;
  std::vector<int> tree_depth;
  std::vector<int> n_leapfrog;
  std::vector<unsigned char> divergent;
  /// H(selected state) - H(initial state) for every transition.
  std::vector<double> energy_error;
  double step_size = 0.0;
  std::vector<double> inverse_metric;
  std::size_t divergences = 0;
};

struct PosteriorDraws {
  std::size_t dimension = 0;
  std::size_t draws_per_chain = 0;
  std::vector<ChainResult> chains;

  std::size_t num_chains() const { return chains.size(); }
  std::size_t total_draws() const { return chains.size() * draws_per_chain; }
  double at(std::size_t chain, std::size_t draw, std::size_t coord) const {
    return chains[chain].draws[draw * dimension + coord];
  }
  /// Draw m of the chain-major concatenation of all chains.
  std::span<const double> draw(std::size_t m) const;
  /// All draws of one coordinate, one vector per chain.
  std::vector<std::vector<double>> coordinate(std::size_t coord) const;
  std::size_t divergences() const;
};

/// No-U-turn Hamiltonian Monte Carlo with multinomial trajectory sampling,
/// dual-averaging step-size adaptation and windowed diagonal mass-matrix
/// adaptation. Each chain draws from its own generator seeded by
/// derive_seed(cfg.seed, chain), so output is bitwise reproducible for a
/// given seed and config. `init`, when non-empty, is the starting point of
/// every chain; otherwise each chain starts uniformly in the init box.
PosteriorDraws run_hmc(const LogDensity& target, const SamplerConfig& cfg,
                       std::span<const double> init = {});

struct ParameterDiagnostics {
  double rhat = 1.0;
  double ess_bulk = 0.0;
  /// All draws identical: rhat/ess are not meaningful and are left at 1 / 0.
  bool degenerate = false;
};

struct DiagnosticsReport {
  std::vector<ParameterDiagnostics> parameters;
  std::vector<std::size_t> divergences_per_chain;
  std::vector<double> step_sizes;
  double divergence_rate = 0.0;
  /// More than 10% of post-warmup transitions diverged.
  bool high_divergence = false;
  double max_rhat = 1.0;
  double min_ess_bulk = 0.0;
  double mean_accept_stat = 0.0;
};

/// Rank-normalized split R-hat (max of bulk and folded) and bulk ESS of one
/// scalar quantity given per-chain draws. Needs >= 2 chains of >= 100 draws.
ParameterDiagnostics diagnose(std::span<const std::vector<double>> chains);

DiagnosticsReport diagnostics(const PosteriorDraws& pd);

}  // namespace popinterp
