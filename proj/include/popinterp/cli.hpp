#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "popinterp/density.hpp"
#include "popinterp/model.hpp"
#include "popinterp/predictive.hpp"
#include "popinterp/sampler.hpp"
#include "popinterp/synthpop.hpp"

namespace popinterp {

inline constexpr const char* kVersion = "0.1.0";

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitSampler = 3,
  kExitIo = 4,
};

/// "p5" ... "p95", "mean", "gini"; any "pXX" with 0 < XX < 100 is accepted.
Feature parse_feature(const std::string& name);
/// Every fifth percentile, the mean and the Gini coefficient.
std::vector<std::string> default_feature_names();

struct FeatureOptions {
  std::vector<std::string> features = default_feature_names();
  /// Synthetic population size; 0 uses the geo's population row (1000 when
  /// there is none).
  std::size_t population = 0;
  /// Draw the population size around the population row with its SE.
  bool size_uncertainty = false;
  /// Posterior draws used for features (0 = all after the stride).
  std::size_t feature_draws = 0;
  std::size_t stride = 1;
  double interval = 0.95;
  /// Also write the per-draw feature matrix.
  bool feature_matrix = false;
};

struct FitTractOptions {
  std::filesystem::path estimates;
  std::filesystem::path out;
  /// Estimate CSV whose bin rows give the prior center (first geo used).
  /// Without it each geo's own renormalized bins are used.
  std::filesystem::path prior;
  /// Geo ids to fit (empty = all).
  std::vector<std::string> geos;
  SamplerConfig sampler;
  double prior_scale = kDefaultPriorScale;
  AlphaPrior alpha_prior;
  FeatureOptions features;
  /// Fits with a larger R-hat, or more than 10% divergent transitions, exit 3.
  double max_rhat = 1.05;
  double se_floor = 1e-6;
  /// Worker threads (0 = hardware); results do not depend on it.
  std::size_t threads = 0;
};

struct FitNestedOptions {
  FitTractOptions tract;
  std::filesystem::path pums;
  /// PUMS rows to use; required when the file holds several puma ids.
  std::string puma;
};

struct PrlnOptions {
  std::filesystem::path estimates;
  std::filesystem::path out;
  std::vector<std::string> geos;
  std::vector<std::string> features = default_feature_names();
  /// Use the published median (when present) to choose the uniform bins.
  bool median_hint = false;
  std::size_t gini_population = 100000;
  std::uint64_t gini_seed = 20181;
  double se_floor = 1e-6;
};

struct SimulateOptions {
  std::filesystem::path out;
  WorldConfig world;
  SimulationConfig sim;
};

struct PredictOptions {
  std::filesystem::path fit;
  std::filesystem::path out;
  FeatureOptions features;
  std::uint64_t seed = 20181;
  std::size_t threads = 0;
};

struct EvaluateOptions {
  std::filesystem::path fit;
  /// Defaults to the canonical estimate table saved with the fit.
  std::filesystem::path estimates;
  std::filesystem::path out;
  /// Estimate types to score ("bins", "mean", "p50", "p20", "gini", ...);
  /// empty = every type present.
  std::vector<std::string> types;
  std::size_t feature_draws = 0;
  std::size_t stride = 1;
  std::uint64_t seed = 20181;
  double se_floor = 1e-6;
  std::size_t threads = 0;
};

/// Each command writes its outputs and a manifest.json into opts.out and
/// returns an exit code; validation and I/O problems are thrown.
int command_fit_tract(const FitTractOptions& opts, std::ostream& log);
int command_fit_nested(const FitNestedOptions& opts, std::ostream& log);
int command_prln(const PrlnOptions& opts, std::ostream& log);
int command_simulate(const SimulateOptions& opts, std::ostream& log);
int command_predict(const PredictOptions& opts, std::ostream& log);
int command_evaluate(const EvaluateOptions& opts, std::ostream& log);

/// Fitted draws of one area read back from a fit directory.
struct GeoFit {
  std::string geo_id;
  std::filesystem::path dir;
  KnotVector knots;
  std::vector<FamilyKind> families;
  std::optional<double> population;
  std::optional<double> population_se;
  std::size_t chains = 0;
  std::size_t draws_per_chain = 0;
  /// Chain-major, one density per retained draw.
  std::vector<PiecewiseDensity> densities;
};

struct FitArtifacts {
  std::string command;
  std::vector<GeoFit> geos;
};

FitArtifacts load_fit(const std::filesystem::path& dir);

/// Seed of a geo's feature synthesis (shared by fit and predict).
std::uint64_t geo_feature_seed(std::uint64_t seed, const std::string& geo_id);

/// Full command line entry point: `popinterp [--config FILE] <command> ...`.
/// Maps errors to exit codes and writes the resolved config.toml next to
/// the outputs.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace popinterp
