#include <algorithm>
#include <sstream>

#include <CLI11.hpp>

#include "popinterp/cli.hpp"
#include "popinterp/errors.hpp"
#include "popinterp/io.hpp"

namespace popinterp {

namespace {

void add_sampler_options(CLI::App* s, SamplerConfig& c, std::string& mass) {
  s->add_option("--chains", c.chains, "Chains")->check(CLI::PositiveNumber);
  s->add_option("--warmup", c.warmup, "Warmup iterations per chain");
  s->add_option("--draws", c.draws, "Retained draws per chain")->check(CLI::PositiveNumber);
  s->add_option("--seed", c.seed, "Master seed");
  s->add_option("--target-accept", c.target_accept, "Step-size adaptation target")
      ->check(CLI::Range(0.05, 0.999));
  s->add_option("--max-leapfrog", c.max_leapfrog, "Leapfrog steps per transition")
      ->check(CLI::PositiveNumber);
  s->add_option("--mass-matrix", mass, "diagonal or identity")
      ->check(CLI::IsMember({"diagonal", "identity"}));
  s->add_option("--init-radius", c.init_radius, "Initial values uniform on [-r, r]")
      ->check(CLI::PositiveNumber);
}

void add_feature_options(CLI::App* s, FeatureOptions& f) {
  s->add_option("--features", f.features, "Features: pXX, mean, gini")->delimiter(',');
  s->add_option("--population", f.population,
                "Synthetic population size (0 = population row, else 1000)");
  s->add_flag("--size-uncertainty,!--no-size-uncertainty", f.size_uncertainty,
              "Draw the population size from its estimate and SE");
  s->add_option("--feature-draws", f.feature_draws, "Draws used for features (0 = all)");
  s->add_option("--stride", f.stride, "Take every stride-th draw")->check(CLI::PositiveNumber);
  s->add_option("--interval", f.interval, "Credible interval level")->check(CLI::Range(0.0, 1.0));
  s->add_flag("--feature-matrix,!--no-feature-matrix", f.feature_matrix,
              "Write per-draw feature values");
}

void add_tract_options(CLI::App* s, FitTractOptions& o, std::string& mass, std::string& out,
                       std::string& est, std::string& prior) {
  s->add_option("--estimates", est, "Estimate CSV")->required();
  s->add_option("--out", out, "Output directory")->required();
  s->add_option("--prior", prior, "Estimate CSV whose bins give the prior center");
  s->add_option("--geo", o.geos, "Geo ids to fit (default: all)")->delimiter(',');
  add_sampler_options(s, o.sampler, mass);
  s->add_option("--prior-scale", o.prior_scale, "Dirichlet scale t")->check(CLI::PositiveNumber);
  s->add_option("--alpha-location", o.alpha_prior.location, "Pareto shape prior location");
  s->add_option("--alpha-scale", o.alpha_prior.scale, "Pareto shape prior scale")
      ->check(CLI::PositiveNumber);
  add_feature_options(s, o.features);
  s->add_option("--max-rhat", o.max_rhat, "Largest acceptable R-hat");
  s->add_option("--se-floor", o.se_floor, "Relative floor for zero standard errors")
      ->check(CLI::PositiveNumber);
  s->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
}

MassMatrix mass_of(const std::string& s) {
  return s == "identity" ? MassMatrix::identity : MassMatrix::diagonal_adaptive;
}

// Defaults of list options print as key="[a,b]" while parsed values print
// as key=["a", 1]; rewrite the first form into the second.
std::string canonical_list(const std::string& line) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) return line;
  const std::string value = line.substr(eq + 1);
  if (value.size() < 4 || value.rfind("\"[", 0) != 0 || value.substr(value.size() - 2) != "]\"") {
    return line;
  }
  std::string out = line.substr(0, eq + 1) + "[";
  std::istringstream items(value.substr(2, value.size() - 4));
  std::string item;
  bool first = true;
  while (std::getline(items, item, ',')) {
    const bool number = parse_number(item).has_value();
    out += (first ? "" : ", ") + (number ? item : "\"" + item + "\"");
    first = false;
  }
  return out + "]";
}

// The resolved options of the chosen command, without its output path.
std::string resolved_config(const CLI::App* sub) {
  std::istringstream in(sub->config_to_str(true, false));
  std::string text = "[" + sub->get_name() + "]\n", line;
  while (std::getline(in, line)) {
    if (line.rfind("out=", 0) == 0 || line.rfind("config=", 0) == 0) continue;
    // empty lists are the defaults and do not read back
    if (line.size() > 4 && line.compare(line.size() - 4, 4, "\"{}\"") == 0) continue;
    text += canonical_list(line) + "\n";
  }
  return text;
}

// Lets --config appear after the command name too.
std::vector<std::string> hoist_config(std::vector<std::string> args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      std::vector<std::string> moved{args[i], args[i + 1]};
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      args.insert(args.begin(), moved.begin(), moved.end());
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      auto a = args[i];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      args.insert(args.begin(), a);
      break;
    }
  }
  return args;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distribution interpolation from published aggregate estimates", "popinterp"};
  app.set_config("--config", "", "TOML file with options under [command] sections");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string mass_t = "diagonal", out_t, est_t, prior_t;
  FitTractOptions fit_tract;
  auto* s_tract = app.add_subcommand("fit-tract", "Fit the single-area model to each geo");
  add_tract_options(s_tract, fit_tract, mass_t, out_t, est_t, prior_t);

  std::string mass_n = "diagonal", out_n, est_n, prior_n, pums_n;
  FitNestedOptions fit_nested;
  auto* s_nested = app.add_subcommand("fit-nested", "Joint fit of tracts nested in one PUMA");
  add_tract_options(s_nested, fit_nested.tract, mass_n, out_n, est_n, prior_n);
  s_nested->add_option("--pums", pums_n, "Unit records: income,weight,puma_id")->required();
  s_nested->add_option("--puma", fit_nested.puma, "PUMA id to use");

  PrlnOptions prln;
  std::string out_p, est_p;
  auto* s_prln = app.add_subcommand("prln", "Pareto-linear point estimates from bins");
  s_prln->add_option("--estimates", est_p, "Estimate CSV")->required();
  s_prln->add_option("--out", out_p, "Output directory")->required();
  s_prln->add_option("--geo", prln.geos, "Geo ids (default: all)")->delimiter(',');
  s_prln->add_option("--features", prln.features, "Features: pXX, mean, gini")->delimiter(',');
  s_prln->add_flag("--median-hint,!--no-median-hint", prln.median_hint,
                   "Place the median at the published median");
  s_prln->add_option("--gini-population", prln.gini_population, "Population size for the Gini")
      ->check(CLI::PositiveNumber);
  s_prln->add_option("--gini-seed", prln.gini_seed, "Seed of the Gini population");
  s_prln->add_option("--se-floor", prln.se_floor, "Relative floor for zero standard errors")
      ->check(CLI::PositiveNumber);

  SimulateOptions sim;
  sim.sim.feature_draws = 1000;
  std::string out_s, mass_s = "diagonal";
  auto* s_sim = app.add_subcommand("simulate", "Synthetic-population simulation study");
  s_sim->add_option("--out", out_s, "Output directory")->required();
  s_sim->add_option("--tracts", sim.world.tracts, "Tracts")->check(CLI::PositiveNumber);
  s_sim->add_option("--households", sim.world.households, "Households")->check(CLI::PositiveNumber);
  s_sim->add_option("--strata", sim.world.strata, "Reference strata")->check(CLI::PositiveNumber);
  s_sim->add_option("--tract-spread", sim.world.tract_spread, "Relative spread of tract sizes");
  s_sim->add_option("--world-seed", sim.world.seed, "Seed of the synthetic world");
  s_sim->add_option("--reps", sim.sim.n_reps, "Replications")->check(CLI::PositiveNumber);
  s_sim->add_option("--fraction", sim.sim.fraction, "Sampling fraction")
      ->check(CLI::Range(0.0, 1.0));
  s_sim->add_option("--replicates", sim.sim.replicates, "SDR replicates");
  s_sim->add_option("--breaks", sim.sim.breaks, "Bin lower bounds")->delimiter(',');
  add_sampler_options(s_sim, sim.sim.sampler, mass_s);
  s_sim->add_option("--feature-draws", sim.sim.feature_draws, "Draws used for features (0 = all)");
  s_sim->add_option("--interval", sim.sim.interval_level, "Credible interval level")
      ->check(CLI::Range(0.0, 1.0));
  s_sim->add_flag("--fit-model,!--no-fit-model", sim.sim.fit_model, "Fit the Bayesian model");
  s_sim->add_option("--sim-seed", sim.sim.seed, "Seed of the sampling replications");
  s_sim->add_option("--threads", sim.sim.threads, "Worker threads (0 = all cores)");

  PredictOptions pred;
  std::string fit_r, out_r;
  auto* s_pred = app.add_subcommand("predict", "Posterior predictive features from a fit");
  s_pred->add_option("--fit", fit_r, "Fit output directory")->required();
  s_pred->add_option("--out", out_r, "Output directory")->required();
  add_feature_options(s_pred, pred.features);
  s_pred->add_option("--seed", pred.seed, "Master seed");
  s_pred->add_option("--threads", pred.threads, "Worker threads (0 = all cores)");

  EvaluateOptions ev;
  std::string fit_e, est_e, out_e;
  auto* s_eval = app.add_subcommand("evaluate", "WAIC and point metrics by estimate type");
  s_eval->add_option("--fit", fit_e, "Fit output directory")->required();
  s_eval->add_option("--estimates", est_e, "Estimate CSV (default: the fit's copy)");
  s_eval->add_option("--out", out_e, "Output directory")->required();
  s_eval->add_option("--types", ev.types, "Types to score (default: all present)")->delimiter(',');
  s_eval->add_option("--feature-draws", ev.feature_draws, "Draws used (0 = all)");
  s_eval->add_option("--stride", ev.stride, "Take every stride-th draw")->check(CLI::PositiveNumber);
  s_eval->add_option("--seed", ev.seed, "Master seed");
  s_eval->add_option("--se-floor", ev.se_floor, "Relative floor for zero standard errors")
      ->check(CLI::PositiveNumber);
  s_eval->add_option("--threads", ev.threads, "Worker threads (0 = all cores)");

  std::vector<std::string> args(argv + 1, argv + argc);
  args = hoist_config(std::move(args));
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  std::string out_dir;
  try {
    int rc = kExitOk;
    if (chosen == s_tract) {
      fit_tract.estimates = est_t;
      fit_tract.out = out_dir = out_t;
      fit_tract.prior = prior_t;
      fit_tract.sampler.mass_matrix = mass_of(mass_t);
      rc = command_fit_tract(fit_tract, err);
    } else if (chosen == s_nested) {
      fit_nested.tract.estimates = est_n;
      fit_nested.tract.out = out_dir = out_n;
      fit_nested.tract.prior = prior_n;
      fit_nested.tract.sampler.mass_matrix = mass_of(mass_n);
      fit_nested.pums = pums_n;
      rc = command_fit_nested(fit_nested, err);
    } else if (chosen == s_prln) {
      prln.estimates = est_p;
      prln.out = out_dir = out_p;
      rc = command_prln(prln, err);
    } else if (chosen == s_sim) {
      sim.out = out_dir = out_s;
      sim.sim.sampler.mass_matrix = mass_of(mass_s);
      rc = command_simulate(sim, err);
    } else if (chosen == s_pred) {
      pred.fit = fit_r;
      pred.out = out_dir = out_r;
      rc = command_predict(pred, err);
    } else {
      ev.fit = fit_e;
      ev.estimates = est_e;
      ev.out = out_dir = out_e;
      rc = command_evaluate(ev, err);
    }
    atomic_write(std::filesystem::path(out_dir) / "config.toml", resolved_config(chosen));
    if (rc == kExitOk) out << "wrote " << out_dir << "\n";
    return rc;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InitializationError& e) {
    err << "sampler error: " << e.what() << "\n";
    return kExitSampler;
  } catch (const DiagnosticError& e) {
    err << "diagnostics error: " << e.what() << "\n";
    return kExitSampler;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace popinterp
