#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "popinterp/cli.hpp"
#include "popinterp/errors.hpp"
#include "popinterp/eval.hpp"
#include "popinterp/ingest.hpp"
#include "popinterp/io.hpp"
#include "popinterp/parallel.hpp"
#include "popinterp/prln.hpp"
#include "popinterp/random.hpp"

namespace popinterp {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

Feature parse_feature(const std::string& name) {
  if (name == "mean") return PopulationMean{};
  if (name == "gini") return Gini{};
  if (name.size() > 1 && name[0] == 'p') {
    const auto v = parse_number(std::string_view(name).substr(1));
    if (v && *v > 0.0 && *v < 100.0) return Percentile{*v / 100.0};
  }
  throw ValidationError("unknown feature '" + name + "' (use pXX, mean or gini)");
}

std::vector<std::string> default_feature_names() {
  std::vector<std::string> names;
  for (double t : fifth_percentile_grid()) names.push_back(feature_name(Percentile{t}));
  names.push_back("mean");
  names.push_back("gini");
  return names;
}

std::uint64_t geo_feature_seed(std::uint64_t seed, const std::string& geo_id) {
  return derive_seed(derive_seed(seed, fnv1a64(geo_id)), 1);
}

namespace {

std::uint64_t geo_sampler_seed(std::uint64_t seed, const std::string& geo_id) {
  return derive_seed(derive_seed(seed, fnv1a64(geo_id)), 0);
}

// Collects outputs so the manifest can list their hashes.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  void write(const std::string& rel, const std::string& content) {
    atomic_write(root_ / rel, content);
    hashes_[rel] = hex64(fnv1a64(content));
  }

  void finish(json manifest) {
    json outputs = json::object();
    for (const auto& [k, v] : hashes_) outputs[k] = v;
    manifest["outputs"] = outputs;
    atomic_write(root_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::map<std::string, std::string> hashes_;
};

json manifest_head(const std::string& command, const json& config) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["compiler"] = __VERSION__;
  m["config"] = config;
  m["config_hash"] = hex64(fnv1a64(config.dump()));
  return m;
}

json input_entry(const fs::path& p) { return json{{"path", p.string()}, {"hash", file_hash(p)}}; }

void report_warnings(const std::vector<std::string>& warnings, std::ostream& log) {
  for (const auto& w : warnings) log << "warning: " << w << "\n";
}

std::vector<Feature> parse_features(const std::vector<std::string>& names) {
  if (names.empty()) throw ValidationError("no features requested");
  std::vector<Feature> out;
  for (const auto& n : names) out.push_back(parse_feature(n));
  return out;
}

void check_features(const FeatureOptions& f) {
  parse_features(f.features);
  if (!(f.interval > 0.0 && f.interval < 1.0)) throw ValidationError("interval must be in (0, 1)");
  if (f.stride == 0) throw ValidationError("stride must be >= 1");
}

std::vector<std::string> resolve_geos(const EstimateTable& table,
                                      const std::vector<std::string>& wanted) {
  if (wanted.empty()) return table.geos;
  for (const auto& g : wanted) {
    if (std::find(table.geos.begin(), table.geos.end(), g) == table.geos.end()) {
      throw ValidationError("geo " + g + " not found in the estimate table");
    }
  }
  return wanted;
}

std::vector<std::string> geo_dirs(const std::vector<std::string>& geos) {
  std::vector<std::string> dirs;
  std::set<std::string> seen;
  for (const auto& g : geos) {
    auto d = safe_name(g);
    if (!seen.insert(d).second) throw ValidationError("geo ids collide as directory name " + d);
    dirs.push_back(std::move(d));
  }
  return dirs;
}

json feature_options_json(const FeatureOptions& f) {
  return json{{"features", f.features},         {"population", f.population},
              {"size_uncertainty", f.size_uncertainty}, {"feature_draws", f.feature_draws},
              {"stride", f.stride},             {"interval", f.interval},
              {"feature_matrix", f.feature_matrix}};
}

json sampler_json(const SamplerConfig& s) {
  return json{{"chains", s.chains},
              {"warmup", s.warmup},
              {"draws", s.draws},
              {"seed", s.seed},
              {"target_accept", s.target_accept},
              {"max_leapfrog", s.max_leapfrog},
              {"mass_matrix", s.mass_matrix == MassMatrix::identity ? "identity" : "diagonal"},
              {"init_radius", s.init_radius}};
}

json tract_options_json(const FitTractOptions& o) {
  return json{{"estimates", o.estimates.string()},
              {"prior", o.prior.string()},
              {"geos", o.geos},
              {"sampler", sampler_json(o.sampler)},
              {"prior_scale", o.prior_scale},
              {"alpha_location", o.alpha_prior.location},
              {"alpha_scale", o.alpha_prior.scale},
              {"features", feature_options_json(o.features)},
              {"max_rhat", o.max_rhat},
              {"se_floor", o.se_floor}};
}

// --------------------------------------------------------------------------
// Model assembly

std::string family_name(FamilyKind k) { return k == FamilyKind::uniform ? "uniform" : "pareto"; }

std::optional<GeoEstimates> load_prior(const fs::path& path, double se_floor) {
  if (path.empty()) return std::nullopt;
  const auto t = ingest_estimates(path, {se_floor});
  if (t.geos.empty()) throw ValidationError(path.string() + ": no rows");
  return geo_estimates(t, t.geos.front());
}

struct TractJob {
  GeoEstimates est;
  ModelSpec spec;
  std::string dir;
  std::size_t population = 1000;
  std::optional<double> size_se;
};

TractJob tract_job(const EstimateTable& table, const std::string& geo,
                   const std::optional<GeoEstimates>& prior, const FitTractOptions& o,
                   std::vector<std::string>& warnings) {
  TractJob job;
  job.est = geo_estimates(table, geo);
  const auto& g = job.est;
  if (!g.median) {
    throw ValidationError("geo " + geo + ": a median row is required to place the uniform bins");
  }
  std::vector<double> center;
  if (prior) {
    if (prior->bins.size() != g.bins.size()) {
      throw ValidationError("geo " + geo + ": prior bins do not match the estimate bins");
    }
    for (std::size_t k = 0; k < g.bins.size(); ++k) {
      if (!(prior->bins[k].kind == g.bins[k].kind)) {
        throw ValidationError("geo " + geo + ": prior bin " + describe(prior->bins[k].kind) +
                              " does not match " + describe(g.bins[k].kind));
      }
    }
    center = renormalized_bins(prior->bins);
  } else {
    center = renormalized_bins(g.bins);
  }
  job.spec = build_spec(g.bins, g.mean, *g.median, center, o.prior_scale);
  job.spec.alpha_prior = o.alpha_prior;
  const auto layout = parse_bins(g.bins);
  for (const auto& q : g.quantiles) {
    try {
      job.spec.quantile_data.push_back(invert_quantile(q, layout.values, job.spec.knots));
    } catch (const Error& e) {
      throw ValidationError("geo " + geo + ": " + describe(q.kind) + ": " + e.what());
    }
  }
  const auto& f = o.features;
  if (f.population > 0) {
    job.population = f.population;
  } else if (g.population) {
    job.population = static_cast<std::size_t>(std::max(1.0, std::round(*g.population)));
  } else {
    warnings.push_back("geo " + geo + ": no population row; synthesizing 1000 units");
  }
  if (f.size_uncertainty) {
    if (g.population_se) {
      job.size_se = *g.population_se;
    } else {
      warnings.push_back("geo " + geo + ": no population SE; population size treated as known");
    }
  }
  return job;
}

json model_json(const TractJob& job, std::uint64_t sampler_seed, std::uint64_t feature_seed) {
  const auto& s = job.spec;
  json fams = json::array();
  for (auto k : s.families) fams.push_back(family_name(k));
  json knots = json::array();
  for (double v : s.knots.finite()) knots.push_back(v);
  json records = json::array();
  for (const auto& r : s.records) records.push_back(describe(r.kind));
  for (const auto& q : s.quantile_data) records.push_back("quantile " + format_number(q.tau));
  json held = json::array();
  for (const auto& r : job.est.held_out) {
    held.push_back(r.tau ? kind_name(r.kind) + " " + format_number(*r.tau) : kind_name(r.kind));
  }
  json m;
  m["geo_id"] = job.est.geo_id;
  m["knots"] = knots;
  m["unbounded_top"] = s.knots.unbounded();
  m["families"] = fams;
  m["median_bin"] = s.median_bin;
  m["prior_center"] = s.prior_center;
  m["prior_scale"] = s.prior_scale;
  m["alpha_prior"] = json{{"location", s.alpha_prior.location},
                          {"scale", s.alpha_prior.scale},
                          {"lower", s.alpha_prior.lower}};
  m["likelihood_terms"] = s.likelihood_terms();
  m["likelihood_records"] = records;
  m["held_out"] = held;
  m["population"] = job.est.population ? json(*job.est.population) : json(nullptr);
  m["population_se"] = job.est.population_se ? json(*job.est.population_se) : json(nullptr);
  m["synthetic_population"] = job.population;
  m["sampler_seed"] = sampler_seed;
  m["feature_seed"] = feature_seed;
  return m;
}

std::string draws_csv(const PosteriorDraws& pd, const std::vector<PiecewiseDensity>& dens,
                      const std::vector<FamilyKind>& families) {
  std::vector<std::string> header{"chain", "draw"};
  for (std::size_t k = 0; k < families.size(); ++k) header.push_back("p" + std::to_string(k + 1));
  for (std::size_t k = 0; k < families.size(); ++k) {
    if (families[k] == FamilyKind::pareto) header.push_back("alpha" + std::to_string(k + 1));
  }
  for (const char* h : {"lp", "accept_stat", "divergent"}) header.emplace_back(h);
  CsvWriter w(header);
  const std::size_t per = pd.draws_per_chain;
  for (std::size_t m = 0; m < dens.size(); ++m) {
    const std::size_t c = m / per, i = m % per;
    w.cell(c).cell(i);
    for (double p : dens[m].probs()) w.cell(p);
    const auto fams = dens[m].families();
    for (std::size_t k = 0; k < families.size(); ++k) {
      if (families[k] == FamilyKind::pareto) w.cell(family_alpha(fams[k]));
    }
    const auto& ch = pd.chains[c];
    w.cell(ch.log_density[i]).cell(ch.accept_stat[i]).cell(std::size_t{ch.divergent[i]});
    w.end_row();
  }
  return w.str();
}

std::string summary_csv(const FeaturePosterior& fp, double level) {
  CsvWriter w({"feature", "mean", "median", "lower", "upper", "level", "draws", "excluded"});
  for (const auto& s : fp.summaries) {
    w.cell(feature_name(s.feature)).cell(s.mean).cell(s.median).cell(s.lower).cell(s.upper);
    w.cell(level).cell(s.draws).cell(s.excluded);
    w.end_row();
  }
  return w.str();
}

std::string feature_matrix_csv(const FeaturePosterior& fp) {
  std::vector<std::string> header{"draw"};
  for (const auto& s : fp.summaries) header.push_back(feature_name(s.feature));
  CsvWriter w(header);
  for (std::size_t m = 0; m < fp.draws; ++m) {
    w.cell(m);
    for (const auto& v : fp.values) w.cell(v[m]);
    w.end_row();
  }
  return w.str();
}

struct DiagnosticVerdict {
  bool ok = true;
  std::string reason;
};

DiagnosticVerdict judge(const DiagnosticsReport& rep, double max_rhat) {
  if (rep.max_rhat > max_rhat) {
    return {false, "max R-hat " + format_number(rep.max_rhat) + " above " + format_number(max_rhat)};
  }
  if (rep.high_divergence) {
    return {false, "divergence rate " + format_number(rep.divergence_rate) + " above 0.1"};
  }
  return {};
}

json diagnostics_json(const DiagnosticsReport& rep, const std::vector<std::string>& names,
                      const DiagnosticVerdict& v, double max_rhat) {
  json params = json::array();
  for (std::size_t i = 0; i < rep.parameters.size(); ++i) {
    const auto& p = rep.parameters[i];
    params.push_back(json{{"name", names[i]},
                          {"rhat", p.rhat},
                          {"ess_bulk", p.ess_bulk},
                          {"degenerate", p.degenerate}});
  }
  return json{{"status", v.ok ? "ok" : "failed"},
              {"reason", v.reason},
              {"max_rhat_threshold", max_rhat},
              {"max_rhat", rep.max_rhat},
              {"min_ess_bulk", rep.min_ess_bulk},
              {"mean_accept_stat", rep.mean_accept_stat},
              {"divergence_rate", rep.divergence_rate},
              {"high_divergence", rep.high_divergence},
              {"divergences_per_chain", rep.divergences_per_chain},
              {"step_sizes", rep.step_sizes},
              {"parameters", params}};
}

std::vector<std::string> parameter_names(const ModelSpec& s, const std::string& prefix) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k + 1 < s.num_bins(); ++k) {
    names.push_back(prefix + "stick" + std::to_string(k + 1));
  }
  for (std::size_t k = 0; k < s.num_bins(); ++k) {
    if (s.families[k] == FamilyKind::pareto) {
      names.push_back(prefix + "log_alpha_shift" + std::to_string(k + 1));
    }
  }
  return names;
}

PopulationFeatureRequest feature_request(const FeatureOptions& f, std::size_t population,
                                         std::optional<double> size_se, std::uint64_t seed,
                                         std::size_t threads) {
  PopulationFeatureRequest req;
  req.features = parse_features(f.features);
  req.population_size = population;
  req.size_se = size_se;
  req.draws_used = f.feature_draws;
  req.stride = f.stride;
  req.interval_level = f.interval;
  req.seed = seed;
  req.threads = threads;
  return req;
}

FeaturePosterior features_of(const std::vector<PiecewiseDensity>& all,
                             const PopulationFeatureRequest& req) {
  std::vector<PiecewiseDensity> chosen;
  for (std::size_t m : select_draws(all.size(), req.stride, req.draws_used)) {
    chosen.push_back(all[m]);
  }
  return feature_posterior(chosen, req);
}

// Files of one fitted area.
struct GeoOutput {
  std::string status = "ok";
  bool failed = false;
  std::map<std::string, std::string> files;
  json summary;
};

void geo_feature_outputs(GeoOutput& out, const std::vector<PiecewiseDensity>& dens,
                         const PopulationFeatureRequest& req, bool matrix) {
  const auto fp = features_of(dens, req);
  out.files["summary.csv"] = summary_csv(fp, req.interval_level);
  if (matrix) out.files["feature_draws.csv"] = feature_matrix_csv(fp);
  if (fp.floored_sizes > 0) out.summary["floored_population_sizes"] = fp.floored_sizes;
}

}  // namespace

// --------------------------------------------------------------------------
// fit-tract

int command_fit_tract(const FitTractOptions& o, std::ostream& log) {
  check_features(o.features);
  o.sampler.validate();
  const auto table = ingest_estimates(o.estimates, {o.se_floor});
  std::vector<std::string> warnings = table.warnings;
  const auto geos = resolve_geos(table, o.geos);
  const auto dirs = geo_dirs(geos);
  const auto prior = load_prior(o.prior, o.se_floor);

  std::vector<TractJob> jobs;
  for (std::size_t i = 0; i < geos.size(); ++i) {
    jobs.push_back(tract_job(table, geos[i], prior, o, warnings));
    jobs.back().dir = dirs[i];
  }
  report_warnings(warnings, log);

  const bool many = jobs.size() > 1;
  std::vector<GeoOutput> outputs(jobs.size());
  parallel_for(
      jobs.size(),
      [&](std::size_t j) {
        const auto& job = jobs[j];
        const auto& geo = job.est.geo_id;
        auto& out = outputs[j];
        const auto sseed = geo_sampler_seed(o.sampler.seed, geo);
        const auto fseed = geo_feature_seed(o.sampler.seed, geo);
        out.files["model.json"] = model_json(job, sseed, fseed).dump(2) + "\n";
        out.summary = json{{"geo_id", geo},
                           {"dir", job.dir},
                           {"sampler_seed", sseed},
                           {"feature_seed", fseed},
                           {"likelihood_terms", job.spec.likelihood_terms()},
                           {"held_out_rows", job.est.held_out.size()},
                           {"synthetic_population", job.population}};

        const ModelSpec& spec = job.spec;
        LogDensity target{spec.dimension(), [&spec](std::span<const double> x, std::span<double> g) {
                            return log_posterior(x, spec, g);
                          }};
        SamplerConfig sc = o.sampler;
        sc.seed = sseed;
        if (many) sc.parallel_chains = false;
        PosteriorDraws pd;
        try {
          pd = run_hmc(target, sc);
        } catch (const InitializationError& e) {
          out.failed = true;
          out.status = std::string("initialization failed: ") + e.what();
          out.summary["status"] = out.status;
          return;
        }
        const auto rep = diagnostics(pd);
        const auto verdict = judge(rep, o.max_rhat);
        out.failed = !verdict.ok;
        out.status = verdict.ok ? "ok" : "diagnostics failed: " + verdict.reason;
        out.files["diagnostics.json"] =
            diagnostics_json(rep, parameter_names(spec, ""), verdict, o.max_rhat).dump(2) + "\n";

        std::vector<PiecewiseDensity> dens;
        dens.reserve(pd.total_draws());
        for (std::size_t m = 0; m < pd.total_draws(); ++m) dens.push_back(to_density(pd.draw(m), spec));
        out.files["draws.csv"] = draws_csv(pd, dens, spec.families);
        const auto req = feature_request(o.features, job.population, job.size_se, fseed,
                                         many ? 1 : o.threads);
        geo_feature_outputs(out, dens, req, o.features.feature_matrix);
        out.summary["status"] = out.status;
        out.summary["max_rhat"] = rep.max_rhat;
        out.summary["min_ess_bulk"] = rep.min_ess_bulk;
        out.summary["divergences"] = pd.divergences();
      },
      many ? o.threads : 1);

  OutputDir dir(o.out);
  EstimateTable kept = table;
  std::erase_if(kept.rows, [&](const EstimateTableRow& r) {
    return std::find(geos.begin(), geos.end(), r.geo_id) == geos.end();
  });
  dir.write("estimates.csv", canonical_estimates_csv(kept));
  json geo_list = json::array();
  int code = kExitOk;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (const auto& [name, content] : outputs[j].files) dir.write(jobs[j].dir + "/" + name, content);
    geo_list.push_back(outputs[j].summary);
    if (outputs[j].failed) {
      code = kExitSampler;
      log << "error: geo " << jobs[j].est.geo_id << ": " << outputs[j].status << "\n";
    }
  }
  auto m = manifest_head("fit-tract", tract_options_json(o));
  m["seed"] = o.sampler.seed;
  json inputs{{"estimates", input_entry(o.estimates)}};
  if (!o.prior.empty()) inputs["prior"] = input_entry(o.prior);
  m["inputs"] = inputs;
  m["geos"] = geo_list;
  m["warnings"] = warnings;
  dir.finish(m);
  return code;
}

// --------------------------------------------------------------------------
// fit-nested

int command_fit_nested(const FitNestedOptions& no, std::ostream& log) {
  const auto& o = no.tract;
  check_features(o.features);
  o.sampler.validate();
  const auto table = ingest_estimates(o.estimates, {o.se_floor});
  std::vector<std::string> warnings = table.warnings;
  const auto geos = resolve_geos(table, o.geos);
  const auto dirs = geo_dirs(geos);
  const auto prior = load_prior(o.prior, o.se_floor);

  std::vector<TractJob> jobs;
  std::vector<ModelSpec> specs;
  std::vector<double> pops;
  for (std::size_t i = 0; i < geos.size(); ++i) {
    jobs.push_back(tract_job(table, geos[i], prior, o, warnings));
    jobs.back().dir = dirs[i];
    if (!jobs.back().est.population) {
      throw ValidationError("geo " + geos[i] + ": the nested model needs a population row");
    }
    specs.push_back(jobs.back().spec);
    pops.push_back(*jobs.back().est.population);
  }

  const auto pums = ingest_pums(no.pums);
  std::set<std::string> ids;
  for (const auto& r : pums) ids.insert(r.puma_id);
  std::string puma = no.puma;
  if (puma.empty()) {
    if (ids.size() > 1) throw ValidationError("PUMS file holds several puma ids; choose one with --puma");
    if (!ids.empty()) puma = *ids.begin();
  } else if (!ids.count(puma)) {
    throw ValidationError("puma " + puma + " not found in the PUMS file");
  }
  std::vector<WeightedObservation> records;
  for (const auto& r : pums) {
    if (r.puma_id == puma) records.push_back({r.income, r.weight});
  }
  if (records.empty()) warnings.push_back("no PUMS records; the nested fit reduces to independent tracts");
  report_warnings(warnings, log);

  const auto ns = make_nested_spec(specs, pops, records);
  LogDensity target{ns.dimension(), [&ns](std::span<const double> x, std::span<double> g) {
                      return log_posterior_nested(x, ns, g);
                    }};
  SamplerConfig sc = o.sampler;
  sc.seed = derive_seed(o.sampler.seed, 0);
  OutputDir dir(o.out);
  auto m = manifest_head("fit-nested", json{{"tract", tract_options_json(o)},
                                            {"pums", no.pums.string()},
                                            {"puma", no.puma}});
  m["seed"] = o.sampler.seed;
  m["inputs"] = json{{"estimates", input_entry(o.estimates)}, {"pums", input_entry(no.pums)}};
  if (!o.prior.empty()) m["inputs"]["prior"] = input_entry(o.prior);
  m["puma"] = puma;
  m["pums_records"] = records.size();
  m["sampler_seed"] = sc.seed;

  PosteriorDraws pd;
  try {
    pd = run_hmc(target, sc);
  } catch (const InitializationError& e) {
    m["status"] = std::string("initialization failed: ") + e.what();
    m["warnings"] = warnings;
    dir.finish(m);
    throw;
  }
  const auto rep = diagnostics(pd);
  const auto verdict = judge(rep, o.max_rhat);
  std::vector<std::string> names;
  for (std::size_t r = 0; r < jobs.size(); ++r) {
    for (auto& n : parameter_names(jobs[r].spec, jobs[r].est.geo_id + ".")) names.push_back(n);
  }
  dir.write("diagnostics.json", diagnostics_json(rep, names, verdict, o.max_rhat).dump(2) + "\n");

  std::vector<std::vector<PiecewiseDensity>> dens(jobs.size());
  for (std::size_t mm = 0; mm < pd.total_draws(); ++mm) {
    auto d = nested_densities(pd.draw(mm), ns);
    for (std::size_t r = 0; r < jobs.size(); ++r) dens[r].push_back(std::move(d[r]));
  }
  dir.write("estimates.csv", canonical_estimates_csv(table));
  json geo_list = json::array();
  for (std::size_t r = 0; r < jobs.size(); ++r) {
    const auto& job = jobs[r];
    const auto fseed = geo_feature_seed(o.sampler.seed, job.est.geo_id);
    GeoOutput out;
    out.files["model.json"] = model_json(job, sc.seed, fseed).dump(2) + "\n";
    out.files["draws.csv"] = draws_csv(pd, dens[r], job.spec.families);
    const auto req = feature_request(o.features, job.population, job.size_se, fseed, o.threads);
    geo_feature_outputs(out, dens[r], req, o.features.feature_matrix);
    for (const auto& [name, content] : out.files) dir.write(job.dir + "/" + name, content);
    json s{{"geo_id", job.est.geo_id},
           {"dir", job.dir},
           {"feature_seed", fseed},
           {"likelihood_terms", job.spec.likelihood_terms()},
           {"held_out_rows", job.est.held_out.size()},
           {"population", pops[r]},
           {"synthetic_population", job.population}};
    if (out.summary.contains("floored_population_sizes")) {
      s["floored_population_sizes"] = out.summary["floored_population_sizes"];
    }
    geo_list.push_back(s);
  }
  m["status"] = verdict.ok ? "ok" : "diagnostics failed: " + verdict.reason;
  m["max_rhat"] = rep.max_rhat;
  m["divergences"] = pd.divergences();
  m["geos"] = geo_list;
  m["warnings"] = warnings;
  dir.finish(m);
  if (!verdict.ok) {
    log << "error: nested fit: " << verdict.reason << "\n";
    return kExitSampler;
  }
  return kExitOk;
}

// --------------------------------------------------------------------------
// Loading fits

FitArtifacts load_fit(const fs::path& root) {
  json m;
  try {
    m = json::parse(read_file(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw ValidationError((root / "manifest.json").string() + ": " + e.what());
  }
  FitArtifacts fa;
  fa.command = m.value("command", "");
  if (fa.command != "fit-tract" && fa.command != "fit-nested") {
    throw ValidationError(root.string() + " is not a fit directory");
  }
  for (const auto& g : m.at("geos")) {
    GeoFit gf;
    gf.geo_id = g.at("geo_id").get<std::string>();
    gf.dir = root / g.at("dir").get<std::string>();
    if (!fs::exists(gf.dir / "draws.csv")) {
      throw ValidationError("geo " + gf.geo_id + " has no draws (failed fit)");
    }
    const auto model = json::parse(read_file(gf.dir / "model.json"));
    gf.knots = KnotVector(model.at("knots").get<std::vector<double>>(),
                          model.at("unbounded_top").get<bool>());
    for (const auto& f : model.at("families")) {
      gf.families.push_back(f.get<std::string>() == "uniform" ? FamilyKind::uniform
                                                              : FamilyKind::pareto);
    }
    if (!model.at("population").is_null()) gf.population = model["population"].get<double>();
    if (!model.at("population_se").is_null()) {
      gf.population_se = model["population_se"].get<double>();
    }

    const auto csv = read_csv(gf.dir / "draws.csv");
    const std::size_t K = gf.families.size();
    std::vector<std::size_t> pcol(K), acol(K, 0);
    for (std::size_t k = 0; k < K; ++k) {
      const auto c = csv.column("p" + std::to_string(k + 1));
      if (!c) throw ValidationError("draws.csv of " + gf.geo_id + " lacks p" + std::to_string(k + 1));
      pcol[k] = *c;
      if (gf.families[k] == FamilyKind::pareto) {
        const auto a = csv.column("alpha" + std::to_string(k + 1));
        if (!a) throw ValidationError("draws.csv of " + gf.geo_id + " lacks alpha" + std::to_string(k + 1));
        acol[k] = *a;
      }
    }
    const auto ccol = csv.column("chain");
    std::size_t chains = 0;
    for (const auto& row : csv.rows) {
      std::vector<double> p(K);
      std::vector<BinFamily> fam;
      for (std::size_t k = 0; k < K; ++k) {
        p[k] = parse_number(row[pcol[k]]).value_or(NAN);
        if (gf.families[k] == FamilyKind::uniform) {
          fam.emplace_back(Uniform{});
        } else {
          const double a = parse_number(row[acol[k]]).value_or(NAN);
          if (gf.knots.bin_is_unbounded(k)) fam.emplace_back(UnboundedPareto{a});
          else fam.emplace_back(TruncatedPareto{a});
        }
      }
      gf.densities.emplace_back(gf.knots, std::move(p), std::move(fam));
      if (ccol) chains = std::max(chains, static_cast<std::size_t>(std::stoull(row[*ccol])) + 1);
    }
    gf.chains = chains;
    gf.draws_per_chain = chains ? gf.densities.size() / chains : 0;
    fa.geos.push_back(std::move(gf));
  }
  return fa;
}

// --------------------------------------------------------------------------
// predict

int command_predict(const PredictOptions& o, std::ostream& log) {
  check_features(o.features);
  const auto fit = load_fit(o.fit);
  std::vector<std::string> warnings;
  OutputDir dir(o.out);
  json geo_list = json::array();
  for (const auto& g : fit.geos) {
    std::size_t population = 1000;
    if (o.features.population > 0) {
      population = o.features.population;
    } else if (g.population) {
      population = static_cast<std::size_t>(std::max(1.0, std::round(*g.population)));
    } else {
      warnings.push_back("geo " + g.geo_id + ": no population row; synthesizing 1000 units");
    }
    std::optional<double> size_se;
    if (o.features.size_uncertainty) size_se = g.population_se;
    const auto fseed = geo_feature_seed(o.seed, g.geo_id);
    const auto req = feature_request(o.features, population, size_se, fseed, o.threads);
    GeoOutput out;
    geo_feature_outputs(out, g.densities, req, o.features.feature_matrix);
    const auto sub = safe_name(g.geo_id);
    for (const auto& [name, content] : out.files) dir.write(sub + "/" + name, content);
    geo_list.push_back(json{{"geo_id", g.geo_id},
                            {"dir", sub},
                            {"feature_seed", fseed},
                            {"synthetic_population", population},
                            {"draws", g.densities.size()}});
  }
  report_warnings(warnings, log);
  auto m = manifest_head("predict", json{{"fit", o.fit.string()},
                                         {"features", feature_options_json(o.features)},
                                         {"seed", o.seed}});
  m["seed"] = o.seed;
  m["inputs"] = json{{"fit_manifest", input_entry(o.fit / "manifest.json")}};
  m["geos"] = geo_list;
  m["warnings"] = warnings;
  dir.finish(m);
  return kExitOk;
}

// --------------------------------------------------------------------------
// prln

int command_prln(const PrlnOptions& o, std::ostream& log) {
  const auto features = parse_features(o.features);
  if (o.gini_population == 0) throw ValidationError("gini population must be positive");
  const auto table = ingest_estimates(o.estimates, {o.se_floor});
  std::vector<std::string> warnings = table.warnings;
  const auto geos = resolve_geos(table, o.geos);

  CsvWriter est({"geo_id", "feature", "value"});
  CsvWriter fitw({"geo_id", "bin", "lower", "upper", "prob", "family", "alpha"});
  CsvWriter fb({"geo_id", "bin", "lower", "upper", "rule"});
  json geo_list = json::array();
  int code = kExitOk;
  for (const auto& geo : geos) {
    json entry{{"geo_id", geo}};
    try {
      const auto g = geo_estimates(table, geo);
      std::optional<double> hint;
      if (o.median_hint && g.median) hint = g.median->value;
      const auto fit = prln_fit(g.bins, hint);
      std::vector<double> vals;
      try {
        vals = prln_features(fit, features, o.gini_population, o.gini_seed);
      } catch (const UndefinedFeatureError& e) {
        vals.assign(features.size(), NAN);
        warnings.push_back("geo " + geo + ": " + e.what());
      }
      for (std::size_t f = 0; f < features.size(); ++f) {
        est.cell(geo).cell(feature_name(features[f])).cell(vals[f]);
        est.end_row();
      }
      const auto layout = parse_bins(g.bins);
      const std::size_t K = fit.probs().size();
      for (std::size_t k = 0; k < K; ++k) {
        std::string family = fit.alphas()[k] > 0.0 ? "pareto" : "uniform";
        if (fit.has_atom() && k + 1 == K) family = "point_mass";
        fitw.cell(geo).cell(k + 1).cell(layout.knots.lower(k)).cell(layout.knots.upper(k));
        fitw.cell(fit.probs()[k]).cell(family).cell(fit.alphas()[k]);
        fitw.end_row();
      }
      for (const auto& f : fit.fallbacks()) {
        fb.cell(geo).cell(f.bin + 1).cell(layout.knots.lower(f.bin)).cell(layout.knots.upper(f.bin));
        fb.cell(rule_name(f.rule));
        fb.end_row();
        log << "note: geo " << geo << ": bin " << f.bin + 1 << ": " << rule_name(f.rule) << "\n";
      }
      entry["status"] = "ok";
      entry["median"] = fit.median();
      entry["median_bin"] = fit.median_bin() + 1;
      entry["fallbacks"] = fit.fallbacks().size();
    } catch (const DegenerateInputError& e) {
      entry["status"] = std::string("failed: ") + e.what();
      log << "error: geo " << geo << ": " << e.what() << "\n";
      code = kExitValidation;
    }
    geo_list.push_back(entry);
  }
  report_warnings(warnings, log);
  OutputDir dir(o.out);
  dir.write("estimates.csv", est.str());
  dir.write("fit.csv", fitw.str());
  dir.write("fallbacks.csv", fb.str());
  auto m = manifest_head("prln", json{{"estimates", o.estimates.string()},
                                      {"geos", o.geos},
                                      {"features", o.features},
                                      {"median_hint", o.median_hint},
                                      {"gini_population", o.gini_population},
                                      {"gini_seed", o.gini_seed},
                                      {"se_floor", o.se_floor}});
  m["seed"] = o.gini_seed;
  m["inputs"] = json{{"estimates", input_entry(o.estimates)}};
  m["geos"] = geo_list;
  m["warnings"] = warnings;
  dir.finish(m);
  return code;
}

// --------------------------------------------------------------------------
// simulate

int command_simulate(const SimulateOptions& o, std::ostream& log) {
  if (o.sim.fit_model) o.sim.sampler.validate();
  const auto bundle = make_world(o.world);
  const auto& world = bundle.world;
  log << "world: " << world.households.size() << " households in " << world.num_tracts()
      << " tracts, " << world.num_strata() << " strata\n";
  const auto res = run_simulation(world, bundle.reference, o.sim);
  log << "fits: " << res.outcomes.size() << ", failures: " << res.failures
      << ", missing tracts: " << res.missing << "\n";

  std::vector<std::string> fnames;
  for (const auto& f : res.features) fnames.push_back(feature_name(f));
  const auto& breaks = o.sim.breaks;
  auto bin_label = [&](std::size_t k) {
    return "bin" + std::to_string(k + 1);
  };

  OutputDir dir(o.out);
  {
    CsvWriter w({"tract", "households", "sdist", "W"});
    for (std::size_t t = 0; t < world.num_tracts(); ++t) {
      w.cell(t + 1).cell(world.tract_targets[t]).cell(world.sdist[t]).cell(world.W[t]);
      w.end_row();
    }
    dir.write("world.csv", w.str());
  }
  {
    std::vector<std::string> h{"tract", "population", "mean"};
    for (const auto& n : fnames) h.push_back(n);
    for (std::size_t k = 0; k < breaks.size(); ++k) h.push_back(bin_label(k));
    CsvWriter w(h);
    for (std::size_t t = 0; t < res.truth.size(); ++t) {
      const auto& tr = res.truth[t];
      w.cell(t + 1).cell(tr.population).cell(tr.mean);
      for (double v : tr.percentiles) w.cell(v);
      w.cell(tr.gini);
      for (double v : tr.bins) w.cell(v);
      w.end_row();
    }
    dir.write("truth.csv", w.str());
  }
  auto metric_table = [&](const std::vector<MetricRow>& rows) {
    std::vector<std::string> h{"metric", "estimator"};
    for (const auto& n : fnames) h.push_back(n);
    CsvWriter w(h);
    for (const auto& r : rows) {
      w.cell(r.metric).cell(estimator_name(r.estimator));
      for (double v : r.values) w.cell(v);
      w.end_row();
    }
    return w.str();
  };
  dir.write("metrics.csv", metric_table(res.metrics));
  dir.write("relative.csv", metric_table(res.relative));
  {
    CsvWriter w({"feature", "coverage_truth", "coverage_prln"});
    for (std::size_t f = 0; f < fnames.size(); ++f) {
      w.cell(fnames[f]).cell(res.coverage_truth[f]).cell(res.coverage_prln[f]);
      w.end_row();
    }
    dir.write("coverage.csv", w.str());
  }
  {
    CsvWriter w({"rep", "tract", "fitted", "failure", "feature", "truth", "posterior_mean",
                 "posterior_median", "prln", "direct", "lower", "upper"});
    for (const auto& oc : res.outcomes) {
      for (std::size_t f = 0; f < fnames.size(); ++f) {
        w.cell(oc.rep + 1).cell(oc.tract + 1).cell(oc.fitted ? "1" : "0").cell(oc.failure);
        w.cell(fnames[f]).cell(oc.truth.empty() ? NAN : oc.truth[f]);
        for (std::size_t e = 0; e < 4; ++e) w.cell(oc.estimates.empty() ? NAN : oc.estimates[e][f]);
        w.cell(oc.lower.empty() ? NAN : oc.lower[f]).cell(oc.upper.empty() ? NAN : oc.upper[f]);
        w.end_row();
      }
    }
    dir.write("outcomes.csv", w.str());
  }
  {
    // Monte Carlo check of the direct bin estimates against the truth.
    CsvWriter w({"tract", "bin", "lower", "upper", "truth", "mean_estimate", "mc_se", "z", "reps"});
    for (std::size_t t = 0; t < res.truth.size(); ++t) {
      for (std::size_t k = 0; k < breaks.size(); ++k) {
        std::vector<double> v;
        for (const auto& oc : res.outcomes) {
          if (oc.tract == t && !oc.direct_bins.empty()) v.push_back(oc.direct_bins[k]);
        }
        const double truth = res.truth[t].bins[k];
        const double n = static_cast<double>(v.size());
        const double mean = v.empty() ? NAN : std::accumulate(v.begin(), v.end(), 0.0) / n;
        const double se = v.size() > 1 ? std::sqrt(sample_variance(v) / n) : NAN;
        w.cell(t + 1).cell(k + 1).cell(breaks[k]);
        w.cell(k + 1 < breaks.size() ? breaks[k + 1] : HUGE_VAL);
        w.cell(truth).cell(mean).cell(se).cell(se > 0 ? (mean - truth) / se : NAN).cell(v.size());
        w.end_row();
      }
    }
    dir.write("bias.csv", w.str());
  }

  json config{{"tracts", o.world.tracts},
              {"households", o.world.households},
              {"strata", o.world.strata},
              {"tract_spread", o.world.tract_spread},
              {"world_seed", o.world.seed},
              {"reps", o.sim.n_reps},
              {"fraction", o.sim.fraction},
              {"replicates", o.sim.replicates},
              {"breaks", o.sim.breaks},
              {"sampler", sampler_json(o.sim.sampler)},
              {"feature_draws", o.sim.feature_draws},
              {"interval", o.sim.interval_level},
              {"fit_model", o.sim.fit_model},
              {"seed", o.sim.seed}};
  auto m = manifest_head("simulate", config);
  m["seed"] = o.sim.seed;
  m["inputs"] = json::object();
  m["fits"] = res.outcomes.size();
  m["failures"] = res.failures;
  m["missing_tracts"] = res.missing;
  dir.finish(m);
  return kExitOk;
}

// --------------------------------------------------------------------------
// evaluate

namespace {

std::string row_type(const EstimateTableRow& r) {
  switch (r.kind) {
    case RowKind::bin: return "bins";
    case RowKind::mean: return "mean";
    case RowKind::gini: return "gini";
    case RowKind::median:
    case RowKind::quantile: return feature_name(Percentile{*r.tau});
    default: return "";
  }
}

std::string row_item(const EstimateTableRow& r) {
  if (r.kind == RowKind::bin) {
    return format_number(*r.lower) + "-" + (std::isfinite(*r.upper) ? format_number(*r.upper) : "");
  }
  return row_type(r);
}

}  // namespace

int command_evaluate(const EvaluateOptions& o, std::ostream& log) {
  if (o.stride == 0) throw ValidationError("stride must be >= 1");
  const auto fit = load_fit(o.fit);
  const fs::path est_path = o.estimates.empty() ? o.fit / "estimates.csv" : o.estimates;
  const auto table = ingest_estimates(est_path, {o.se_floor});
  report_warnings(table.warnings, log);

  // Types present among the fitted areas, in order of appearance.
  std::vector<std::string> present;
  for (const auto& g : fit.geos) {
    for (const auto* r : table.rows_for(g.geo_id)) {
      const auto t = row_type(*r);
      if (!t.empty() && std::find(present.begin(), present.end(), t) == present.end()) {
        present.push_back(t);
      }
    }
  }
  const auto types = o.types.empty() ? present : o.types;
  for (const auto& t : types) {
    if (std::find(present.begin(), present.end(), t) == present.end()) {
      throw ValidationError("cannot score '" + t +
                            "': it is absent from both the fit and the held-out data");
    }
  }
  auto wanted = [&](const std::string& t) {
    return std::find(types.begin(), types.end(), t) != types.end();
  };

  struct Scored {
    std::string type, geo, item;
    bool held_out;
    double observed, se, predicted;
    std::vector<double> loglik;
  };
  std::vector<std::vector<Scored>> per_geo(fit.geos.size());
  parallel_for(
      fit.geos.size(),
      [&](std::size_t gi) {
        const auto& g = fit.geos[gi];
        std::vector<PiecewiseDensity> dens;
        for (std::size_t m : select_draws(g.densities.size(), o.stride, o.feature_draws)) {
          dens.push_back(g.densities[m]);
        }
        std::vector<Feature> feats;
        std::vector<std::string> fnames;
        for (const auto* r : table.rows_for(g.geo_id)) {
          const auto t = row_type(*r);
          const bool predictive = r->kind == RowKind::gini || r->kind == RowKind::quantile ||
                                  r->kind == RowKind::median;
          if (!predictive || !wanted(t)) continue;
          if (std::find(fnames.begin(), fnames.end(), t) != fnames.end()) continue;
          fnames.push_back(t);
          feats.push_back(r->kind == RowKind::gini ? Feature{Gini{}} : Feature{Percentile{*r->tau}});
        }
        FeaturePosterior fp;
        if (!feats.empty()) {
          PopulationFeatureRequest req;
          req.features = feats;
          req.population_size =
              g.population ? static_cast<std::size_t>(std::max(1.0, std::round(*g.population))) : 1000;
          req.seed = geo_feature_seed(o.seed, g.geo_id);
          req.threads = 1;
          fp = feature_posterior(dens, req);
        }
        for (const auto* r : table.rows_for(g.geo_id)) {
          const auto t = row_type(*r);
          if (t.empty() || !wanted(t)) continue;
          Scored s{t, g.geo_id, row_item(*r), r->held_out, r->value, *r->se, 0.0, {}};
          if (r->kind == RowKind::bin || r->kind == RowKind::mean) {
            EstimateRecord rec{r->kind == RowKind::bin ? EstimateKind{BinProportion{*r->lower, *r->upper}}
                                                       : EstimateKind{MeanEstimate{}},
                               r->value, *r->se};
            s.loglik = loglik_draws(dens, rec);
            double sum = 0.0;
            for (const auto& d : dens) sum += evaluate_functional(d, rec.kind);
            s.predicted = sum / static_cast<double>(dens.size());
          } else {
            const auto f = static_cast<std::size_t>(
                std::find(fnames.begin(), fnames.end(), t) - fnames.begin());
            std::vector<double> pred;
            for (double v : fp.values[f]) {
              if (!std::isnan(v)) pred.push_back(v);
            }
            s.loglik = loglik_draws(pred, r->value, *r->se);
            s.predicted = fp.summaries[f].mean;
          }
          per_geo[gi].push_back(std::move(s));
        }
      },
      o.threads);

  std::vector<WaicObservation> obs;
  std::vector<const Scored*> flat;
  for (const auto& t : types) {
    for (std::size_t gi = 0; gi < fit.geos.size(); ++gi) {
      bool any = false;
      for (const auto& s : per_geo[gi]) {
        if (s.type != t) continue;
        any = true;
        const std::string id = t == "bins" ? s.geo + ":" + s.item : s.geo;
        obs.push_back({id, t, s.loglik});
        flat.push_back(&s);
      }
      if (!any) obs.push_back({fit.geos[gi].geo_id, t, std::nullopt});
    }
  }
  const auto report = waic_by_type(obs);

  CsvWriter waic({"type", "n", "waic", "se", "excluded", "held_out"});
  CsvWriter metrics_w({"type", "n", "rmse", "mad", "rmspe", "mape", "zero_truths"});
  for (const auto& grp : report.groups) {
    std::size_t held = 0, total = 0;
    std::vector<double> est, truth;
    for (const auto* s : flat) {
      if (s->type != grp.type) continue;
      ++total;
      held += s->held_out ? 1 : 0;
      est.push_back(s->predicted);
      truth.push_back(s->observed);
    }
    const std::string role = held == total ? "1" : (held == 0 ? "0" : "mixed");
    waic.cell(grp.type).cell(grp.pointwise.size()).cell(grp.waic_sum).cell(grp.se);
    waic.cell(grp.excluded).cell(role);
    waic.end_row();
    const auto mt = metrics(est, truth);
    metrics_w.cell(grp.type).cell(mt.n).cell(mt.rmse).cell(mt.mad).cell(mt.rmspe).cell(mt.mape);
    metrics_w.cell(mt.zero_truths);
    metrics_w.end_row();
  }
  CsvWriter pw({"type", "geo_id", "item", "held_out", "observed", "se", "predicted_mean", "waic",
                "degenerate"});
  for (const auto* s : flat) {
    const auto term = waic_term(s->loglik);
    pw.cell(s->type).cell(s->geo).cell(s->item).cell(s->held_out ? "1" : "0");
    pw.cell(s->observed).cell(s->se).cell(s->predicted).cell(term.value);
    pw.cell(term.degenerate ? "1" : "0");
    pw.end_row();
  }

  OutputDir dir(o.out);
  dir.write("waic.csv", waic.str());
  dir.write("waic_pointwise.csv", pw.str());
  dir.write("point_metrics.csv", metrics_w.str());
  auto m = manifest_head("evaluate", json{{"fit", o.fit.string()},
                                          {"estimates", est_path.string()},
                                          {"types", o.types},
                                          {"feature_draws", o.feature_draws},
                                          {"stride", o.stride},
                                          {"seed", o.seed},
                                          {"se_floor", o.se_floor}});
  m["seed"] = o.seed;
  m["inputs"] = json{{"fit_manifest", input_entry(o.fit / "manifest.json")},
                     {"estimates", input_entry(est_path)}};
  m["types"] = types;
  m["warnings"] = table.warnings;
  dir.finish(m);
  return kExitOk;
}

}  // namespace popinterp
