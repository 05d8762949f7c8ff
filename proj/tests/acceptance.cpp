// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 when
// any criterion fails. `acceptance 3 6` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "popinterp/cli.hpp"
#include "popinterp/eval.hpp"
#include "popinterp/io.hpp"
#include "popinterp/prln.hpp"
#include "popinterp/synthpop.hpp"
#include "support.hpp"

using namespace popinterp;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void require(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.pass = false;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += what;
  }
}

std::vector<PiecewiseDensity> densities_of(const PosteriorDraws& pd, const ModelSpec& spec) {
  std::vector<PiecewiseDensity> out;
  out.reserve(pd.total_draws());
  for (std::size_t m = 0; m < pd.total_draws(); ++m) out.push_back(to_density(pd.draw(m), spec));
  return out;
}

LogDensity tract_target(const ModelSpec& spec) {
  return {spec.dimension(), [&spec](std::span<const double> x, std::span<double> g) {
            return log_posterior(x, spec, g);
          }};
}

// --------------------------------------------------------------------------

Outcome density_math() {
  Outcome o;
  Rng rng(1001);
  double rt = 0, norm = 0, mean_err = 0, var_err = 0;
  for (int i = 0; i < 1000; ++i) {
    const bool finite = i % 2 == 0;
    const auto d = random_density(rng, finite);
    for (int j = 0; j < 20; ++j) {
      const double tau = rng.uniform_open();
      rt = std::max(rt, std::abs(d.cdf(d.quantile(tau)) - tau));
    }
    const double mass = integrate_bins(d, [](double) { return 1.0; }) +
                        (finite ? 0.0 : d.probs().back());
    norm = std::max(norm, std::abs(mass - 1.0));
    if (finite) {
      const double mu = integrate_bins(d, [](double x) { return x; });
      const double var = integrate_bins(d, [&](double x) { return (x - mu) * (x - mu); });
      mean_err = std::max(mean_err, std::abs(d.mean() - mu) / std::max(std::abs(mu), 1e-300));
      var_err = std::max(var_err, std::abs(d.variance() - var) / var);
    }
  }
  require(o, rt <= 1e-10, "round trip");
  require(o, norm <= 1e-8, "normalization");
  require(o, mean_err <= 1e-6, "mean");
  require(o, var_err <= 1e-6, "variance");
  o.detail = fmt("round trip %.2e, normalization %.2e, mean rel %.2e, variance rel %.2e", rt,
                 norm, mean_err, var_err) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --------------------------------------------------------------------------

double component_err(const std::vector<double>& a, const std::vector<double>& b) {
  return max_rel_err(a, b);
}

double normwise_err(const std::vector<double>& a, const std::vector<double>& b) {
  double err = 0, scale = 1;
  for (std::size_t k = 0; k < a.size(); ++k) {
    err = std::max(err, std::abs(a[k] - b[k]));
    scale = std::max(scale, std::abs(a[k]));
  }
  return err / scale;
}

Outcome gradients() {
  Outcome o;
  const auto truth = acs12_truth();
  const std::vector<double> g(truth.probs().begin(), truth.probs().end());
  auto worst = [](const auto& spec_eval, std::size_t dim, Rng& rng, auto err_fn) {
    double w = 0;
    for (int i = 0; i < 100; ++i) {
      std::vector<double> theta(dim);
      for (auto& x : theta) x = rng.uniform() * 4 - 2;
      std::vector<double> grad(dim);
      spec_eval(theta, std::span<double>(grad));
      const auto fd = central_diff(
          [&](const std::vector<double>& x) { return spec_eval(x, std::span<double>{}); }, theta,
          1e-5);
      w = std::max(w, err_fn(grad, fd));
    }
    return w;
  };

  // Tract-sized errors: 0.02 on bins, 5% on mean and median.
  auto rec = exact_records(truth, 0.05);
  for (auto& b : rec.bins) b.se = 0.02;
  const auto spec = build_spec(rec.bins, rec.mean, rec.median, g);
  Rng rng(2001);
  const double tract = worst(
      [&](const std::vector<double>& x, std::span<double> gr) { return log_posterior(x, spec, gr); },
      spec.dimension(), rng, component_err);

  // 1% errors: difference quotients carry rounding of order eps |f| / h.
  const auto rec1 = exact_records(truth, 0.01);
  const auto spec1 = build_spec(rec1.bins, rec1.mean, rec1.median, g);
  const double tight = worst(
      [&](const std::vector<double>& x, std::span<double> gr) { return log_posterior(x, spec1, gr); },
      spec1.dimension(), rng, normwise_err);

  const auto rec5 = exact_records(truth, 0.05);
  const auto t5 = build_spec(rec5.bins, rec5.mean, rec5.median, g);
  std::vector<WeightedObservation> pums;
  for (int i = 0; i < 50; ++i) pums.push_back({truth.sample_one(rng), 0.5 + 1.5 * rng.uniform()});
  const auto nested = make_nested_spec({t5, t5, t5}, std::vector<double>{300, 500, 200}, pums);
  const double nest = worst(
      [&](const std::vector<double>& x, std::span<double> gr) {
        return log_posterior_nested(x, nested, gr);
      },
      nested.dimension(), rng, component_err);

  require(o, tract <= 1e-6, "tract");
  require(o, tight <= 1e-6, "tract 1% errors");
  require(o, nest <= 1e-6, "nested");
  o.detail = fmt("12-bin spec %.2e, 12-bin 1%% errors (normwise) %.2e, nested 3x50 %.2e", tract,
                 tight, nest) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --------------------------------------------------------------------------

struct GaussCheck {
  double mean_err = 0, var_err = 0, rhat = 0;
};

// Gaussian with covariance cov (row-major dim x dim) and precision prec.
GaussCheck gaussian_run(const std::vector<double>& cov, const std::vector<double>& prec,
                        std::size_t dim, std::uint64_t seed) {
  LogDensity target{dim, [&prec, dim](std::span<const double> x, std::span<double> g) {
                      double v = 0;
                      for (std::size_t i = 0; i < dim; ++i) {
                        double px = 0;
                        for (std::size_t j = 0; j < dim; ++j) px += prec[i * dim + j] * x[j];
                        v -= 0.5 * x[i] * px;
                        if (!g.empty()) g[i] = -px;
                      }
                      return v;
                    }};
  SamplerConfig cfg;
  cfg.seed = seed;
  const auto pd = run_hmc(target, cfg);
  GaussCheck c;
  const double n = static_cast<double>(pd.total_draws());
  for (std::size_t k = 0; k < dim; ++k) {
    double m = 0, m2 = 0;
    for (std::size_t i = 0; i < pd.total_draws(); ++i) m += pd.draw(i)[k];
    m /= n;
    for (std::size_t i = 0; i < pd.total_draws(); ++i) m2 += std::pow(pd.draw(i)[k] - m, 2);
    const double var = m2 / (n - 1);
    const double sd = std::sqrt(cov[k * dim + k]);
    c.mean_err = std::max(c.mean_err, std::abs(m) / sd);
    c.var_err = std::max(c.var_err, std::abs(var / cov[k * dim + k] - 1));
  }
  c.rhat = diagnostics(pd).max_rhat;
  return c;
}

Outcome sampler_calibration() {
  Outcome o;
  const std::size_t d = 5;
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1;
  const auto a = gaussian_run(eye, eye, d, 3001);

  // Random rotation of eigenvalues 1 ... 100 (log spaced).
  Rng rng(3002);
  std::vector<std::vector<double>> q(d, std::vector<double>(d));
  for (std::size_t i = 0; i < d; ++i) {
    for (auto& v : q[i]) v = rng.normal();
    for (std::size_t j = 0; j < i; ++j) {
      const double dot = std::inner_product(q[i].begin(), q[i].end(), q[j].begin(), 0.0);
      for (std::size_t k = 0; k < d; ++k) q[i][k] -= dot * q[j][k];
    }
    const double nrm = std::sqrt(std::inner_product(q[i].begin(), q[i].end(), q[i].begin(), 0.0));
    for (auto& v : q[i]) v /= nrm;
  }
  std::vector<double> cov(d * d, 0.0), prec(d * d, 0.0);
  for (std::size_t e = 0; e < d; ++e) {
    const double lam = std::pow(100.0, static_cast<double>(e) / (d - 1));
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        cov[i * d + j] += lam * q[e][i] * q[e][j];
        prec[i * d + j] += q[e][i] * q[e][j] / lam;
      }
    }
  }
  const auto b = gaussian_run(cov, prec, d, 3003);
  for (const auto* c : {&a, &b}) {
    require(o, c->mean_err <= 0.05, "mean");
    require(o, c->var_err <= 0.1, "variance");
    require(o, c->rhat < 1.01, "rhat");
  }
  o.detail = fmt("standard normal: mean %.3f sd, variance rel %.3f, rhat %.4f; condition 100: "
                 "mean %.3f sd, variance rel %.3f, rhat %.4f",
                 a.mean_err, a.var_err, a.rhat, b.mean_err, b.var_err, b.rhat) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --------------------------------------------------------------------------

Outcome model_recovery() {
  Outcome o;
  const auto truth = acs12_truth();
  const auto rec = exact_records(truth, 0.01);
  const std::vector<double> g(truth.probs().begin(), truth.probs().end());
  const auto spec = build_spec(rec.bins, rec.mean, rec.median, g);
  SamplerConfig cfg;
  cfg.seed = 4001;
  const auto pd = run_hmc(tract_target(spec), cfg);
  const auto dens = densities_of(pd, spec);
  double worst_z = 0;
  for (std::size_t k = 0; k < spec.num_bins(); ++k) {
    std::vector<double> p;
    for (const auto& d : dens) p.push_back(d.probs()[k]);
    const double m = std::accumulate(p.begin(), p.end(), 0.0) / p.size();
    const double sd = std::sqrt(sample_variance(p));
    worst_z = std::max(worst_z, std::abs(m - truth.probs()[k]) / sd);
  }
  PopulationFeatureRequest req;
  for (double t : {0.2, 0.4, 0.6, 0.8}) req.features.push_back(Percentile{t});
  req.population_size = 10000;
  req.draws_used = 1000;
  req.seed = 4002;
  const auto fp = feature_posterior(dens, req);
  double worst_pct = 0;
  for (const auto& s : fp.summaries) {
    const double q = truth.quantile(std::get<Percentile>(s.feature).tau);
    worst_pct = std::max(worst_pct, std::abs(s.mean - q) / q);
  }
  require(o, worst_z <= 3, "bin probabilities");
  require(o, worst_pct <= 0.02, "percentiles");
  o.detail = fmt("max |p - truth| %.2f posterior sd, max percentile error %.2f%%, rhat %.4f",
                 worst_z, 100 * worst_pct, diagnostics(pd).max_rhat) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --------------------------------------------------------------------------

Outcome prln_failure_mode() {
  Outcome o;
  // Tail ratio on (75k, 100k) is log(0.15 / 0.12) / log(4 / 3) = 0.78.
  const std::vector<double> breaks{0, 25000, 50000, 75000, 100000};
  const std::vector<double> p{0.3, 0.3, 0.25, 0.03, 0.12};
  std::vector<EstimateRecord> bins;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double hi = k + 1 < breaks.size() ? breaks[k + 1] : HUGE_VAL;
    bins.push_back({BinProportion{breaks[k], hi}, p[k], 0.01});
  }
  const auto fit = prln_fit(bins);
  const std::vector<Feature> p95{Percentile{0.95}};
  const double prln95 = prln_features(fit, p95)[0];
  const bool point_mass =
      !fit.fallbacks().empty() && fit.fallbacks().back().rule == PrlnRule::top_point_mass;

  const EstimateRecord median{QuantileEstimate{0.5}, fit.median(), 1000};
  const auto spec = build_spec(bins, std::nullopt, median, p);
  SamplerConfig cfg;
  cfg.seed = 5001;
  const auto pd = run_hmc(tract_target(spec), cfg);
  PopulationFeatureRequest req;
  req.features = p95;
  req.population_size = 10000;
  req.draws_used = 1000;
  req.seed = 5002;
  const auto s = feature_posterior(densities_of(pd, spec), req).summaries[0];

  require(o, point_mass, "top bin not a point mass");
  require(o, prln95 == breaks.back(), "PRLN P95 is not the top knot");
  require(o, s.mean > breaks.back(), "Bayesian P95 does not exceed the top knot");
  o.detail = fmt("PRLN P95 %.1f (top knot %.0f), Bayesian P95 %.1f [%.1f, %.1f]", prln95,
                 breaks.back(), s.mean, s.lower, s.upper) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --------------------------------------------------------------------------

Outcome simulation_study() {
  Outcome o;
  WorldConfig wc;
  wc.tracts = 5;
  wc.households = 20000;
  const auto wb = make_world(wc);
  SimulationConfig cfg;
  cfg.n_reps = 50;
  cfg.feature_draws = 1000;
  const auto res = run_simulation(wb.world, wb.reference, cfg);

  const std::size_t T = wb.world.num_tracts(), K = cfg.breaks.size();
  std::vector<std::vector<std::vector<double>>> est(T, std::vector<std::vector<double>>(K));
  for (const auto& out : res.outcomes) {
    for (std::size_t k = 0; k < out.direct_bins.size(); ++k) est[out.tract][k].push_back(out.direct_bins[k]);
  }
  double worst_z = 0;
  std::size_t biased = 0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto& v = est[t][k];
      if (v.size() < 2) continue;
      const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
      const double mc = std::sqrt(sample_variance(v) / v.size());
      const double diff = std::abs(m - res.truth[t].bins[k]);
      const double z = mc > 0 ? diff / mc : (diff > 1e-12 ? HUGE_VAL : 0.0);
      worst_z = std::max(worst_z, z);
      if (z > 3) ++biased;
    }
  }
  const std::size_t F = res.features.size();
  const double gini_cov = res.coverage_truth[F - 1];
  double min_pct = 1;
  for (std::size_t f = 0; f + 1 < F; ++f) min_pct = std::min(min_pct, res.coverage_truth[f]);
  require(o, biased == 0, fmt("%zu biased bin cells", biased));
  require(o, gini_cov >= 0.8 && gini_cov <= 1.0, "Gini coverage");
  require(o, min_pct >= 0.7, "percentile coverage");
  require(o, !std::isnan(min_pct) && !std::isnan(gini_cov), "coverage undefined");
  o.detail = fmt("bins: max |z| %.2f over %zu cells; Gini coverage %.3f; percentile coverage "
                 "min %.3f; fit failures %zu",
                 worst_z, T * K, gini_cov, min_pct, res.failures) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --------------------------------------------------------------------------

Outcome waic_checks() {
  Outcome o;
  const std::vector<double> l{-1, -2, -3};
  const double oracle = std::log((std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0)) / 3.0) - 1.0;
  const double got = waic_pointwise(l);
  const double diff = std::abs(got - oracle);
  Rng rng(7001);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> v(2 + rng.below(200));
    const double scale = std::exp(4 * rng.uniform() - 2);
    const double shift = -50 * rng.uniform();
    for (auto& x : v) x = shift + scale * rng.normal();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    if (!(waic_term(v).log_mean_exp >= mean)) ++violations;
  }
  require(o, diff <= 4 * std::numeric_limits<double>::epsilon() * std::abs(oracle),
          "three-draw oracle");
  require(o, violations == 0, "Jensen");
  o.detail = fmt("three-draw oracle %.17g vs %.17g; Jensen violations %zu of 10000", got, oracle,
                 violations) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --------------------------------------------------------------------------

Outcome nested_property() {
  Outcome o;
  const auto truth = acs12_truth();
  const auto rec = exact_records(truth, 0.05);
  const std::vector<double> g(truth.probs().begin(), truth.probs().end());
  const auto spec = build_spec(rec.bins, rec.mean, rec.median, g);
  Rng rng(8001);
  std::vector<WeightedObservation> pums;
  for (int i = 0; i < 50; ++i) pums.push_back({truth.sample_one(rng), 0.5 + 1.5 * rng.uniform()});
  const auto nested = make_nested_spec({spec}, std::vector<double>{1000}, pums);

  SamplerConfig cfg;
  cfg.seed = 8002;
  const auto tract_pd = run_hmc(tract_target(spec), cfg);
  const auto nested_pd = run_hmc(
      {nested.dimension(),
       [&](std::span<const double> x, std::span<double> gr) {
         return log_posterior_nested(x, nested, gr);
       }},
      cfg);

  PopulationFeatureRequest req;
  for (const auto& n : default_feature_names()) req.features.push_back(parse_feature(n));
  req.draws_used = 1000;
  req.seed = 8003;
  const auto a = feature_posterior(densities_of(tract_pd, spec), req);
  const auto nested_dens = densities_of(nested_pd, spec);
  const auto b = feature_posterior(nested_dens, req);
  std::size_t disjoint = 0;
  for (std::size_t f = 0; f < a.summaries.size(); ++f) {
    const auto& x = a.summaries[f];
    const auto& y = b.summaries[f];
    if (x.upper < y.lower || y.upper < x.lower) ++disjoint;
  }

  // Membership over nested posterior draws (R = 1) and a 3-tract toy.
  double worst = 0;
  std::size_t evaluations = 0;
  const std::vector<double> one{1.0};
  for (std::size_t m = 0; m < nested_dens.size(); m += 16) {
    for (const auto& r : pums) {
      const auto post = tract_membership_posterior(std::span(&nested_dens[m], 1), one, r.value, r.weight);
      worst = std::max(worst, std::abs(post[0] - 1.0));
      ++evaluations;
    }
  }
  for (int i = 0; i < 2000; ++i) {
    std::vector<PiecewiseDensity> dens;
    for (int r = 0; r < 3; ++r) {
      std::vector<double> theta(spec.dimension());
      for (auto& x : theta) x = rng.uniform() * 4 - 2;
      dens.push_back(to_density(theta, spec));
    }
    const auto o3 = random_simplex(rng, 3, 0.01);
    for (const auto& r : pums) {
      const auto post = tract_membership_posterior(dens, o3, r.value, r.weight);
      worst = std::max(worst, std::abs(std::accumulate(post.begin(), post.end(), 0.0) - 1.0));
      ++evaluations;
    }
  }
  require(o, disjoint == 0, fmt("%zu features with disjoint intervals", disjoint));
  require(o, worst <= 1e-12, "membership sum");
  o.detail = fmt("%zu of %zu feature intervals overlap; membership max |sum - 1| %.1e over %zu "
                 "evaluations",
                 a.summaries.size() - disjoint, a.summaries.size(), worst, evaluations) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

// --------------------------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "popinterp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

// Empty when both trees hold the same files with the same bytes.
std::string tree_difference(const fs::path& a, const fs::path& b) {
  std::set<std::string> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) fa.insert(fs::relative(e.path(), a).string());
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) fb.insert(fs::relative(e.path(), b).string());
  }
  if (fa != fb || fa.empty()) return "file sets differ";
  for (const auto& f : fa) {
    if (read_file(a / f) != read_file(b / f)) return f + " differs";
  }
  return {};
}

Outcome determinism() {
  Outcome o;
  const fs::path data = POPINTERP_TEST_DATA;
  const fs::path root = fs::temp_directory_path() / "popinterp_acceptance";
  fs::remove_all(root);
  const std::vector<std::string> quick{"--warmup", "300", "--draws", "300", "--feature-draws", "200"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), quick.begin(), quick.end());
    return a;
  };
  struct Case {
    std::string name;
    std::vector<std::string> args;
  };
  const std::vector<Case> cases{
      {"fit-tract", with({"fit-tract", "--estimates", (data / "smoke_tract.csv").string()})},
      {"fit-nested", with({"fit-nested", "--estimates", (data / "nested_tracts.csv").string(),
                           "--pums", (data / "nested_pums.csv").string()})},
      {"prln", {"prln", "--estimates", (data / "percent_tract.csv").string()}},
      {"simulate", {"simulate", "--tracts", "2", "--households", "1500", "--reps", "2",
                    "--replicates", "8", "--warmup", "200", "--draws", "200",
                    "--feature-draws", "100"}},
      {"predict", {"predict", "--fit", (root / "fit-tract_a").string(), "--feature-draws", "200"}},
      {"evaluate", {"evaluate", "--fit", (root / "fit-tract_a").string(), "--feature-draws", "200"}},
  };
  std::size_t same = 0;
  for (const auto& c : cases) {
    int codes[2];
    for (int run = 0; run < 2; ++run) {
      auto args = c.args;
      args.push_back("--out");
      args.push_back((root / (c.name + (run ? "_b" : "_a"))).string());
      codes[run] = cli(args);
    }
    if (codes[0] != 0 || codes[1] != 0) {
      require(o, false, c.name + fmt(" exited %d/%d", codes[0], codes[1]));
      continue;
    }
    const auto diff = tree_difference(root / (c.name + "_a"), root / (c.name + "_b"));
    require(o, diff.empty(), c.name + ": " + diff);
    if (diff.empty()) ++same;
  }
  fs::remove_all(root);
  o.detail = fmt("%zu of %zu commands reproduce bitwise", same, cases.size()) +
             (o.detail.empty() ? "" : " [" + o.detail + "]");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"density math", density_math},
      {"gradient correctness", gradients},
      {"sampler calibration", sampler_calibration},
      {"model recovery", model_recovery},
      {"PRLN failure mode", prln_failure_mode},
      {"desk-scale simulation", simulation_study},
      {"WAIC", waic_checks},
      {"nested model", nested_property},
      {"end-to-end determinism", determinism},
  };
  std::set<std::size_t> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoul(argv[i]));
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!wanted.empty() && !wanted.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
