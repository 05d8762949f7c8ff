#include "popinterp/synthpop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "popinterp/errors.hpp"
#include "popinterp/model.hpp"
#include "popinterp/parallel.hpp"
#include "popinterp/prln.hpp"

namespace popinterp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<double> acs_income_breaks() {
  return {0, 5000, 10000, 15000, 20000, 25000, 35000, 50000, 75000, 100000, 150000, 200000};
}

ReferencePums make_reference_pums(const ReferenceConfig& cfg) {
  if (cfg.strata < 1) throw DomainError("at least one stratum is required");
  if (cfg.households < cfg.strata) throw DomainError("fewer households than strata");
  Rng rng(cfg.seed);
  ReferencePums ref;
  std::vector<double> raw(cfg.strata);
  std::vector<double> effect(cfg.strata);
  for (std::size_t s = 0; s < cfg.strata; ++s) {
    // Many small strata, a few large ones.
    const double u = rng.uniform_open();
    const auto n = static_cast<std::size_t>(std::ceil(-12.0 * std::log(u)));
    raw[s] = std::exp(0.5 * rng.normal());
    effect[s] = 0.35 * rng.normal();
    ref.strata.push_back({std::clamp<std::size_t>(n, 1, 80), 0.0, 0});
  }
  double denom = 0.0;
  for (std::size_t s = 0; s < cfg.strata; ++s) denom += raw[s] * ref.strata[s].sample_size;
  const double scale = static_cast<double>(cfg.households) / denom;

  // Whole-household populations summing exactly to the target.
  std::vector<double> target(cfg.strata);
  for (std::size_t s = 0; s < cfg.strata; ++s) {
    target[s] = raw[s] * scale * static_cast<double>(ref.strata[s].sample_size);
  }
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < cfg.strata; ++s) {
    ref.strata[s].population = std::max<std::size_t>(1, static_cast<std::size_t>(target[s]));
    assigned += ref.strata[s].population;
  }
  std::vector<std::size_t> order(cfg.strata);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return target[a] - std::floor(target[a]) > target[b] - std::floor(target[b]);
  });
  for (std::size_t i = 0; assigned < cfg.households; i = (i + 1) % cfg.strata, ++assigned) {
    ++ref.strata[order[i]].population;
  }
  for (std::size_t i = 0; assigned > cfg.households; i = (i + 1) % cfg.strata) {
    auto& st = ref.strata[order[cfg.strata - 1 - i]];
    if (st.population > 1) {
      --st.population;
      --assigned;
    }
  }
  for (auto& st : ref.strata) {
    st.weight = static_cast<double>(st.population) / static_cast<double>(st.sample_size);
  }

  for (std::size_t s = 0; s < cfg.strata; ++s) {
    for (std::size_t i = 0; i < ref.strata[s].sample_size; ++i) {
      double z = 0.0;  // zero income
      if (rng.uniform() >= 0.01) z = std::max(0.0, 10.85 + effect[s] + 0.85 * rng.normal());
      ref.records.push_back({z, s});
    }
  }
  return ref;
}

std::vector<Point> ring_layout(std::size_t tracts) {
  std::vector<Point> out;
  const double golden = 2.399963229728653;
  for (std::size_t r = 0; r < tracts; ++r) {
    const double radius = static_cast<double>(r + 1) / static_cast<double>(tracts);
    out.push_back({radius * std::cos(golden * r), radius * std::sin(golden * r)});
  }
  return out;
}

std::vector<double> center_distances(std::span<const Point> c) {
  if (c.empty()) return {};
  double x0 = c[0].x, x1 = c[0].x, y0 = c[0].y, y1 = c[0].y;
  for (const auto& p : c) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  std::vector<double> d;
  for (const auto& p : c) d.push_back(std::hypot(p.x - cx, p.y - cy));
  return d;
}

std::vector<double> standardize(std::span<const double> v) {
  std::vector<double> out(v.size(), 0.0);
  const double sd = sd_of(v);
  if (!(sd > 0.0)) return out;
  const double m = mean_of(v);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - m) / sd;
  return out;
}

std::vector<std::size_t> split_total(std::size_t total, std::size_t parts, double spread,
                                     Rng& rng) {
  if (parts < 1 || total < parts) throw DomainError("cannot split total into positive parts");
  std::vector<double> rel(parts);
  for (double& r : rel) r = 1.0 + spread * rng.uniform();
  const double sum = std::accumulate(rel.begin(), rel.end(), 0.0);
  std::vector<std::size_t> out(parts);
  std::size_t used = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    out[i] = std::max<std::size_t>(1, static_cast<std::size_t>(rel[i] / sum * total));
    used += out[i];
  }
  for (std::size_t i = 0; used < total; i = (i + 1) % parts, ++used) ++out[i];
  for (std::size_t i = 0; used > total; i = (i + 1) % parts) {
    if (out[i] > 1) {
      --out[i];
      --used;
    }
  }
  return out;
}

std::vector<AssignmentBlock> assign_strata(std::span<const std::size_t> tract_targets,
                                           std::span<const std::size_t> stratum_pops, Rng& rng) {
  const auto sum = [](auto v) { return std::accumulate(v.begin(), v.end(), std::size_t{0}); };
  if (sum(tract_targets) != sum(stratum_pops)) {
    throw ValidationError("tract targets and stratum populations have different totals");
  }
  std::vector<std::size_t> remaining(stratum_pops.begin(), stratum_pops.end());
  std::vector<std::size_t> available;
  for (std::size_t s = 0; s < remaining.size(); ++s) {
    if (remaining[s] > 0) available.push_back(s);
  }
  std::vector<AssignmentBlock> out;
  for (std::size_t r = 0; r < tract_targets.size(); ++r) {
    std::size_t pop = 0;
    while (pop < tract_targets[r]) {
      const std::size_t pick = rng.below(available.size());
      const std::size_t s = available[pick];
      const std::size_t P = std::min(remaining[s], tract_targets[r] - pop);
      out.push_back({r, s, P});
      pop += P;
      remaining[s] -= P;
      if (remaining[s] == 0) available.erase(available.begin() + static_cast<std::ptrdiff_t>(pick));
    }
  }
  return out;
}

StratumStats stratum_stats(const ReferencePums& ref) {
  if (ref.records.size() < 2) throw ValidationError("reference data needs at least two records");
  StratumStats st;
  std::vector<double> z;
  for (const auto& r : ref.records) z.push_back(r.z);
  st.m_hat = mean_of(z);
  st.s_hat = sd_of(z);
  const std::size_t S = ref.strata.size();
  std::vector<std::vector<double>> by(S);
  for (const auto& r : ref.records) {
    if (r.stratum >= S) throw ValidationError("reference record has an unknown stratum");
    by[r.stratum].push_back(r.z);
  }
  st.D.assign(S, 0.0);
  st.H.assign(S, st.s_hat);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& v = by[s];
    if (v.empty()) {
      st.empty_strata.push_back(s);
      continue;
    }
    const double n = static_cast<double>(v.size());
    double dev = 0.0;
    for (double x : v) dev += x - st.m_hat;
    st.D[s] = dev / (n + 5.0);
    const double zbar = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - zbar) * (x - zbar);
    const double h2 = n / (n + 500.0) * (ss / n) + 500.0 / (n + 500.0) * st.s_hat * st.s_hat;
    st.H[s] = std::sqrt(h2);
  }
  return st;
}

MixtureParams mixture_params(double sdist, double W, double m_hat, double D, double H) {
  MixtureParams p;
  p.omega = 1.0 / (1.0 + std::exp(0.2 * sdist + 0.2 * W));
  p.mu1 = 0.87 * m_hat - 0.3 * sdist + D;
  p.mu2 = 1.05 * m_hat - 0.2 * sdist + 1.5 * D;
  p.sigma1 = std::exp(sdist / 5.0 - std::log(H) / 5.0);
  p.sigma2 = 0.6 * std::exp(sdist / 5.0 - (std::log(H) - std::log(0.6)) / 5.0);
  return p;
}

void generate_incomes(SyntheticWorld& world, const ReferencePums& ref, Rng& rng) {
  world.stats = stratum_stats(ref);
  if (world.stats.D.size() != world.num_strata()) {
    throw ValidationError("reference strata do not match the world");
  }
  world.households.clear();
  for (const auto& b : world.assignment) {
    const auto p = mixture_params(world.sdist[b.tract], world.W[b.stratum], world.stats.m_hat,
                                  world.stats.D[b.stratum], world.stats.H[b.stratum]);
    for (std::size_t i = 0; i < b.count; ++i) {
      const bool first = rng.uniform() < p.omega;
      const double z = first ? rng.normal(p.mu1, p.sigma1) : rng.normal(p.mu2, p.sigma2);
      world.households.push_back({b.tract, b.stratum, std::max(std::exp(z) - 1.0, 0.0)});
    }
  }
}

WorldBundle make_world(const WorldConfig& cfg) {
  WorldBundle out;
  out.reference = make_reference_pums({cfg.strata, cfg.households, derive_seed(cfg.seed, 1)});
  auto& w = out.world;
  w.strata = out.reference.strata;
  Rng rng(derive_seed(cfg.seed, 2));
  w.tract_targets = split_total(cfg.households, cfg.tracts, cfg.tract_spread, rng);

  const auto centroids = cfg.centroids ? *cfg.centroids : ring_layout(cfg.tracts);
  if (centroids.size() != cfg.tracts) throw ValidationError("one centroid per tract is required");
  w.sdist = standardize(center_distances(centroids));
  std::vector<double> logw;
  for (const auto& s : w.strata) logw.push_back(std::log(s.weight));
  w.W = standardize(logw);

  std::vector<std::size_t> pops;
  for (const auto& s : w.strata) pops.push_back(s.population);
  w.assignment = assign_strata(w.tract_targets, pops, rng);
  Rng income_rng(derive_seed(cfg.seed, 3));
  generate_incomes(w, out.reference, income_rng);
  return out;
}

std::vector<std::size_t> proportional_allocation(const SyntheticWorld& world, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("sampling fraction must be in (0, 1]");
  std::size_t total_pop = 0, total_n = 0;
  for (const auto& s : world.strata) {
    total_pop += s.population;
    total_n += s.sample_size;
  }
  std::vector<std::size_t> out;
  for (const auto& s : world.strata) {
    const double a = fraction * static_cast<double>(total_pop) * static_cast<double>(s.sample_size) /
                     static_cast<double>(total_n);
    out.push_back(std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(a)), 1,
                                          s.population));
  }
  return out;
}

std::vector<SampledHousehold> stratified_sample(const SyntheticWorld& world,
                                                std::span<const std::size_t> allocation, Rng& rng) {
  const std::size_t S = world.num_strata();
  if (allocation.size() != S) throw ValidationError("one allocation per stratum is required");
  std::vector<std::vector<std::size_t>> members(S);
  for (std::size_t i = 0; i < world.households.size(); ++i) {
    members[world.households[i].stratum].push_back(i);
  }
  std::vector<SampledHousehold> out;
  for (std::size_t s = 0; s < S; ++s) {
    if (allocation[s] > members[s].size()) {
      throw ValidationError("stratum allocation exceeds its population");
    }
    if (allocation[s] == 0) continue;
    std::vector<std::size_t> picked;
    std::sample(members[s].begin(), members[s].end(), std::back_inserter(picked), allocation[s],
                rng.engine());
    const double w = static_cast<double>(members[s].size()) / static_cast<double>(allocation[s]);
    for (std::size_t i : picked) {
      const auto& h = world.households[i];
      out.push_back({i, h.tract, h.stratum, h.income, w});
    }
  }
  return out;
}

namespace {

bool is_prime(std::size_t q) {
  if (q < 2) return false;
  for (std::size_t d = 2; d * d <= q; ++d) {
    if (q % d == 0) return false;
  }
  return true;
}

std::vector<std::vector<int>> paley(std::size_t q) {
  std::vector<int> chi(q, -1);
  chi[0] = 0;
  for (std::size_t x = 1; x < q; ++x) chi[(x * x) % q] = 1;
  const std::size_t n = q + 1;
  std::vector<std::vector<int>> h(n, std::vector<int>(n, 0));
  for (std::size_t j = 1; j < n; ++j) {
    h[0][j] = 1;
    h[j][0] = -1;
  }
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 1; j < n; ++j) h[i][j] = chi[(j - i + q) % q];
  }
  for (std::size_t i = 0; i < n; ++i) h[i][i] += 1;
  return h;
}

}  // namespace

std::vector<std::vector<int>> hadamard(std::size_t n) {
  if (n == 1) return {{1}};
  if (n == 2) return {{1, 1}, {1, -1}};
  if (n % 4 != 0) throw DomainError("Hadamard order must be 1, 2 or a multiple of 4");
  if (is_prime(n - 1) && (n - 1) % 4 == 3) return paley(n - 1);
  const auto half = hadamard(n / 2);
  const std::size_t m = n / 2;
  std::vector<std::vector<int>> h(n, std::vector<int>(n));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      h[i][j] = h[i][j + m] = h[i + m][j] = half[i][j];
      h[i + m][j + m] = -half[i][j];
    }
  }
  return h;
}

double weighted_quantile(std::span<const double> y, std::span<const double> w, double tau) {
  if (y.empty()) throw DomainError("quantile of an empty sample");
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const double target = tau * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    cum += w[i];
    if (cum >= target * (1.0 - 1e-12)) return y[i];
  }
  return y.back();
}

double weighted_gini(std::span<const double> y, std::span<const double> w) {
  const double W = std::accumulate(w.begin(), w.end(), 0.0);
  double cum = 0.0, num = 0.0, wy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    cum += w[i];
    num += w[i] * y[i] * (2.0 * cum - w[i] - W);
    wy += w[i] * y[i];
  }
  if (!(wy > 0.0)) throw UndefinedFeatureError("Gini coefficient of a zero-mean sample");
  return num / (W * wy);
}

namespace {

// All direct statistics for one weight vector, in a fixed order:
// bins..., mean, median, percentiles..., gini.
std::vector<double> tract_statistics(std::span<const double> y, std::span<const double> w,
                                     const KnotVector& kv, std::span<const double> taus) {
  std::vector<double> out(kv.num_bins(), 0.0);
  const double W = std::accumulate(w.begin(), w.end(), 0.0);
  double wy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    out[kv.locate(y[i])] += w[i];
    wy += w[i] * y[i];
  }
  for (std::size_t k = 0; k < kv.num_bins(); ++k) out[k] /= W;
  out.push_back(wy / W);
  out.push_back(weighted_quantile(y, w, 0.5));
  for (double t : taus) out.push_back(weighted_quantile(y, w, t));
  double g = kNaN;
  try {
    g = weighted_gini(y, w);
  } catch (const UndefinedFeatureError&) {
  }
  out.push_back(g);
  return out;
}

}  // namespace

DirectEstimateSet direct_estimates_with_sdr(std::span<const SampledHousehold> sample,
                                            std::size_t tracts, std::span<const double> breaks,
                                            std::size_t replicates, double fraction) {
  if (replicates < 4 || replicates % 4 != 0) {
    throw DomainError("replicate count must be a positive multiple of 4");
  }
  const auto H = hadamard(replicates);
  const KnotVector kv(std::vector<double>(breaks.begin(), breaks.end()), true);
  const auto taus = fifth_percentile_grid();
  const double c = std::pow(2.0, -1.5);
  const std::size_t R = replicates;

  DirectEstimateSet out;
  out.breaks.assign(breaks.begin(), breaks.end());
  out.replicates = R;
  out.fraction = fraction;
  out.tracts.resize(tracts);

  std::vector<std::vector<std::size_t>> units(tracts);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (sample[i].tract >= tracts) throw ValidationError("sampled household has an unknown tract");
    units[sample[i].tract].push_back(i);
  }
  for (std::size_t t = 0; t < tracts; ++t) {
    auto& est = out.tracts[t];
    auto idx = units[t];
    est.sample_size = idx.size();
    if (idx.empty()) {
      est.missing = true;
      continue;
    }
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return sample[a].income < sample[b].income; });
    std::vector<double> y, w;
    for (std::size_t i : idx) {
      y.push_back(sample[i].income);
      w.push_back(sample[i].weight);
    }
    const auto full = tract_statistics(y, w, kv, taus);
    std::vector<double> ss(full.size(), 0.0);
    std::vector<double> wr(w.size());
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const std::size_t i = idx[j];  // position in sample order
        const std::size_t a = 1 + i % (R - 1);
        const std::size_t b = 1 + (i + 1) % (R - 1);
        wr[j] = w[j] * (1.0 + c * (H[a][r] - H[b][r]));
      }
      const auto rep = tract_statistics(y, wr, kv, taus);
      for (std::size_t s = 0; s < full.size(); ++s) ss[s] += (rep[s] - full[s]) * (rep[s] - full[s]);
    }
    std::vector<DirectEstimate> all;
    for (std::size_t s = 0; s < full.size(); ++s) {
      all.push_back({full[s], std::sqrt(4.0 / static_cast<double>(R) * ss[s])});
    }
    const std::size_t K = kv.num_bins();
    est.bins.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(K));
    est.mean = all[K];
    est.median = all[K + 1];
    est.percentiles.assign(all.begin() + static_cast<std::ptrdiff_t>(K + 2),
                           all.begin() + static_cast<std::ptrdiff_t>(K + 2 + taus.size()));
    est.gini = all.back();
  }
  return out;
}

std::vector<TractTruth> population_truth(const SyntheticWorld& world,
                                         std::span<const double> breaks) {
  const KnotVector kv(std::vector<double>(breaks.begin(), breaks.end()), true);
  std::vector<std::vector<double>> by(world.num_tracts());
  for (const auto& h : world.households) by[h.tract].push_back(h.income);
  std::vector<TractTruth> out;
  for (auto& v : by) {
    TractTruth t;
    t.population = v.size();
    t.bins.assign(kv.num_bins(), 0.0);
    if (v.empty()) {
      out.push_back(t);
      continue;
    }
    std::sort(v.begin(), v.end());
    for (double x : v) t.bins[kv.locate(x)] += 1.0 / static_cast<double>(v.size());
    t.mean = mean_of(v);
    for (double tau : fifth_percentile_grid()) t.percentiles.push_back(sample_quantile(v, tau));
    t.gini = gini_sorted(v);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> reference_bin_shares(const ReferencePums& ref, std::span<const double> breaks) {
  const KnotVector kv(std::vector<double>(breaks.begin(), breaks.end()), true);
  std::vector<double> out(kv.num_bins(), 0.0);
  double total = 0.0;
  for (const auto& r : ref.records) {
    const double w = ref.strata[r.stratum].weight;
    out[kv.locate(std::max(std::exp(r.z) - 1.0, 0.0))] += w;
    total += w;
  }
  for (double& v : out) v /= total;
  return out;
}

std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::posterior_mean:
      return "P. Mean";
    case Estimator::posterior_median:
      return "P. Median";
    case Estimator::prln:
      return "PRLN";
    case Estimator::direct:
      return "Direct";
  }
  return "";
}

std::vector<Feature> simulation_features() {
  std::vector<Feature> f;
  for (double t : fifth_percentile_grid()) f.push_back(Percentile{t});
  f.push_back(Gini{});
  return f;
}

namespace {

constexpr std::size_t kNumEstimators = 4;

double floor_se(double se, double value) {
  return std::max(se, 1e-6 * std::max(std::abs(value), 1.0));
}

TractOutcome fit_one(std::size_t rep, std::size_t tract, const TractDirectEstimates& direct,
                     const TractTruth& truth, std::span<const double> prior_center,
                     const SimulationConfig& cfg, std::uint64_t rep_seed) {
  const auto features = simulation_features();
  const std::size_t F = features.size();
  TractOutcome o;
  o.rep = rep;
  o.tract = tract;
  o.estimates.assign(kNumEstimators, std::vector<double>(F, kNaN));
  o.lower.assign(F, kNaN);
  o.upper.assign(F, kNaN);
  o.truth = truth.percentiles;
  o.truth.push_back(truth.gini);
  if (direct.missing) {
    o.failure = "no sampled households";
    return o;
  }
  for (const auto& b : direct.bins) o.direct_bins.push_back(b.value);

  auto& d = o.estimates[static_cast<std::size_t>(Estimator::direct)];
  for (std::size_t f = 0; f + 1 < F; ++f) d[f] = direct.percentiles[f].value;
  d[F - 1] = direct.gini.value;

  // Bin records; an empty bin gets the binomial SE of a single household.
  const std::size_t K = cfg.breaks.size();
  const double n = static_cast<double>(direct.sample_size);
  const double one = 1.0 / n;
  const double bin_floor = std::sqrt(one * (1.0 - one) / n);
  std::vector<EstimateRecord> bins;
  for (std::size_t k = 0; k < K; ++k) {
    const double hi = k + 1 < K ? cfg.breaks[k + 1] : std::numeric_limits<double>::infinity();
    bins.push_back({BinProportion{cfg.breaks[k], hi}, direct.bins[k].value,
                    std::max(direct.bins[k].se, bin_floor)});
  }

  try {
    const auto prln = prln_fit(bins);
    o.estimates[static_cast<std::size_t>(Estimator::prln)] = prln_features(prln, features);
  } catch (const Error& e) {
    o.failure = std::string("prln: ") + e.what();
  }

  if (!cfg.fit_model) {
    o.fitted = o.failure.empty();
    return o;
  }
  try {
    const EstimateRecord mean{MeanEstimate{}, direct.mean.value,
                              floor_se(direct.mean.se, direct.mean.value)};
    const EstimateRecord median{QuantileEstimate{0.5}, direct.median.value,
                                floor_se(direct.median.se, direct.median.value)};
    const auto spec = build_spec(bins, mean, median, prior_center);
    LogDensity target{spec.dimension(), [&spec](std::span<const double> x, std::span<double> g) {
                        return log_posterior(x, spec, g);
                      }};
    SamplerConfig sc = cfg.sampler;
    sc.seed = derive_seed(rep_seed, 1000 + tract);
    const auto pd = run_hmc(target, sc);

    PopulationFeatureRequest req;
    req.features = features;
    req.population_size = truth.population;
    req.draws_used = cfg.feature_draws;
    req.interval_level = cfg.interval_level;
    req.seed = derive_seed(rep_seed, 2000 + tract);
    req.threads = 1;
    const auto fp = feature_posterior(pd, spec, req);
    for (std::size_t f = 0; f < F; ++f) {
      const auto& s = fp.summaries[f];
      o.estimates[static_cast<std::size_t>(Estimator::posterior_mean)][f] = s.mean;
      o.estimates[static_cast<std::size_t>(Estimator::posterior_median)][f] = s.median;
      o.lower[f] = s.lower;
      o.upper[f] = s.upper;
    }
    o.fitted = o.failure.empty();
  } catch (const Error& e) {
    o.failure = e.what();
  }
  return o;
}

}  // namespace

void tabulate(SimulationResult& res) {
  const std::size_t F = res.features.size();
  res.metrics.clear();
  res.relative.clear();
  res.coverage_truth.assign(F, kNaN);
  res.coverage_prln.assign(F, kNaN);
  res.failures = 0;
  res.missing = 0;
  std::vector<const TractOutcome*> ok;
  for (const auto& o : res.outcomes) {
    if (o.fitted) {
      ok.push_back(&o);
    } else if (o.direct_bins.empty()) {
      ++res.missing;
    } else {
      ++res.failures;
    }
  }
  if (ok.empty()) return;

  std::vector<std::vector<Metrics>> m(kNumEstimators, std::vector<Metrics>(F));
  for (std::size_t e = 0; e < kNumEstimators; ++e) {
    for (std::size_t f = 0; f < F; ++f) {
      std::vector<double> est, tru;
      for (const auto* o : ok) {
        if (!std::isfinite(o->estimates[e][f]) || !std::isfinite(o->truth[f])) continue;
        est.push_back(o->estimates[e][f]);
        tru.push_back(o->truth[f]);
      }
      if (est.empty()) {
        m[e][f] = {kNaN, kNaN, kNaN, kNaN, 0, 0};
      } else {
        m[e][f] = metrics(est, tru);
      }
    }
  }
  const std::pair<const char*, double Metrics::*> names[] = {
      {"MAD", &Metrics::mad}, {"MAPE", &Metrics::mape}, {"RMSE", &Metrics::rmse},
      {"RMSPE", &Metrics::rmspe}};
  const auto direct = static_cast<std::size_t>(Estimator::direct);
  for (const auto& [name, field] : names) {
    for (std::size_t e = 0; e < kNumEstimators; ++e) {
      MetricRow raw{name, kEstimators[e], {}};
      MetricRow rel{name, kEstimators[e], {}};
      for (std::size_t f = 0; f < F; ++f) {
        const double v = m[e][f].*field;
        const double base = m[direct][f].*field;
        raw.values.push_back(v);
        rel.values.push_back(base != 0.0 ? 100.0 * (v - base) / base : kNaN);
      }
      res.metrics.push_back(raw);
      if (e != direct) res.relative.push_back(rel);
    }
  }
  const auto prln = static_cast<std::size_t>(Estimator::prln);
  for (std::size_t f = 0; f < F; ++f) {
    std::size_t n = 0, hit_t = 0, n_p = 0, hit_p = 0;
    for (const auto* o : ok) {
      if (!std::isfinite(o->lower[f])) continue;
      ++n;
      if (o->lower[f] <= o->truth[f] && o->truth[f] <= o->upper[f]) ++hit_t;
      const double p = o->estimates[prln][f];
      if (std::isfinite(p)) {
        ++n_p;
        if (o->lower[f] <= p && p <= o->upper[f]) ++hit_p;
      }
    }
    if (n) res.coverage_truth[f] = static_cast<double>(hit_t) / static_cast<double>(n);
    if (n_p) res.coverage_prln[f] = static_cast<double>(hit_p) / static_cast<double>(n_p);
  }
}

SimulationResult run_simulation(const SyntheticWorld& world, const ReferencePums& ref,
                                const SimulationConfig& cfg) {
  if (cfg.n_reps < 1) throw DomainError("at least one replication is required");
  cfg.sampler.validate();
  SimulationResult res;
  res.features = simulation_features();
  res.truth = population_truth(world, cfg.breaks);
  const auto prior = reference_bin_shares(ref, cfg.breaks);
  const auto allocation = proportional_allocation(world, cfg.fraction);
  const std::size_t T = world.num_tracts();

  // Samples and direct estimates are cheap; draw them serially in order.
  std::vector<DirectEstimateSet> directs;
  for (std::size_t rep = 0; rep < cfg.n_reps; ++rep) {
    Rng rng(derive_seed(derive_seed(cfg.seed, rep), 0));
    const auto sample = stratified_sample(world, allocation, rng);
    directs.push_back(direct_estimates_with_sdr(sample, T, cfg.breaks, cfg.replicates, cfg.fraction));
  }

  res.outcomes.resize(cfg.n_reps * T);
  parallel_for(
      res.outcomes.size(),
      [&](std::size_t job) {
        const std::size_t rep = job / T, t = job % T;
        res.outcomes[job] = fit_one(rep, t, directs[rep].tracts[t], res.truth[t], prior, cfg,
                                    derive_seed(cfg.seed, rep));
      },
      cfg.threads);
  tabulate(res);
  return res;
}

}  // namespace popinterp
