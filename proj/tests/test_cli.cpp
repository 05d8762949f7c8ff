#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "popinterp/cli.hpp"
#include "popinterp/errors.hpp"
#include "popinterp/ingest.hpp"
#include "popinterp/io.hpp"
#include "popinterp/random.hpp"

using namespace popinterp;
namespace fs = std::filesystem;

namespace {

const fs::path kData = POPINTERP_TEST_DATA;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("popinterp_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "popinterp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

EstimateTable parse(const std::string& text) {
  std::istringstream in(text);
  return parse_estimates(in);
}

std::vector<std::string> small_fit(const fs::path& est, const fs::path& out) {
  return {"fit-tract", "--estimates", est.string(), "--out", out.string(), "--warmup", "200",
          "--draws", "200", "--feature-draws", "300"};
}

// Every file below `a` exists below `b` with identical bytes, and vice versa.
void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(read_file(e.path()), read_file(b / rel)) << rel;
    ++n;
  }
  std::size_t m = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) m += e.is_regular_file() ? 1 : 0;
  EXPECT_EQ(n, m);
  EXPECT_GT(n, 0u);
}

nlohmann::json manifest(const fs::path& dir) {
  return nlohmann::json::parse(read_file(dir / "manifest.json"));
}

}  // namespace

// --------------------------------------------------------------------------
// Low-level I/O

TEST(Csv, QuotesCrlfAndBlankLines) {
  std::istringstream in("a,b,c\r\n\"x,1\",\"say \"\"hi\"\"\", 3 \r\n\n4,,6\n");
  const auto t = parse_csv(in);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "x,1");
  EXPECT_EQ(t.rows[0][1], "say \"hi\"");
  EXPECT_EQ(t.rows[0][2], "3");
  EXPECT_EQ(t.rows[1][1], "");
  EXPECT_EQ(t.lines[1], 4u);
}

TEST(Csv, RaggedRowNamesLine) {
  std::istringstream in("a,b\n1,2\n3\n");
  try {
    parse_csv(in, "f.csv");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Csv, NumbersRoundTrip) {
  Rng rng(5);
  for (int i = 0; i < 20000; ++i) {
    const double v = std::ldexp(rng.uniform() - 0.5, static_cast<int>(rng.below(200)) - 100);
    EXPECT_EQ(*parse_number(format_number(v)), v);
  }
  EXPECT_EQ(format_number(100000.0), "100000");
  EXPECT_EQ(format_number(HUGE_VAL), "inf");
  EXPECT_TRUE(std::isinf(*parse_number("Inf")));
  EXPECT_FALSE(parse_number("12abc"));
}

TEST(Csv, WriterQuotesWhenNeeded) {
  CsvWriter w({"a", "b"});
  w.cell("x,y").cell(0.5);
  w.end_row();
  EXPECT_EQ(w.str(), "a,b\n\"x,y\",0.5\n");
}

// --------------------------------------------------------------------------
// Estimate ingestion

TEST(Ingest, MoeBecomesStandardError) {
  const auto t = parse("geo_id,kind,value,moe\ng,mean,50000,1645\n");
  EXPECT_DOUBLE_EQ(*t.rows[0].se, 1000.0);
}

TEST(Ingest, EmptyUpperIsInfinite) {
  const auto t = parse("geo_id,kind,lower,upper,value,se\ng,bin,0,10,0.4,0.1\ng,bin,10,,0.6,0.1\n");
  EXPECT_TRUE(std::isinf(*t.rows[1].upper));
  const auto g = geo_estimates(t, "g");
  EXPECT_EQ(g.bins.size(), 2u);
}

TEST(Ingest, PercentRowsRenormalize) {
  const auto t = ingest_estimates(kData / "percent_tract.csv");
  ASSERT_EQ(t.percent_geos.size(), 1u);
  const auto g = geo_estimates(t, "2");
  const std::vector<double> pct{9.8, 9.3, 25.8, 13.7, 20.4, 14.3, 4.0, 2.8, 0.0, 0.0};
  const auto p = renormalized_bins(g.bins);
  const double total = std::accumulate(pct.begin(), pct.end(), 0.0);
  ASSERT_EQ(p.size(), pct.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    EXPECT_NEAR(g.bins[k].value, pct[k] / 100.0, 1e-15);
    EXPECT_NEAR(p[k], pct[k] / total, 1e-12);
  }
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  // MOE 4.1 percent -> SE 0.041 / 1.645 as a proportion.
  EXPECT_NEAR(g.bins[0].se, 0.041 / 1.645, 1e-15);
}

TEST(Ingest, ProportionsBelowThresholdStay) {
  const auto t = parse("geo_id,kind,lower,upper,value,se\ng,bin,0,10,0.4,0.1\ng,bin,10,,0.6,0.1\n");
  EXPECT_TRUE(t.percent_geos.empty());
  EXPECT_DOUBLE_EQ(t.rows[1].value, 0.6);
  // One value above 1.5 marks every bin of the geo as a percent.
  const auto p = parse("geo_id,kind,lower,upper,value,se\ng,bin,0,10,1.4,0.1\ng,bin,10,,98.6,1\n");
  EXPECT_DOUBLE_EQ(p.rows[0].value, 0.014);
  EXPECT_DOUBLE_EQ(*p.rows[0].se, 0.001);
  // 1.2 is read as a proportion, and proportions cannot exceed 1.
  EXPECT_THROW(parse("geo_id,kind,lower,upper,value,se\ng,bin,0,10,1.2,0.1\ng,bin,10,,0.3,1\n"),
               ValidationError);
}

TEST(Ingest, ZeroSeFlooredWithWarning) {
  const auto t = parse("geo_id,kind,lower,upper,value,se\ng,mean,,,23000,0\ng,bin,0,,0.2,0\n");
  EXPECT_DOUBLE_EQ(*t.rows[0].se, 1e-6 * 23000);
  EXPECT_DOUBLE_EQ(*t.rows[1].se, 1e-6);
  EXPECT_EQ(t.warnings.size(), 2u);
  std::istringstream in("geo_id,kind,value,se\ng,mean,5,0\n");
  EXPECT_DOUBLE_EQ(*parse_estimates(in, {1e-3}).rows[0].se, 1e-3 * 5);
}

TEST(Ingest, SchemaErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("geo_id,kind,value,se,moe\ng,mean,1,1,\ng,mean,1,1,2\n").find("line 3"),
            std::string::npos);
  EXPECT_NE(message("geo_id,kind,value,se\ng,mean,1,\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("geo_id,kind,value,se\ng,bogus,1,1\n").find("unknown kind"), std::string::npos);
  EXPECT_NE(message("geo_id,kind,value,se,colour\n").find("unknown column"), std::string::npos);
  EXPECT_NE(message("geo_id,kind,tau,value,se\ng,quantile,1.5,1,1\n").find("tau"), std::string::npos);
  EXPECT_NE(message("geo_id,kind,lower,value,se\ng,bin,,0.5,0.1\n").find("lower"), std::string::npos);
}

TEST(Ingest, NonContiguousBinsFatalPerGeo) {
  const auto t = parse(
      "geo_id,kind,lower,upper,value,se\n"
      "ok,bin,0,10,0.5,0.1\nok,bin,10,,0.5,0.1\n"
      "bad,bin,0,10,0.5,0.1\nbad,bin,12,,0.5,0.1\n");
  EXPECT_NO_THROW(geo_estimates(t, "ok"));
  try {
    geo_estimates(t, "bad");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("geo bad"), std::string::npos);
  }
}

TEST(Ingest, HeldOutRouting) {
  const auto t = ingest_estimates(kData / "smoke_tract.csv");
  const auto g = geo_estimates(t, "toy");
  EXPECT_EQ(g.bins.size(), 3u);
  EXPECT_TRUE(g.mean && g.median);
  EXPECT_TRUE(g.quantiles.empty());
  ASSERT_EQ(g.held_out.size(), 3u);  // p20, p80, gini
  EXPECT_EQ(g.held_out[2].kind, RowKind::gini);
  EXPECT_DOUBLE_EQ(*g.population, 800);

  // Explicit column: quantiles may enter the fit, gini never does.
  const auto e = parse(
      "geo_id,kind,lower,upper,tau,value,se,held_out\n"
      "g,bin,0,10,,0.5,0.1,0\ng,bin,10,,,0.5,0.1,0\ng,quantile,,,0.2,5,1,0\ng,gini,,,,0.4,0.02,0\ng,mean,,,,9,1,1\n");
  const auto ge = geo_estimates(e, "g");
  EXPECT_EQ(ge.quantiles.size(), 1u);
  EXPECT_FALSE(ge.mean);
  ASSERT_EQ(ge.held_out.size(), 2u);
  EXPECT_EQ(ge.held_out[0].kind, RowKind::gini);
  EXPECT_EQ(e.warnings.size(), 1u);
  EXPECT_THROW(parse("geo_id,kind,lower,value,se,held_out\ng,bin,0,1,0.1,1\n"), ValidationError);
}

TEST(Ingest, CanonicalReadIsIdempotent) {
  for (const char* f : {"smoke_tract.csv", "percent_tract.csv", "nested_tracts.csv"}) {
    const auto a = ingest_estimates(kData / f);
    const auto text = canonical_estimates_csv(a);
    const auto b = parse(text);
    EXPECT_EQ(a.rows, b.rows) << f;
    EXPECT_EQ(canonical_estimates_csv(b), text) << f;
    EXPECT_TRUE(b.percent_geos.empty());
  }
}

TEST(Ingest, PumsRows) {
  std::istringstream ok("income,weight,puma_id\n0,1.5,600\n25000,3,600\n");
  const auto rows = parse_pums(ok);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1], (PumsRow{25000, 3, "600"}));
  std::istringstream neg("income,weight,puma_id\n-1,1,600\n");
  EXPECT_THROW(parse_pums(neg), ValidationError);
  std::istringstream zero_w("income,weight,puma_id\n10,0,600\n");
  EXPECT_THROW(parse_pums(zero_w), ValidationError);
  std::istringstream missing("income,weight\n10,1\n");
  EXPECT_THROW(parse_pums(missing), ValidationError);
}

TEST(Features, Names) {
  EXPECT_EQ(std::get<Percentile>(parse_feature("p20")).tau, 0.2);
  EXPECT_EQ(std::get<Percentile>(parse_feature("p2.5")).tau, 0.025);
  EXPECT_TRUE(std::holds_alternative<Gini>(parse_feature("gini")));
  EXPECT_THROW(parse_feature("p100"), ValidationError);
  EXPECT_THROW(parse_feature("median"), ValidationError);
  EXPECT_EQ(default_feature_names().size(), 21u);
}

// --------------------------------------------------------------------------
// Commands end to end

TEST(Commands, FitTractSmoke) {
  const auto dir = scratch("fit_smoke");
  const auto r = cli(small_fit(kData / "smoke_tract.csv", dir / "a"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"toy/draws.csv", "toy/diagnostics.json", "toy/summary.csv", "toy/model.json",
                        "manifest.json", "config.toml", "estimates.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  }
  const auto m = manifest(dir / "a");
  // 3 bins + mean + median; p20, p80 and gini are held out.
  EXPECT_EQ(m["geos"][0]["likelihood_terms"], 5);
  EXPECT_EQ(m["geos"][0]["held_out_rows"], 3);
  EXPECT_EQ(m["inputs"]["estimates"]["hash"], file_hash(kData / "smoke_tract.csv"));
  const auto summary = read_csv(dir / "a/toy/summary.csv");
  EXPECT_EQ(summary.rows.size(), 21u);
  const auto draws = read_csv(dir / "a/toy/draws.csv");
  EXPECT_EQ(draws.rows.size(), 800u);
}

TEST(Commands, HeldOutRowsStayOutOfTheLikelihood) {
  const auto dir = scratch("held");
  // Same rows with the percentiles moved into the fit.
  std::ofstream(dir / "in.csv") << "geo_id,kind,lower,upper,tau,value,moe,se,held_out\n"
                                << "toy,bin,0,10000,,0.30,0.0329,,0\n"
                                << "toy,bin,10000,30000,,0.45,0.0329,,0\n"
                                << "toy,bin,30000,,,0.25,0.0329,,0\n"
                                << "toy,mean,,,,23000,1645,,0\n"
                                << "toy,median,,,,18900,1645,,0\n"
                                << "toy,quantile,,,0.2,6700,1645,,0\n"
                                << "toy,quantile,,,0.8,32700,3290,,0\n"
                                << "toy,gini,,,,0.42,,0.03,1\n";
  auto r = cli(small_fit(dir / "in.csv", dir / "out"));
  // p80 lies in the open top bin, where the quantile cannot be inverted.
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("geo toy"), std::string::npos);
  std::string edited = read_file(dir / "in.csv");
  edited.replace(edited.find("3290,,0"), 7, "3290,,1");
  std::ofstream(dir / "in.csv") << edited;
  r = cli(small_fit(dir / "in.csv", dir / "out"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(manifest(dir / "out")["geos"][0]["likelihood_terms"], 6);
  EXPECT_EQ(manifest(dir / "out")["geos"][0]["held_out_rows"], 2);
}

TEST(Commands, RerunIsBitwiseIdentical) {
  const auto dir = scratch("rerun");
  ASSERT_EQ(cli(small_fit(kData / "smoke_tract.csv", dir / "a")).code, 0);
  ASSERT_EQ(cli(small_fit(kData / "smoke_tract.csv", dir / "b")).code, 0);
  expect_same_tree(dir / "a", dir / "b");
  // The saved config reproduces the run.
  const auto r = cli({"--config", (dir / "a/config.toml").string(), "fit-tract", "--out",
                      (dir / "c").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  expect_same_tree(dir / "a", dir / "c");
  // Thread count does not change outputs.
  auto args = small_fit(kData / "smoke_tract.csv", dir / "d");
  args.insert(args.end(), {"--threads", "1"});
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(read_file(dir / "a/toy/summary.csv"), read_file(dir / "d/toy/summary.csv"));
}

TEST(Commands, PredictMatchesFitSummary) {
  const auto dir = scratch("predict");
  ASSERT_EQ(cli(small_fit(kData / "smoke_tract.csv", dir / "fit")).code, 0);
  auto r = cli({"predict", "--fit", (dir / "fit").string(), "--out", (dir / "p").string(),
                "--feature-draws", "300"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(dir / "fit/toy/summary.csv"), read_file(dir / "p/toy/summary.csv"));
  r = cli({"predict", "--fit", (dir / "fit").string(), "--out", (dir / "q").string(), "--features",
           "p50,gini", "--population", "50", "--feature-matrix"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_csv(dir / "q/toy/summary.csv").rows.size(), 2u);
  EXPECT_EQ(read_csv(dir / "q/toy/feature_draws.csv").rows.size(), 800u);
}

TEST(Commands, PrlnExactParetoEndToEnd) {
  const auto dir = scratch("prln");
  // Uniform below 50k with mass 0.6, Pareto(2) tail above.
  const std::vector<double> breaks{0, 25000, 50000, 75000, 100000};
  auto surv = [](double x) { return x <= 50000 ? 1.0 - 0.6 * x / 50000 : 0.4 * std::pow(50000 / x, 2.0); };
  std::ofstream f(dir / "in.csv");
  f << "geo_id,kind,lower,upper,value,se\n";
  for (std::size_t k = 0; k < breaks.size(); ++k) {
    const double hi = k + 1 < breaks.size() ? breaks[k + 1] : HUGE_VAL;
    const double mass = surv(breaks[k]) - (k + 1 < breaks.size() ? surv(hi) : 0.0);
    f << "pareto,bin," << format_number(breaks[k]) << ","
      << (k + 1 < breaks.size() ? format_number(hi) : "") << "," << format_number(mass) << ",0.01\n";
  }
  f.close();
  const auto r = cli({"prln", "--estimates", (dir / "in.csv").string(), "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto fit = read_csv(dir / "o/fit.csv");
  const auto ca = *fit.column("alpha");
  for (std::size_t k = 2; k < 5; ++k) EXPECT_NEAR(*parse_number(fit.rows[k][ca]), 2.0, 1e-8);
  EXPECT_EQ(read_csv(dir / "o/fallbacks.csv").rows.size(), 0u);
  const auto est = read_csv(dir / "o/estimates.csv");
  EXPECT_EQ(est.rows.size(), 21u);
}

TEST(Commands, SimulateEmitsMetricLayout) {
  const auto dir = scratch("simulate");
  const auto r = cli({"simulate", "--out", (dir / "s").string(), "--reps", "2", "--tracts", "2",
                      "--households", "1500", "--strata", "8", "--warmup", "150", "--draws", "150",
                      "--chains", "2", "--feature-draws", "100", "--replicates", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = read_csv(dir / "s/metrics.csv");
  const auto relative = read_csv(dir / "s/relative.csv");
  std::vector<std::string> header{"metric", "estimator"};
  for (const auto& n : default_feature_names()) {
    if (n != "mean") header.push_back(n);
  }
  EXPECT_EQ(metrics.header, header);
  EXPECT_EQ(relative.header, header);
  ASSERT_EQ(metrics.rows.size(), 16u);
  ASSERT_EQ(relative.rows.size(), 12u);
  const std::vector<std::string> metric_names{"MAD", "MAPE", "RMSE", "RMSPE"};
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(relative.rows[i][0], metric_names[i / 3]);
    EXPECT_NE(relative.rows[i][1], "Direct");
  }
  EXPECT_EQ(read_csv(dir / "s/coverage.csv").rows.size(), 20u);
  EXPECT_EQ(read_csv(dir / "s/outcomes.csv").rows.size(), 2u * 2u * 20u);
}

TEST(Commands, FitNestedSmoke) {
  const auto dir = scratch("nested");
  const auto r = cli({"fit-nested", "--estimates", (kData / "nested_tracts.csv").string(), "--pums",
                      (kData / "nested_pums.csv").string(), "--out", (dir / "n").string(),
                      "--warmup", "200", "--draws", "200", "--feature-draws", "200"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"A/draws.csv", "A/summary.csv", "B/draws.csv", "B/summary.csv",
                        "diagnostics.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / "n" / f)) << f;
  }
  EXPECT_EQ(manifest(dir / "n")["pums_records"], 40);
  // Fit artifacts load back for prediction and evaluation.
  const auto fa = load_fit(dir / "n");
  ASSERT_EQ(fa.geos.size(), 2u);
  EXPECT_EQ(fa.geos[1].densities.size(), 800u);
  EXPECT_EQ(fa.geos[1].chains, 4u);
  const auto bad = cli({"fit-nested", "--estimates", (kData / "smoke_tract.csv").string(), "--pums",
                        (kData / "nested_pums.csv").string(), "--out", (dir / "m").string(),
                        "--puma", "999"});
  EXPECT_EQ(bad.code, 2);
}

TEST(Commands, EvaluateScoresAndRefusesUnknownTypes) {
  const auto dir = scratch("evaluate");
  ASSERT_EQ(cli(small_fit(kData / "smoke_tract.csv", dir / "fit")).code, 0);
  auto r = cli({"evaluate", "--fit", (dir / "fit").string(), "--out", (dir / "e").string(),
                "--feature-draws", "200"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto waic = read_csv(dir / "e/waic.csv");
  std::vector<std::string> types;
  for (const auto& row : waic.rows) types.push_back(row[0]);
  EXPECT_EQ(types, (std::vector<std::string>{"bins", "mean", "p50", "p20", "p80", "gini"}));
  EXPECT_EQ(read_csv(dir / "e/waic_pointwise.csv").rows.size(), 8u);
  EXPECT_EQ(read_csv(dir / "e/point_metrics.csv").rows.size(), 6u);

  r = cli({"evaluate", "--fit", (dir / "fit").string(), "--out", (dir / "x").string(), "--types",
           "p20,p99"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'p99'"), std::string::npos);
  EXPECT_NE(r.err.find("absent from both the fit and the held-out data"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "x/waic.csv"));
}

TEST(Commands, ExitCodes) {
  const auto dir = scratch("exit");
  EXPECT_EQ(cli(small_fit(dir / "missing.csv", dir / "o")).code, 4);
  std::ofstream(dir / "bad.csv") << "geo_id,kind,value\ng,mean,1\n";
  EXPECT_EQ(cli(small_fit(dir / "bad.csv", dir / "o")).code, 2);
  EXPECT_EQ(cli({"fit-tract", "--estimates"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
  // An impossible R-hat threshold fails the diagnostics but still writes the fit.
  auto args = small_fit(kData / "smoke_tract.csv", dir / "strict");
  args.insert(args.end(), {"--max-rhat", "0.5"});
  const auto r = cli(args);
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(fs::exists(dir / "strict/toy/draws.csv"));
  EXPECT_EQ(nlohmann::json::parse(read_file(dir / "strict/toy/diagnostics.json"))["status"], "failed");
}
