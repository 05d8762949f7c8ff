#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "popinterp/errors.hpp"
#include "popinterp/functionals.hpp"
#include "support.hpp"

using namespace popinterp;
using testing_support::random_density;

namespace {

PiecewiseDensity unit_box() { return PiecewiseDensity(KnotVector({0, 1}, false), {1.0}, {Uniform{}}); }

double reference_normal_logpdf(double x, double m, double s) {
  const double z = (x - m) / s;
  return std::log(std::exp(-0.5 * z * z) / (s * std::sqrt(2 * std::numbers::pi)));
}

}  // namespace

TEST(Functionals, Evaluate) {
  EXPECT_DOUBLE_EQ(evaluate_functional(unit_box(), BinProportion{0.2, 0.7}), 0.5);
  EXPECT_DOUBLE_EQ(evaluate_functional(unit_box(), MeanEstimate{}), 0.5);
  EXPECT_DOUBLE_EQ(evaluate_functional(unit_box(), QuantileEstimate{0.3}), 0.3);
}

TEST(Functionals, QuantileMatchesBisection) {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const auto d = random_density(rng, i % 2 == 0);
    double lo = d.knots().front(), hi = d.knots().finite().back();
    while (d.cdf(hi) < 0.5) hi *= 2;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (d.cdf(mid) < 0.5 ? lo : hi) = mid;
    }
    EXPECT_NEAR(evaluate_functional(d, QuantileEstimate{0.5}), hi, 1e-8 * std::max(1.0, hi));
  }
}

TEST(Functionals, MonteCarloAgreement) {
  Rng rng(22);
  const auto d = random_density(rng, false);
  const std::size_t n = 1000000;
  auto xs = d.sample(n, rng);
  double m = 0, m2 = 0;
  for (double x : xs) {
    m += x;
    m2 += x * x;
  }
  m /= n;
  const double sd = std::sqrt(m2 / n - m * m);
  EXPECT_NEAR(evaluate_functional(d, MeanEstimate{}), m, 4 * sd / std::sqrt(double(n)));
  std::sort(xs.begin(), xs.end());
  const double q = evaluate_functional(d, QuantileEstimate{0.5});
  const double se = std::sqrt(0.25 / n) / d.pdf(q);
  EXPECT_NEAR(xs[n / 2], q, 4 * se);
}

TEST(Functionals, LoglikRecord) {
  const EstimateRecord at{MeanEstimate{}, 0.5, 1.0};
  EXPECT_NEAR(loglik_record(unit_box(), at), -0.9189385332046727, 1e-12);
  const EstimateRecord off{MeanEstimate{}, 0.5 + 2.0, 2.0};
  EXPECT_NEAR(loglik_record(unit_box(), off), -0.5 * std::log(2 * std::numbers::pi * 4) - 0.5,
              1e-12);
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.normal() * 2, m = rng.normal() * 2, s = 0.5 + 3 * rng.uniform();
    EXPECT_NEAR(gaussian_log_pdf(x, m, s), reference_normal_logpdf(x, m, s), 1e-12);
  }
}

TEST(Functionals, RecordValidation) {
  EXPECT_THROW(validate({MeanEstimate{}, 1.0, 0.0}), DomainError);
  EXPECT_THROW(validate({BinProportion{0, 1}, 1.2, 0.1}), DomainError);
  EXPECT_THROW(validate({BinProportion{2, 1}, 0.2, 0.1}), DomainError);
  EXPECT_THROW(validate({QuantileEstimate{1.0}, 3, 0.1}), DomainError);
  EXPECT_NO_THROW(validate({QuantileEstimate{0.5}, 3, 0.1}));
}

TEST(Functionals, InvertQuantileUniformBin) {
  // Bin [25000, 50000] holds q with b = 0.25; S = 2000.
  KnotVector kv({0, 25000, 50000}, true);
  const std::vector<double> b{0.5, 0.25, 0.25};
  const EstimateRecord med{QuantileEstimate{0.5}, 40000, 2000};
  const auto d6 = invert_quantile(med, b, kv);
  EXPECT_EQ(d6.effective_sd, 2000.0 * 25000.0 / 0.25);
  // Delta method S / pi_hat(q) with pi_hat = b / width = 1e-5.
  EXPECT_DOUBLE_EQ(d6.effective_sd, 2000.0 / 1e-5);
  EXPECT_DOUBLE_EQ(d6.tau, 0.5);
  EXPECT_DOUBLE_EQ(d6.q, 40000);
  const auto d7 = invert_quantile(med, b, kv, QuantilePlugIn::general_bin);
  EXPECT_DOUBLE_EQ(d7.effective_sd, d6.effective_sd);
}

TEST(Functionals, InvertQuantileErrors) {
  KnotVector kv({0, 25000, 50000}, true);
  const std::vector<double> b{0.5, 0.0, 0.5};
  EXPECT_THROW(invert_quantile({QuantileEstimate{0.5}, 40000, 2000}, b, kv),
               DegeneratePlugInError);
  EXPECT_THROW(invert_quantile({QuantileEstimate{0.5}, 60000, 2000}, b, kv,
                               QuantilePlugIn::general_bin),
               UnsupportedApproximationError);
  EXPECT_THROW(invert_quantile({MeanEstimate{}, 60000, 2000}, b, kv), DomainError);
}

TEST(Functionals, UniformPlugInIsExact) {
  // Uniform bin: b / width equals the true density at every point inside.
  PiecewiseDensity d(KnotVector({0, 10, 30}, false), {0.4, 0.6}, {Uniform{}, Uniform{}});
  const std::vector<double> b{0.4, 0.6};
  const EstimateRecord med{QuantileEstimate{0.5}, d.quantile(0.5), 0.3};
  const auto datum = invert_quantile(med, b, d.knots());
  EXPECT_DOUBLE_EQ(datum.effective_sd, 0.3 / d.pdf(med.value));
}

TEST(Functionals, GeneralPlugInOnMildParetoBin) {
  PiecewiseDensity d(KnotVector({0, 50000, 75000}, false), {0.5, 0.5},
                     {Uniform{}, TruncatedPareto{1.2}});
  const double q = d.quantile(0.75);  // conditional median of the Pareto bin
  const double plug = 0.5 / 25000.0;
  EXPECT_LT(std::abs(plug - d.pdf(q)) / d.pdf(q), 0.05);
}

TEST(Functionals, InvertedLoglik) {
  const InvertedQuantileDatum datum{0.25, 0.25, 0.1};
  EXPECT_NEAR(loglik_inverted_quantile(unit_box(), datum),
              -0.5 * std::log(2 * std::numbers::pi * 0.01), 1e-12);
}

TEST(Functionals, InvertedLoglikIsSmooth) {
  // Two uniform bins [0,1],[1,2] with p = (x, 1 - x); q sits in the first bin
  // for some x and the second for others. The inverted form has no kinks.
  const InvertedQuantileDatum datum{0.5, 0.9, 0.05};
  auto f = [&](double x) {
    PiecewiseDensity d(KnotVector({0, 1, 2}, false), {x, 1 - x}, {Uniform{}, Uniform{}});
    return loglik_inverted_quantile(d, datum);
  };
  for (double x = 0.2; x < 0.8; x += 0.05) {
    const double h = 1e-3;
    const double g1 = (f(x + h) - f(x - h)) / (2 * h);
    const double g2 = (f(x + h / 2) - f(x - h / 2)) / h;
    const double exact = -(0.9 * x - 0.5) * 0.9 / (0.05 * 0.05);
    EXPECT_NEAR(g2, exact, 1e-6 * std::abs(exact) + 1e-8);
    // Second-order convergence: halving h cuts the error by about 4.
    EXPECT_LE(std::abs(g2 - exact), std::abs(g1 - exact) / 3.0 + 1e-9);
  }
}

TEST(Functionals, InvertedAndExactAgreeOnMedianLocation) {
  // Two uniform bins [0,1],[1,2]; fit p_1 to a median of 0.8 with small S
  // under both data models and compare the fitted medians.
  const double q = 0.8, S = 1e-3;
  const std::vector<double> b{0.6, 0.4};
  const KnotVector kv({0, 1, 2}, false);
  const EstimateRecord rec{QuantileEstimate{0.5}, q, S};
  const auto datum = invert_quantile(rec, b, kv);
  auto density = [&](double p) {
    return PiecewiseDensity(kv, {p, 1 - p}, {Uniform{}, Uniform{}});
  };
  auto argmax = [&](auto f) {
    double best = 0.5, best_v = -1e300;
    for (int i = 0; i <= 200000; ++i) {
      const double p = 0.5 + 0.45 * i / 200000.0;
      const double v = f(p);
      if (v > best_v) {
        best_v = v;
        best = p;
      }
    }
    return best;
  };
  const double p_exact = argmax([&](double p) { return loglik_record(density(p), rec); });
  const double p_inv = argmax([&](double p) { return loglik_inverted_quantile(density(p), datum); });
  EXPECT_LT(std::abs(density(p_exact).quantile(0.5) - density(p_inv).quantile(0.5)), 1e-3);
}

TEST(Functionals, Describe) {
  EXPECT_EQ(describe(MeanEstimate{}), "mean");
  EXPECT_FALSE(describe(QuantileEstimate{0.2}).empty());
  EXPECT_FALSE(describe(BinProportion{0, 5}).empty());
}
