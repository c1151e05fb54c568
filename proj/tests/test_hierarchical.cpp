#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "igssm/hierarchical.hpp"

namespace {

using namespace igssm;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> normalised_exp(const std::vector<double>& l) {
  double hi = kNegInf;
  for (double v : l) hi = std::max(hi, v);
  std::vector<double> p(l.size());
  double z = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) z += p[i] = std::exp(l[i] - hi);
  for (auto& v : p) v /= z;
  return p;
}

struct Setup {
  OperatorSequence op;
  ParameterSequence theta;
  PriorSpec prior;
  double eps;
};

Setup polynomial_setup(double eps, double d) {
  const std::size_t n = default_truncation(eps);
  auto op = make_operator(OperatorFamily::polynomial, 1.0, n);
  auto theta = make_parameter(ParameterFamily::polynomial, 0.42, 1.6, n);
  auto prior = PriorSpec::scaled(op, eps, d, std::vector<double>(n, 0.0));
  return {std::move(op), std::move(theta), std::move(prior), eps};
}

TEST(LogSumExp, StableUnderLargeShifts) {
  const std::vector<double> x{700.0, 699.0, 690.0};
  const std::vector<double> y{-700.0, -701.0, -710.0};
  EXPECT_NEAR(log_sum_exp(x) - 700.0, log_sum_exp(y) + 700.0, 1e-12);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{0.0, 0.0}), std::log(2.0), 1e-15);
  EXPECT_THROW(log_sum_exp(std::vector<double>{}), std::invalid_argument);
}

TEST(DimensionPosterior, ThreeTermHandExample) {
  const std::vector<double> contrasts{4.0, 1.0, 0.25};
  const auto d = dimension_posterior_from_contrasts(contrasts, 1.0);
  ASSERT_EQ(d.support(), 3u);
  EXPECT_NEAR(d.log_weights[0], 0.5, 1e-15);
  EXPECT_NEAR(d.log_weights[1], -0.5, 1e-15);
  EXPECT_NEAR(d.log_weights[2], -1.875, 1e-15);
  const double z = std::exp(0.5) + std::exp(-0.5) + std::exp(-1.875);
  EXPECT_NEAR(d(1), std::exp(0.5) / z, 1e-15);
  EXPECT_NEAR(d(2), std::exp(-0.5) / z, 1e-15);
  EXPECT_NEAR(d(3), std::exp(-1.875) / z, 1e-15);
}

TEST(DimensionPosterior, ZeroContrastsGivePurePenaltyLaw) {
  for (double C : {1.0, 2.5}) {
    const auto d = dimension_posterior_from_contrasts(std::vector<double>(20, 0.0), C);
    std::vector<double> l(20);
    for (std::size_t m = 1; m <= 20; ++m) l[m - 1] = -1.5 * C * double(m);
    const auto p = normalised_exp(l);
    for (std::size_t m = 1; m <= 20; ++m) EXPECT_NEAR(d(m), p[m - 1], 1e-15);
  }
}

TEST(DimensionPosterior, InvariantUnderCommonShiftOfLogWeights) {
  std::vector<double> l{1.0, 3.0, -2.0, 0.5};
  const auto a = normalise(l, DistributionKind::posterior);
  for (double shift : {700.0, -700.0}) {
    auto s = l;
    for (auto& v : s) v += shift;
    const auto b = normalise(s, DistributionKind::posterior);
    for (std::size_t m = 1; m <= 4; ++m) EXPECT_NEAR(a(m), b(m), 1e-12);
  }
}

TEST(DimensionPosterior, HugeContrastsStayFinite) {
  std::vector<double> c(50, 1e7);
  const auto d = dimension_posterior_from_contrasts(c, 1.0);
  double total = 0.0;
  for (std::size_t m = 1; m <= 50; ++m) {
    ASSERT_TRUE(std::isfinite(d(m)));
    total += d(m);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(d(50), 1.0, 1e-12);
}

TEST(DimensionPosterior, SinglePointSupportWhenMaxDimensionIsOne) {
  const std::size_t n = 5;
  const auto op = make_operator(OperatorFamily::constant, 0.0, n);
  const double eps = 0.9;
  ASSERT_EQ(max_dimension(op, eps), 1u);
  const auto prior = PriorSpec::proper(std::vector<double>(n, 0.0), std::vector<double>(n, 1.0));
  Observation obs{{3.0, -1.0, 0.2, 0.0, 1.0}, eps, 0};
  const auto summary = coordinate_posterior(prior, op, obs);
  const auto d = dimension_posterior(summary, prior, op, eps, 1.0);
  ASSERT_EQ(d.support(), 1u);
  EXPECT_EQ(d(1), 1.0);
  const auto pr = dimension_prior(prior, op, eps, 1.0);
  EXPECT_EQ(pr(1), 1.0);
}

TEST(DimensionPrior, ConstantSignalRatioGivesGeometricLaw) {
  const std::size_t n = 1000;
  const double eps = 1e-2, K = 3.0;
  const auto op = make_operator(OperatorFamily::constant, 0.0, n);
  const auto prior = PriorSpec::proper(std::vector<double>(n, 0.0), std::vector<double>(n, K * eps));
  const auto d = dimension_prior(prior, op, eps, 1.0);
  ASSERT_EQ(d.support(), 100u);
  const double g = 0.5 * std::log(1.0 + K) - 1.5;
  std::vector<double> l(100);
  for (std::size_t m = 1; m <= 100; ++m) l[m - 1] = double(m) * g;
  const auto p = normalised_exp(l);
  for (std::size_t m = 1; m <= 100; ++m) EXPECT_NEAR(d(m), p[m - 1], 1e-14);
}

TEST(DimensionPrior, UndefinedForImproperPrior) {
  const auto op = make_operator(OperatorFamily::constant, 0.0, 100);
  EXPECT_THROW(dimension_prior(PriorSpec::improper(100), op, 0.1, 1.0), std::domain_error);
  const auto prior = PriorSpec::proper(std::vector<double>(100, 0.0), std::vector<double>(100, 1.0));
  EXPECT_THROW(dimension_prior(prior, op, 0.1, 0.5), std::invalid_argument);
}

// Posterior on M computed the long way: prior weight times the Gaussian
// marginal likelihood of Y under the m-th sieve prior.
TEST(DimensionPosterior, EqualsPriorTimesMarginalLikelihood) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 60;
    const double eps = 0.02 + 0.05 * u(rng);
    const auto op = make_operator(OperatorFamily::polynomial, 0.2 * u(rng), n);
    std::vector<double> mu(n), s(n), theta(n);
    for (std::size_t j = 0; j < n; ++j) {
      mu[j] = 0.3 * (u(rng) - 0.5);
      s[j] = 0.01 + u(rng);
      theta[j] = std::pow(double(j + 1), -1.0) * (1.0 + u(rng));
    }
    const auto prior = PriorSpec::proper(mu, s);
    const auto obs = simulate_observation(make_explicit_parameter(theta, n), op, eps, 100 + std::uint64_t(t));
    const auto summary = coordinate_posterior(prior, op, obs);
    const double C = 1.0 + u(rng);
    const auto post = dimension_posterior(summary, prior, op, eps, C);
    const auto pri = dimension_prior(prior, op, eps, C);
    const std::size_t M = post.support();
    auto log_normal = [](double x, double mean, double var) {
      return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
    };
    std::vector<double> l(M);
    for (std::size_t m = 1; m <= M; ++m) {
      double ll = std::log(pri(m));
      for (std::size_t j = 1; j <= M; ++j) {
        const double lam = op.lambda(j);
        const double var = j <= m ? lam * lam * s[j - 1] + eps : eps;
        ll += log_normal(obs.y[j - 1], lam * mu[j - 1], var);
      }
      l[m - 1] = ll;
    }
    const auto p = normalised_exp(l);
    for (std::size_t m = 1; m <= M; ++m) EXPECT_NEAR(post(m), p[m - 1], 1e-10) << "config " << t << " m " << m;
  }
}

TEST(Shrinkage, WeightsAreTailSumsStartingAtOne) {
  const auto s = polynomial_setup(1e-3, 1.0);
  const auto obs = simulate_observation(s.theta, s.op, s.eps, 11);
  const auto summary = coordinate_posterior(s.prior, s.op, obs);
  const auto est = adaptive_estimate(summary, s.prior, s.op, s.eps, 1.0);
  ASSERT_EQ(est.omega.size(), est.posterior.support());
  EXPECT_NEAR(est.omega[0], 1.0, 1e-12);
  for (std::size_t j = 1; j < est.omega.size(); ++j) {
    EXPECT_LE(est.omega[j], est.omega[j - 1]);
    double tail = 0.0;
    for (std::size_t m = j + 1; m <= est.posterior.support(); ++m) tail += est.posterior(m);
    EXPECT_NEAR(est.omega[j], tail, 1e-12);
  }
}

TEST(Shrinkage, MixtureIdentityOnRandomConfigs) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 25; ++t) {
    const std::size_t n = 10 + std::size_t(u(rng) * 190);
    const double eps = std::pow(10.0, -1.0 - 2.0 * u(rng));
    const auto op = make_operator(OperatorFamily::polynomial, u(rng), n);
    std::vector<CoordinatePrior> coords(n);
    for (std::size_t j = 0; j < n; ++j) {
      const bool improper = u(rng) < 0.3;
      if (improper) {
        coords[j] = ImproperCoordinate{};
      } else {
        coords[j] = ProperCoordinate{0.2 * (u(rng) - 0.5), 0.05 + u(rng)};
      }
    }
    const PriorSpec prior(coords);
    const auto theta = make_parameter(ParameterFamily::polynomial, 1.0, 1.0 + u(rng), n);
    const auto summary = coordinate_posterior(prior, op, simulate_observation(theta, op, eps, 7 + std::uint64_t(t)));
    const auto est = adaptive_estimate(summary, prior, op, eps, 1.0);
    const std::size_t M = est.posterior.support();
    for (std::size_t j = 1; j <= n; ++j) {
      double mix = 0.0;
      for (std::size_t m = 1; m <= M; ++m) mix += est.posterior(m) * (j <= m ? summary.post_mean[j - 1] : prior.mean(j));
      EXPECT_NEAR(est.values[j - 1], mix, 1e-12 * (1.0 + std::abs(mix)));
    }
  }
}

TEST(Shrinkage, PointMassMixtureIsTheSieveMean) {
  const auto s = polynomial_setup(1e-2, 2.0);
  const auto summary = coordinate_posterior(s.prior, s.op, simulate_observation(s.theta, s.op, s.eps, 3));
  const std::size_t M = max_dimension(s.op, s.eps);
  for (std::size_t k : {std::size_t{1}, M / 2, M}) {
    std::vector<double> l(M, kNegInf);
    l[k - 1] = 0.0;
    const auto est = mixture_posterior_mean(normalise(l, DistributionKind::posterior), summary, s.prior);
    const auto sieve = sieve_posterior_mean(k, summary, s.prior);
    for (std::size_t j = 0; j < summary.size(); ++j) EXPECT_EQ(est.values[j], sieve.values[j]);
  }
}

TEST(Shrinkage, ImproperPriorShrinksTheProjection) {
  const std::size_t n = 200;
  const double eps = 1e-2;
  const auto op = make_operator(OperatorFamily::polynomial, 0.5, n);
  const auto theta = make_parameter(ParameterFamily::polynomial, 1.0, 1.5, n);
  const auto prior = PriorSpec::improper(n);
  const auto obs = simulate_observation(theta, op, eps, 4);
  const auto est = adaptive_estimate(coordinate_posterior(prior, op, obs), prior, op, eps, 1.0);
  const std::size_t M = max_dimension(op, eps);
  for (std::size_t j = 1; j <= n; ++j) {
    const double expected = j <= M ? est.omega[j - 1] * obs.y[j - 1] / op.lambda(j) : 0.0;
    EXPECT_NEAR(est.values[j - 1], expected, 1e-12 * (1.0 + std::abs(expected)));
  }
}

TEST(Shrinkage, MoreSignalRaisesEveryWeight) {
  std::vector<double> c{3.0, 2.0, 1.0, 0.5, 0.2, 0.1, 4.0, 0.0};
  const auto base = shrinkage_weights(dimension_posterior_from_contrasts(c, 1.0));
  for (std::size_t k = 0; k < c.size(); ++k) {
    auto more = c;
    more[k] += 2.0;
    const auto w = shrinkage_weights(dimension_posterior_from_contrasts(more, 1.0));
    for (std::size_t j = 0; j < c.size(); ++j) EXPECT_GE(w[j], base[j] - 1e-15);
    if (k > 0) {
      EXPECT_GT(w[k], base[k]);
    }
  }
}

TEST(Sampling, DimensionFrequenciesAndDrawMeanMatch) {
  const auto s = polynomial_setup(1e-2, 1.0);
  const auto summary = coordinate_posterior(s.prior, s.op, simulate_observation(s.theta, s.op, s.eps, 8));
  const auto est = adaptive_estimate(summary, s.prior, s.op, s.eps, 1.0);
  const std::size_t draws = 40000;
  const auto h = sample_hierarchical_posterior(summary, s.prior, s.op, s.eps, 1.0, draws, 99);
  const std::size_t M = est.posterior.support();
  std::vector<double> freq(M, 0.0);
  for (auto m : h.dimensions) freq[m - 1] += 1.0 / double(draws);
  for (std::size_t m = 1; m <= M; ++m) {
    const double p = est.posterior(m);
    EXPECT_LE(std::abs(freq[m - 1] - p), 3.0 * std::sqrt(p * (1 - p) / double(draws)) + 1e-12) << m;
  }
  for (std::size_t j = 0; j < 6; ++j) {
    double mean = 0.0, sq = 0.0;
    for (const auto& d : h.draws) {
      mean += d[j];
      sq += d[j] * d[j];
    }
    mean /= double(draws);
    const double se = std::sqrt(std::max(sq / double(draws) - mean * mean, 0.0) / double(draws));
    EXPECT_LE(std::abs(mean - est.values[j]), 3.0 * se + 1e-12) << j;
  }
  const auto again = sample_hierarchical_posterior(summary, s.prior, s.op, s.eps, 1.0, 100, 99);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(again.draws[i], h.draws[i]);
}

TEST(Sampling, InverseCdfDrawsAtTheEnds) {
  const auto d = dimension_posterior_from_contrasts(std::vector<double>{1.0, 2.0, 3.0}, 1.0);
  EXPECT_EQ(draw_dimension(d, 0.0), 1u);
  EXPECT_EQ(draw_dimension(d, std::nextafter(1.0, 0.0)), 3u);
  EXPECT_EQ(draw_dimension(d, d(1) * 0.999), 1u);
  EXPECT_EQ(draw_dimension(d, d(1) * 1.001), 2u);
}

}  // namespace
