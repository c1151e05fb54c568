#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "igssm/model.hpp"

namespace {

using namespace igssm;

TEST(Operator, PolynomialSmallCase) {
  const auto op = make_operator(OperatorFamily::polynomial, 1.0, 3);
  const double lsq[] = {1.0, 0.25, 1.0 / 9.0};
  const double cap[] = {1.0, 4.0, 9.0};
  for (std::size_t j = 1; j <= 3; ++j) {
    EXPECT_NEAR(op.lambda_sq(j), lsq[j - 1], 1e-15);
    EXPECT_NEAR(op.Lambda(j), cap[j - 1], 1e-13);
  }
  EXPECT_NEAR(op.Lambda_max(3), 9.0, 1e-13);
  EXPECT_NEAR(op.Lambda_mean(3), 14.0 / 3.0, 1e-13);
}

TEST(Operator, ConstantIsTheDirectModel) {
  const auto op = make_operator(OperatorFamily::constant, 0.0, 5);
  for (std::size_t j = 1; j <= 5; ++j) {
    EXPECT_EQ(op.lambda(j), 1.0);
    EXPECT_NEAR(op.Lambda_mean(j), 1.0, 1e-15);
  }
  EXPECT_EQ(op.sup_lambda(), 1.0);
}

TEST(Operator, ExponentialAgainstScalarEvaluation) {
  const auto op = make_operator(OperatorFamily::exponential, 0.5, 4);
  for (std::size_t j = 1; j <= 4; ++j) {
    const double expected = std::exp(-std::pow(double(j), 1.0) + 1.0);
    EXPECT_NEAR(op.lambda_sq(j), expected, 1e-15 * std::max(1.0, expected));
  }
  EXPECT_NEAR(op.Lambda_max(4), std::exp(3.0), 1e-12);
}

TEST(Operator, ExponentialOverflowIsCheckedNotInfinite) {
  const auto op = make_operator(OperatorFamily::exponential, 1.0, 40);
  // log Lambda_40 = 40^2 - 1 = 1599, far beyond log(DBL_MAX) ~ 709.8.
  EXPECT_NEAR(op.log_Lambda(40), 1599.0, 1e-9);
  EXPECT_THROW((void)op.Lambda(40), Infeasible);
  EXPECT_THROW((void)op.Lambda_max(40), Infeasible);
  EXPECT_NO_THROW((void)op.Lambda(20));
}

TEST(Operator, RejectsBadInput) {
  EXPECT_THROW(make_operator(OperatorFamily::polynomial, -0.1, 3), std::invalid_argument);
  EXPECT_THROW(make_operator(OperatorFamily::polynomial, 1.0, 0), std::invalid_argument);
  const std::vector<double> bad{1.0, 0.0, 0.5};
  EXPECT_THROW(make_explicit_operator(bad), std::invalid_argument);
  const std::vector<double> neg{1.0, -0.5};
  EXPECT_THROW(make_explicit_operator(neg), std::invalid_argument);
}

TEST(Operator, ExplicitListRoundTrips) {
  const std::vector<double> lam{2.0, 0.5, 1.0, 0.25};
  const auto op = make_explicit_operator(lam);
  for (std::size_t j = 1; j <= lam.size(); ++j) EXPECT_NEAR(op.lambda(j), lam[j - 1], 1e-15);
  EXPECT_NEAR(op.sup_lambda(), 2.0, 1e-15);
  EXPECT_NEAR(op.Lambda_max(2), 4.0, 1e-14);
  EXPECT_NEAR(op.Lambda_max(4), 16.0, 1e-13);
}

TEST(Operator, DerivedSequencesHaveTheirOrderProperties) {
  for (auto fam : {OperatorFamily::polynomial, OperatorFamily::exponential, OperatorFamily::constant}) {
    const auto op = make_operator(fam, 0.7, 200);
    for (std::size_t m = 2; m <= 200; ++m) {
      EXPECT_GE(op.log_Lambda_max(m), op.log_Lambda_max(m - 1));
      EXPECT_GT(op.log_Lambda_sum(m), op.log_Lambda_sum(m - 1));
      EXPECT_LE(op.log_Lambda_mean(m), op.log_Lambda_max(m) + 1e-12);
    }
  }
}

TEST(Operator, VarianceProxyMatchesDirectSum) {
  const auto op = make_operator(OperatorFamily::polynomial, 1.5, 50);
  const double eps = 1e-3;
  double s = 0.0;
  for (std::size_t m = 1; m <= 50; ++m) {
    s += std::pow(double(m), 3.0);
    EXPECT_NEAR(op.variance_proxy(eps, m), eps * s, 1e-12 * eps * s);
  }
}

TEST(Noise, LevelValidationAndTruncation) {
  EXPECT_THROW(require_noise_level(0.0), std::invalid_argument);
  EXPECT_THROW(require_noise_level(1.0), std::invalid_argument);
  EXPECT_THROW(require_noise_level(1.5), std::invalid_argument);
  EXPECT_NO_THROW(require_noise_level(0.5));
  EXPECT_EQ(default_truncation(1e-2), 100u);
  EXPECT_EQ(default_truncation(0.3), 4u);
  EXPECT_EQ(inverse_floor(1e-3), 1000u);
  EXPECT_EQ(inverse_floor(0.3), 3u);
}

TEST(Parameter, PolynomialValuesAndTailDominatesTrueTail) {
  const double q = 1.0;
  const auto th = make_parameter(ParameterFamily::polynomial, 2.0, q, 100);
  EXPECT_NEAR(th[1], 2.0, 1e-15);
  EXPECT_NEAR(th[10], 0.2, 1e-15);
  double tail = 0.0;
  for (std::size_t j = 101; j <= 2'000'000; ++j) tail += 4.0 / (double(j) * double(j));
  tail += 4.0 / 2'000'000.5;  // integral remainder, tight for this tail
  EXPECT_GE(th.tail_sq, tail);
  EXPECT_LT(th.tail_sq / tail - 1.0, 1e-4);
}

TEST(Parameter, ExponentialTailIsExactGeometricRemainder) {
  const auto th = make_parameter(ParameterFamily::exponential, 1.5, 0.3, 20);
  double tail = 0.0;
  for (std::size_t j = 21; j <= 2000; ++j) tail += std::pow(1.5 * std::exp(-0.3 * double(j)), 2);
  EXPECT_NEAR(th.tail_sq, tail, 1e-14);
  EXPECT_NEAR(th[3], 1.5 * std::exp(-0.9), 1e-15);
}

TEST(Parameter, RejectsNonSquareSummableExponent) {
  EXPECT_THROW(make_parameter(ParameterFamily::polynomial, 1.0, 0.5, 10), std::invalid_argument);
  EXPECT_THROW(make_parameter(ParameterFamily::exponential, 1.0, 0.0, 10), std::invalid_argument);
}

TEST(Parameter, ExplicitListPadsWithZerosAndMovesRemainderToTail) {
  const std::vector<double> v{1.0, 2.0, 3.0};
  const auto longer = make_explicit_parameter(v, 5);
  EXPECT_EQ(longer.values, (std::vector<double>{1.0, 2.0, 3.0, 0.0, 0.0}));
  EXPECT_EQ(longer.tail_sq, 0.0);
  const auto shorter = make_explicit_parameter(v, 2);
  EXPECT_EQ(shorter.values, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(shorter.tail_sq, 9.0);
}

TEST(WeightedClassTest, BiasBoundExamples) {
  const auto cls = make_class(WeightFamily::polynomial, 1.0, 1.0, 20);
  EXPECT_NEAR(class_bias_bound(cls, 2), 0.25, 1e-15);
  const auto zero = make_class(WeightFamily::polynomial, 1.0, 0.0, 20);
  for (std::size_t m = 1; m <= 20; ++m) EXPECT_EQ(class_bias_bound(zero, m), 0.0);
  const auto big = make_class(WeightFamily::polynomial, 1.0, 3.0, 20);
  EXPECT_NEAR(class_bias_bound(big, 10), 0.03, 1e-15);
  EXPECT_THROW((void)class_bias_bound(cls, 0), std::out_of_range);
  EXPECT_THROW((void)class_bias_bound(cls, 21), std::out_of_range);
}

TEST(WeightedClassTest, RejectsInadmissibleWeights) {
  EXPECT_THROW(WeightedClass(std::vector<double>{1.0, 1.0, 1.0}, 1.0), std::invalid_argument);
  EXPECT_THROW(WeightedClass(std::vector<double>{0.5, 0.25}, 1.0), std::invalid_argument);
  EXPECT_THROW(WeightedClass(std::vector<double>{1.0, 0.5, 0.75}, 1.0), std::invalid_argument);
  EXPECT_THROW(WeightedClass(std::vector<double>{1.0, 0.5}, -1.0), std::invalid_argument);
  EXPECT_NO_THROW(WeightedClass(std::vector<double>{1.0, 0.5, 0.25}, 1.0));
}

TEST(WeightedClassTest, MembershipUsesWeightedNorm) {
  const auto cls = make_class(WeightFamily::polynomial, 1.0, 1.0, 3);
  const std::vector<double> mu(3, 0.0);
  // sum theta_j^2 j^2 = 0.25 + 0.25 + 0.09 * 9 = 1.31
  const std::vector<double> theta{0.5, 0.25, 0.3};
  EXPECT_NEAR(cls.weighted_distance(theta, mu), 1.31, 1e-14);
  EXPECT_FALSE(cls.contains(theta, mu));
  const std::vector<double> inside{0.5, 0.25, 0.1};
  EXPECT_TRUE(cls.contains(inside, mu));
}

TEST(WeightedClassTest, ExponentialWeightsStayPositive) {
  const auto cls = make_class(WeightFamily::exponential, 1.0, 1.0, 100);
  EXPECT_EQ(cls.weight(1), 1.0);
  for (std::size_t m = 2; m <= 100; ++m) {
    EXPECT_GT(cls.weight(m), 0.0);
    EXPECT_LE(cls.weight(m), cls.weight(m - 1));
  }
}

TEST(Simulation, VanishingNoiseRecoversTheParameter) {
  const auto op = make_operator(OperatorFamily::polynomial, 1.0, 10);
  const auto th = make_parameter(ParameterFamily::polynomial, 1.0, 1.0, 10);
  int close = 0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r) {
    const auto obs = simulate_observation(th, op, 1e-12, 3, static_cast<std::uint64_t>(r));
    double s = 0.0;
    for (std::size_t j = 1; j <= 10; ++j) s += std::pow(obs.y[j - 1] / op.lambda(j) - th[j], 2);
    close += std::sqrt(s) < 1e-4 ? 1 : 0;
  }
  EXPECT_GE(double(close) / reps, 0.999);
}

TEST(Simulation, PureNoiseHasVarianceEps) {
  const auto op = make_operator(OperatorFamily::constant, 0.0, 4);
  const auto zero = make_explicit_parameter(std::vector<double>(4, 0.0), 4);
  const int reps = 100000;
  std::vector<double> sq(reps);
  for (int r = 0; r < reps; ++r) {
    const auto obs = simulate_observation(zero, op, 0.25, 11, static_cast<std::uint64_t>(r));
    sq[static_cast<std::size_t>(r)] = obs.y[2] * obs.y[2];
  }
  double mean = 0.0;
  for (double v : sq) mean += v;
  mean /= reps;
  double ss = 0.0;
  for (double v : sq) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (reps - 1) / reps);
  EXPECT_NEAR(mean, 0.25, 3.0 * se);
}

TEST(Simulation, CoordinateMeanAndVarianceMatchTheModel) {
  const auto op = make_operator(OperatorFamily::polynomial, 0.5, 3);
  const auto th = make_explicit_parameter(std::vector<double>{1.0, -2.0, 0.5}, 3);
  const double eps = 0.04;
  const int reps = 50000;
  for (std::size_t j = 1; j <= 3; ++j) {
    double s = 0.0, ss = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double y = simulate_observation(th, op, eps, 5, static_cast<std::uint64_t>(r)).y[j - 1];
      s += y;
      ss += y * y;
    }
    const double mean = s / reps;
    const double var = ss / reps - mean * mean;
    EXPECT_NEAR(mean, op.lambda(j) * th[j], 3.0 * std::sqrt(eps / reps));
    EXPECT_NEAR(var, eps, 3.0 * eps * std::sqrt(2.0 / reps));
  }
}

TEST(Simulation, SeedDeterminesOutputBitForBit) {
  const auto op = make_operator(OperatorFamily::polynomial, 1.0, 50);
  const auto th = make_parameter(ParameterFamily::polynomial, 1.0, 1.2, 50);
  const auto a = simulate_observation(th, op, 0.01, 42);
  const auto b = simulate_observation(th, op, 0.01, 42);
  EXPECT_EQ(a.y, b.y);
  const auto c = simulate_observation(th, op, 0.01, 43);
  EXPECT_NE(a.y, c.y);
}

TEST(Simulation, PrefixDrawsMatchTheFullDraw) {
  const auto op = make_operator(OperatorFamily::polynomial, 1.0, 30);
  const auto th = make_parameter(ParameterFamily::polynomial, 1.0, 1.2, 30);
  const auto full = simulate_observation(th, op, 0.01, 8, 3);
  const auto part = simulate_observation(th, op, 0.01, 8, 3, 7);
  ASSERT_EQ(part.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(part.y[i], full.y[i]);
}

TEST(Simulation, RejectsInvalidInput) {
  const auto op = make_operator(OperatorFamily::polynomial, 1.0, 5);
  const auto th = make_parameter(ParameterFamily::polynomial, 1.0, 1.0, 5);
  const auto th6 = make_parameter(ParameterFamily::polynomial, 1.0, 1.0, 6);
  EXPECT_THROW(simulate_observation(th, op, 1.5, 1), std::invalid_argument);
  EXPECT_THROW(simulate_observation(th, op, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(simulate_observation(th6, op, 0.1, 1), std::invalid_argument);
}

}  // namespace
