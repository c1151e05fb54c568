#pragma once

// Hierarchical sieve prior: a prior on the threshold M over 1..M_eps,
//
//     p_M(m)     ∝ exp(-3 C m / 2) prod_{j<=m} (s_j / sigma_j)^{1/2},
//     p_M|Y(m)   ∝ exp(  ||theta^m - mu||_sigma^2 / 2 - 3 C m / 2),
//
// the resulting mixture posterior, and its posterior mean, which shrinks
// theta^Y_j towards mu_j by omega_j = P(j <= M <= M_eps | Y).
//
// All weights live in log space and are normalised once with log-sum-exp.
// The contrasts grow like m / eps; exp() is never applied to them directly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "igssm/model.hpp"
#include "igssm/posterior.hpp"
#include "igssm/random.hpp"
#include "igssm/selection.hpp"

namespace igssm {

/// log(sum_i exp(x_i)).
inline double log_sum_exp(std::span<const double> x) {
  require(!x.empty(), "log_sum_exp of an empty sequence");
  const double hi = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double v : x) s += std::exp(v - hi);
  return hi + std::log(s);
}

enum class DistributionKind { prior, posterior };

struct DimensionDistribution {
  std::vector<double> log_weights;  // l_m, m = 1..M_eps, unnormalised
  std::vector<double> prob;         // p_m
  DistributionKind kind = DistributionKind::posterior;

  std::size_t support() const noexcept { return prob.size(); }
  double operator()(std::size_t m) const { return prob.at(m - 1); }
};

inline DimensionDistribution normalise(std::vector<double> log_weights, DistributionKind kind) {
  DimensionDistribution d;
  const double lse = log_sum_exp(log_weights);
  d.prob.resize(log_weights.size());
  for (std::size_t i = 0; i < log_weights.size(); ++i) d.prob[i] = std::exp(log_weights[i] - lse);
  d.log_weights = std::move(log_weights);
  d.kind = kind;
  return d;
}

inline void require_penalty(double C_lambda) {
  require(C_lambda >= 1.0 && std::isfinite(C_lambda), "penalty constant C_lambda must be finite and >= 1");
}

/// Prior on M. Undefined when a coordinate up to M_eps is improper.
inline DimensionDistribution dimension_prior(const PriorSpec& prior, const OperatorSequence& op, double eps,
                                             double C_lambda) {
  require_noise_level(eps);
  require_penalty(C_lambda);
  const std::size_t support = max_dimension(op, eps);
  require(prior.size() >= support, "prior shorter than M_eps");
  if (prior.any_improper(support)) {
    throw std::domain_error("dimension prior is undefined for an improper prior; use dimension_posterior");
  }
  std::vector<double> l(support);
  double acc = 0.0;
  for (std::size_t m = 1; m <= support; ++m) {
    acc += 0.5 * log_prior_to_posterior_variance(prior, op, eps, m);
    l[m - 1] = acc - 1.5 * C_lambda * double(m);
  }
  return normalise(std::move(l), DistributionKind::prior);
}

/// Posterior on M from the per-coordinate contrasts (theta^Y_j - mu_j)^2 / sigma_j.
inline DimensionDistribution dimension_posterior_from_contrasts(std::span<const double> contrasts, double C_lambda) {
  require_penalty(C_lambda);
  require(!contrasts.empty(), "dimension posterior needs at least one coordinate");
  std::vector<double> l(contrasts.size());
  double acc = 0.0;
  for (std::size_t m = 1; m <= contrasts.size(); ++m) {
    acc += 0.5 * contrasts[m - 1];
    l[m - 1] = acc - 1.5 * C_lambda * double(m);
  }
  return normalise(std::move(l), DistributionKind::posterior);
}

inline DimensionDistribution dimension_posterior(const PosteriorSummary& summary, const PriorSpec& prior,
                                                 const OperatorSequence& op, double eps, double C_lambda) {
  require_noise_level(eps);
  const std::size_t support = max_dimension(op, eps);
  require(summary.size() >= support, "posterior summary must cover 1..M_eps");
  std::vector<double> contrasts(support);
  for (std::size_t j = 1; j <= support; ++j) {
    const double d = summary.post_mean[j - 1] - prior.mean(j);
    contrasts[j - 1] = d * d / summary.sigma[j - 1];
  }
  return dimension_posterior_from_contrasts(contrasts, C_lambda);
}

struct AdaptiveEstimate {
  std::vector<double> values;  // theta-hat_j over the summary length
  std::vector<double> omega;   // omega_j, j = 1..M_eps
  DimensionDistribution posterior;
};

/// omega_j = sum_{m >= j} p_m.
inline std::vector<double> shrinkage_weights(const DimensionDistribution& dist) {
  std::vector<double> omega(dist.support());
  double acc = 0.0;
  for (std::size_t m = dist.support(); m >= 1; --m) {
    acc += dist.prob[m - 1];
    omega[m - 1] = std::min(acc, 1.0);
  }
  return omega;
}

/// Posterior mean under the mixture with weights `dist`.
inline AdaptiveEstimate mixture_posterior_mean(DimensionDistribution dist, const PosteriorSummary& summary,
                                               const PriorSpec& prior) {
  require(summary.size() >= dist.support(), "posterior summary must cover the support of M");
  AdaptiveEstimate est;
  est.omega = shrinkage_weights(dist);
  est.values.resize(summary.size());
  for (std::size_t j = 1; j <= summary.size(); ++j) {
    const double mu = prior.mean(j);
    if (j <= dist.support()) {
      const double w = est.omega[j - 1];
      est.values[j - 1] = mu * (1.0 - w) + summary.post_mean[j - 1] * w;
    } else {
      est.values[j - 1] = mu;
    }
  }
  est.posterior = std::move(dist);
  return est;
}

/// Fully data-driven Bayes estimate. Under an improper prior this is the
/// shrunk projection omega_j Y_j / lambda_j, j <= M_eps.
inline AdaptiveEstimate adaptive_estimate(const PosteriorSummary& summary, const PriorSpec& prior,
                                          const OperatorSequence& op, double eps, double C_lambda) {
  return mixture_posterior_mean(dimension_posterior(summary, prior, op, eps, C_lambda), summary, prior);
}

/// Inverse-CDF draw of M, scanning m = 1, 2, ... in order.
inline std::size_t draw_dimension(const DimensionDistribution& dist, double u) {
  double cum = 0.0;
  for (std::size_t m = 1; m <= dist.support(); ++m) {
    cum += dist.prob[m - 1];
    if (u < cum) return m;
  }
  return dist.support();
}

struct HierarchicalDraws {
  std::vector<std::size_t> dimensions;
  std::vector<std::vector<double>> draws;
};

/// Draws from sum_m p_M|Y(m) P_{theta^m | Y}: M first, then the sieve posterior at M.
inline HierarchicalDraws sample_hierarchical_posterior(const PosteriorSummary& summary, const PriorSpec& prior,
                                                       const OperatorSequence& op, double eps, double C_lambda,
                                                       std::size_t n_draws, std::uint64_t seed) {
  require(n_draws >= 1, "n_draws must be >= 1");
  const auto dist = dimension_posterior(summary, prior, op, eps, C_lambda);
  HierarchicalDraws out;
  out.dimensions.resize(n_draws);
  out.draws.assign(n_draws, std::vector<double>(summary.size()));
  NormalSource source(make_stream(seed, 0));
  for (std::size_t i = 0; i < n_draws; ++i) {
    const std::size_t m = draw_dimension(dist, source.uniform());
    out.dimensions[i] = m;
    draw_sieve_posterior(m, summary, prior, source, out.draws[i]);
  }
  return out;
}

}  // namespace igssm
