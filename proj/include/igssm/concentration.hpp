#pragma once

// Monte Carlo verification: chi-square type tail-bound audits, MISE of the
// sieve and hierarchical Bayes estimators, posterior concentration
// probabilities, and log-log rate regression.
//
// Replication i always draws from stream i of the master seed. Per
// replication results go into slot i and are reduced in index order, so
// the outcome does not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "igssm/hierarchical.hpp"
#include "igssm/model.hpp"
#include "igssm/posterior.hpp"
#include "igssm/random.hpp"
#include "igssm/selection.hpp"

namespace igssm {

struct MCEstimate {
  double value = 0.0;
  double se = 0.0;  // sample SD / sqrt(reps)
  std::size_t reps = 0;
  std::uint64_t seed = 0;
};

inline MCEstimate summarize(std::span<const double> samples, std::uint64_t seed) {
  require(!samples.empty(), "cannot summarise zero replications");
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double sd = samples.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return {mean, sd / std::sqrt(n), samples.size(), seed};
}

// ---------------------------------------------------------------------------
// Tail bounds for S_m = sum_j X_j^2, X_j ~ N(alpha_j, beta_j^2)

struct TailBoundConfig {
  std::vector<double> alpha;
  std::vector<double> beta;
  double v = 0.0;  // >= sum beta_j^2
  double t = 0.0;  // >= max beta_j^2, > 0
  double r = 0.0;  // >= sum alpha_j^2
  double c = 0.0;

  std::size_t m() const noexcept { return alpha.size(); }
  double mean_sum() const {
    double s = 0.0;
    for (std::size_t j = 0; j < alpha.size(); ++j) s += alpha[j] * alpha[j] + beta[j] * beta[j];
    return s;
  }

  void validate() const {
    require(!alpha.empty() && alpha.size() == beta.size(), "tail config: alpha and beta must have equal length m >= 1");
    require(c >= 0.0 && std::isfinite(c), "tail config: deviation scale c must be >= 0");
    double sb = 0.0, mb = 0.0, sa = 0.0;
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      require(beta[j] >= 0.0, "tail config: standard deviations must be >= 0");
      sb += beta[j] * beta[j];
      mb = std::max(mb, beta[j] * beta[j]);
      sa += alpha[j] * alpha[j];
    }
    const double tol = 1e-12;
    require(v >= sb * (1 - tol), "tail config: v must dominate sum beta_j^2");
    require(t >= mb * (1 - tol) && t > 0.0, "tail config: t must dominate max beta_j^2 and be positive");
    require(r >= sa * (1 - tol), "tail config: r must dominate sum alpha_j^2");
  }
};

/// Tight envelopes v = sum beta^2, t = max beta^2, r = sum alpha^2.
inline TailBoundConfig make_tail_config(std::vector<double> alpha, std::vector<double> beta, double c) {
  TailBoundConfig cfg{std::move(alpha), std::move(beta), 0.0, 0.0, 0.0, c};
  for (std::size_t j = 0; j < cfg.alpha.size() && j < cfg.beta.size(); ++j) {
    cfg.v += cfg.beta[j] * cfg.beta[j];
    cfg.t = std::max(cfg.t, cfg.beta[j] * cfg.beta[j]);
    cfg.r += cfg.alpha[j] * cfg.alpha[j];
  }
  cfg.validate();
  return cfg;
}

/// exp(-c (c ^ 1)(v + 2r) / (4t)), the bound on both deviation probabilities.
inline double tail_probability_bound(const TailBoundConfig& cfg) {
  return std::exp(-cfg.c * std::min(cfg.c, 1.0) * (cfg.v + 2.0 * cfg.r) / (4.0 * cfg.t));
}

/// 6 t exp(-c (v + 2r) / (4t)), the bound on E(S - ES - 3c(v+2r)/2)_+.
inline double tail_excess_bound(const TailBoundConfig& cfg) {
  return 6.0 * cfg.t * std::exp(-cfg.c * (cfg.v + 2.0 * cfg.r) / (4.0 * cfg.t));
}

struct BoundCheck {
  MCEstimate empirical;
  double bound = 0.0;
  bool pass = false;  // empirical <= bound + 3 SE
};

inline BoundCheck check_bound(MCEstimate e, double bound) {
  return {e, bound, e.value <= bound + 3.0 * e.se};
}

struct TailAudit {
  BoundCheck lower;                  // P(S - ES <= -c(v+2r))
  BoundCheck upper;                  // P(S - ES >= 3c(v+2r)/2)
  std::optional<BoundCheck> excess;  // only for c >= 1
  bool pass() const { return lower.pass && upper.pass && (!excess || excess->pass); }
};

inline TailAudit audit_tail_bounds(const TailBoundConfig& cfg, std::size_t reps, std::uint64_t seed) {
  cfg.validate();
  require(reps >= 10000, "tail audit needs at least 10^4 replications");
  const double es = cfg.mean_sum();
  const double scale = cfg.v + 2.0 * cfg.r;
  const double lo = -cfg.c * scale;
  const double hi = 1.5 * cfg.c * scale;
  constexpr std::size_t kBlock = 1024;
  const std::size_t blocks = (reps + kBlock - 1) / kBlock;
  std::vector<double> below(reps), above(reps), excess(reps);
  parallel_for(blocks, [&](std::size_t b) {
    NormalSource normals(make_stream(seed, b));
    const std::size_t end = std::min(reps, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.m(); ++j) {
        const double x = cfg.alpha[j] + cfg.beta[j] * normals();
        s += x * x;
      }
      const double dev = s - es;
      below[i] = dev <= lo ? 1.0 : 0.0;
      above[i] = dev >= hi ? 1.0 : 0.0;
      excess[i] = std::max(dev - hi, 0.0);
    }
  });
  TailAudit audit;
  const double pb = tail_probability_bound(cfg);
  audit.lower = check_bound(summarize(below, seed), pb);
  audit.upper = check_bound(summarize(above, seed), pb);
  if (cfg.c >= 1.0) audit.excess = check_bound(summarize(excess, seed), tail_excess_bound(cfg));
  return audit;
}

// ---------------------------------------------------------------------------
// Estimators and their MISE

enum class EstimatorKind { fixed, oracle, minimax, adaptive };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::fixed: return "fixed";
    case EstimatorKind::oracle: return "oracle";
    case EstimatorKind::minimax: return "minimax";
    case EstimatorKind::adaptive: return "adaptive";
  }
  return "?";
}

/// Everything an estimator or posterior needs besides theta0 and the data.
struct EstimatorSetup {
  EstimatorKind kind = EstimatorKind::oracle;
  std::size_t fixed_dimension = 0;      // for EstimatorKind::fixed
  const WeightedClass* cls = nullptr;   // for EstimatorKind::minimax
  double C_lambda = 1.0;                // for EstimatorKind::adaptive
};

struct MiseResult {
  MCEstimate mise;
  std::size_t dimension = 0;  // sieve dimension, or M_eps for the adaptive estimator
  bool feasible = true;       // adaptive: m* <= M_eps
};

/// Sieve dimension used by a non-adaptive kind.
inline std::size_t sieve_dimension(const EstimatorSetup& setup, const ParameterSequence& theta0,
                                   const PriorSpec& prior, const OperatorSequence& op, double eps) {
  switch (setup.kind) {
    case EstimatorKind::fixed:
      require_dimension(setup.fixed_dimension, op.size());
      return setup.fixed_dimension;
    case EstimatorKind::oracle: return oracle_dimension(theta0, prior, op, eps).dimension;
    case EstimatorKind::minimax:
      require(setup.cls != nullptr, "minimax estimator needs a weighted class");
      return minimax_dimension(*setup.cls, op, eps).dimension;
    case EstimatorKind::adaptive: break;
  }
  throw std::invalid_argument("adaptive estimator has no fixed sieve dimension");
}

/// Squared error of the estimate on coordinates 1..n plus the deterministic
/// bias sum_{j>n} (mu_j - theta_j)^2 (`bias_beyond` = b_n).
inline double squared_error(std::span<const double> estimate, const ParameterSequence& theta0, double bias_beyond) {
  double s = bias_beyond;
  for (std::size_t j = 0; j < estimate.size(); ++j) {
    const double d = estimate[j] - theta0.values[j];
    s += d * d;
  }
  return s;
}

/// Estimate for one observation of the first n coordinates.
inline std::vector<double> estimate_from(const EstimatorSetup& setup, std::size_t dimension,
                                         const PosteriorSummary& summary, const PriorSpec& prior,
                                         const OperatorSequence& op, double eps) {
  if (setup.kind == EstimatorKind::adaptive) {
    return adaptive_estimate(summary, prior, op, eps, setup.C_lambda).values;
  }
  return sieve_posterior_mean(dimension, summary, prior).values;
}

/// E ||theta-hat - theta0||^2 over `reps` fresh observations. Only the
/// coordinates the estimator reads are simulated; beyond them the estimate
/// equals the prior mean and the error is the exact bias.
inline MiseResult mc_mise(const EstimatorSetup& setup, const ParameterSequence& theta0, const PriorSpec& prior,
                          const OperatorSequence& op, double eps, std::size_t reps, std::uint64_t seed) {
  require_noise_level(eps);
  require(reps >= 50, "mc_mise needs at least 50 replications");
  require(theta0.size() == op.size() && prior.size() >= op.size(), "mc_mise: inconsistent lengths");
  MiseResult res;
  std::size_t n = 0;
  if (setup.kind == EstimatorKind::adaptive) {
    n = max_dimension(op, eps);
    res.feasible = oracle_dimension(theta0, prior, op, eps).dimension <= n;
  } else {
    n = sieve_dimension(setup, theta0, prior, op, eps);
  }
  res.dimension = n;
  const auto bias = bias_profile(theta0, prior);
  std::vector<double> losses(reps);
  parallel_for(reps, [&](std::size_t i) {
    const auto obs = simulate_observation(theta0, op, eps, seed, i, n);
    const auto summary = coordinate_posterior(prior, op, obs);
    const auto est = estimate_from(setup, n, summary, prior, op, eps);
    losses[i] = squared_error(est, theta0, bias[n - 1]);
  });
  res.mise = summarize(losses, seed);
  return res;
}

// ---------------------------------------------------------------------------
// Posterior concentration

enum class PosteriorKind { fixed, hierarchical };

inline const char* to_string(PosteriorKind k) { return k == PosteriorKind::fixed ? "fixed" : "hierarchical"; }

struct ConcentrationSetup {
  PosteriorKind kind = PosteriorKind::fixed;
  std::size_t dimension = 0;  // sieve dimension for PosteriorKind::fixed
  double C_lambda = 1.0;      // for PosteriorKind::hierarchical
  std::size_t draws = 500;
};

/// E_theta0 P(rate / K <= ||Theta - theta0||^2 <= K rate | Y) by nested Monte
/// Carlo: `reps` observations, `setup.draws` posterior draws each.
inline MCEstimate mc_concentration(const ConcentrationSetup& setup, const ParameterSequence& theta0,
                                   const PriorSpec& prior, const OperatorSequence& op, double eps, double K,
                                   double rate, std::size_t reps, std::uint64_t seed) {
  require_noise_level(eps);
  require(K >= 1.0, "concentration constant K must be >= 1");
  require(rate > 0.0, "rate must be > 0");
  require(reps >= 1 && setup.draws >= 1, "nested MC sizes must be >= 1");
  require(theta0.size() == op.size() && prior.size() >= op.size(), "mc_concentration: inconsistent lengths");
  const std::size_t n =
      setup.kind == PosteriorKind::fixed ? (require_dimension(setup.dimension, op.size()), setup.dimension)
                                         : max_dimension(op, eps);
  const auto bias = bias_profile(theta0, prior);
  const double lo = rate / K;
  const double hi = rate * K;
  std::vector<double> frac(reps);
  parallel_for(reps, [&](std::size_t i) {
    const auto obs = simulate_observation(theta0, op, eps, seed, i, n);
    const auto summary = coordinate_posterior(prior, op, obs);
    std::optional<DimensionDistribution> dist;
    if (setup.kind == PosteriorKind::hierarchical) dist = dimension_posterior(summary, prior, op, eps, setup.C_lambda);
    // Posterior draws use their own stream so that the observation of
    // replication i matches the one used by mc_mise.
    NormalSource normals(make_stream(detail::splitmix64(seed ^ 0xD1B54A32D192ED03ULL), i));
    std::size_t hits = 0;
    for (std::size_t k = 0; k < setup.draws; ++k) {
      const std::size_t m = dist ? draw_dimension(*dist, normals.uniform()) : n;
      double s = bias[m - 1];
      for (std::size_t j = 0; j < m; ++j) {
        const double d = summary.post_mean[j] + std::sqrt(summary.sigma[j]) * normals() - theta0.values[j];
        s += d * d;
      }
      hits += (s >= lo && s <= hi) ? 1 : 0;
    }
    frac[i] = double(hits) / double(setup.draws);
  });
  return summarize(frac, seed);
}

/// Finite-sample deviation bounds for the sieve posterior at dimension m:
///   P(||Theta^m - theta0||^2 > b + 3 sum sigma + 3 m max sigma / 2 + 4 rho) <= 2 exp(-m/36)
///   P(||Theta^m - theta0||^2 < b + sum sigma - 4c (m max sigma + rho))    <= 2 exp(-c^2 m / 2)
struct DeviationAudit {
  RiskDecomposition risk;
  double upper_threshold = 0.0;
  double lower_threshold = 0.0;
  BoundCheck upper;
  BoundCheck lower;
  bool pass() const { return upper.pass && lower.pass; }
};

inline DeviationAudit audit_deviation_bounds(const ParameterSequence& theta0, const PriorSpec& prior,
                                             const OperatorSequence& op, double eps, std::size_t m, double c,
                                             std::size_t reps, std::size_t draws, std::uint64_t seed) {
  require(c > 0.0 && c < 0.2, "deviation audit: c must lie in (0, 1/5)");
  require(reps >= 1 && draws >= 1, "nested MC sizes must be >= 1");
  DeviationAudit a;
  a.risk = risk_decomposition(theta0, prior, op, eps, m);
  const auto& r = a.risk;
  a.upper_threshold = r.bias + 3.0 * r.posterior_variance_sum + 1.5 * double(m) * r.posterior_variance_max +
                      4.0 * r.mean_shift;
  a.lower_threshold = r.bias + r.posterior_variance_sum - 4.0 * c * (double(m) * r.posterior_variance_max + r.mean_shift);
  std::vector<double> over(reps), under(reps);
  parallel_for(reps, [&](std::size_t i) {
    const auto obs = simulate_observation(theta0, op, eps, seed, i, m);
    const auto summary = coordinate_posterior(prior, op, obs);
    NormalSource normals(make_stream(detail::splitmix64(seed ^ 0xD1B54A32D192ED03ULL), i));
    std::size_t n_over = 0, n_under = 0;
    for (std::size_t k = 0; k < draws; ++k) {
      double s = r.bias;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = summary.post_mean[j] + std::sqrt(summary.sigma[j]) * normals() - theta0.values[j];
        s += d * d;
      }
      n_over += s > a.upper_threshold ? 1 : 0;
      n_under += s < a.lower_threshold ? 1 : 0;
    }
    over[i] = double(n_over) / double(draws);
    under[i] = double(n_under) / double(draws);
  });
  a.upper = check_bound(summarize(over, seed), 2.0 * std::exp(-double(m) / 36.0));
  a.lower = check_bound(summarize(under, seed), 2.0 * std::exp(-c * c * double(m) / 2.0));
  return a;
}

// ---------------------------------------------------------------------------
// Rate regression

struct RegressionFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double max_abs_residual = 0.0;
  std::vector<double> residuals;
};

/// Least squares of log(value) on log(eps). Needs >= 4 points spanning at
/// least three decades.
inline RegressionFit rate_regression(std::span<const double> eps, std::span<const double> values) {
  require(eps.size() == values.size(), "rate regression: eps and values must have equal length");
  require(eps.size() >= 4, "rate regression: degenerate grid, need at least 4 noise levels");
  const auto [lo, hi] = std::minmax_element(eps.begin(), eps.end());
  require(*lo > 0.0 && std::log10(*hi / *lo) >= 3.0 - 1e-9,
          "rate regression: degenerate grid, noise levels must span at least 3 decades");
  const std::size_t n = eps.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(values[i] > 0.0, "rate regression: values must be positive");
    x[i] = std::log(eps[i]);
    y[i] = std::log(values[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  RegressionFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  fit.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    fit.residuals[i] = y[i] - (fit.intercept + fit.slope * x[i]);
    sse += fit.residuals[i] * fit.residuals[i];
    fit.max_abs_residual = std::max(fit.max_abs_residual, std::abs(fit.residuals[i]));
  }
  fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return fit;
}

/// Theoretical exponent of the minimax rate eps^e for the standard
/// weight/operator pairs.
struct TheoreticalRate {
  std::optional<double> exponent;  // empty: not a power of eps
  std::string regime;              // "P-P", "E-P", "P-E", "other"
  std::string note;
};

inline TheoreticalRate theoretical_rate(WeightFamily weights, double p, OperatorFamily op, double a) {
  const bool poly_op = op == OperatorFamily::polynomial || op == OperatorFamily::constant;
  const double aa = op == OperatorFamily::constant ? 0.0 : a;
  if (weights == WeightFamily::polynomial && poly_op) {
    return {2.0 * p / (2.0 * aa + 2.0 * p + 1.0), "P-P", "eps^{2p/(2a+2p+1)}"};
  }
  if (weights == WeightFamily::exponential && poly_op) {
    return {1.0, "E-P", "eps |log eps|^{(2a+1)/(2p)}: exponent 1 up to a log factor"};
  }
  if (weights == WeightFamily::polynomial && op == OperatorFamily::exponential) {
    return {std::nullopt, "P-E", "|log eps|^{-p/a}: logarithmic rate, slope comparison suppressed"};
  }
  return {std::nullopt, "other", "no reference exponent"};
}

}  // namespace igssm
