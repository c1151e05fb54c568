#pragma once

// Bias/variance functionals, the oracle and minimax dimension selectors,
// the maximal dimension M_eps, bracket dimensions around the selected
// dimension, and certification of the operator and prior conditions.
//
// Everything is an exhaustive scan; no closed-form dimension formulas.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "igssm/model.hpp"
#include "igssm/posterior.hpp"

namespace igssm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Smallest index (1-based) attaining the minimum of `values`.
inline std::size_t argmin_smallest(std::span<const double> values) {
  require(!values.empty(), "argmin over an empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[best]) best = i;
  }
  return best + 1;
}

/// b_m = sum_{j>m} (theta_j - mu_j)^2 for m = 1..N, including the tail of
/// theta beyond N (the prior mean is zero there). Accumulated from the far
/// end so that small terms are added first.
inline std::vector<double> bias_profile(const ParameterSequence& theta0, const PriorSpec& prior) {
  const std::size_t n = theta0.size();
  std::vector<double> b(n);
  double acc = theta0.tail_sq;
  for (std::size_t m = n; m >= 1; --m) {
    b[m - 1] = acc;
    const double d = theta0[m] - prior.mean(m);
    acc += d * d;
  }
  return b;
}

/// sum_j (theta_j - mu_j)^2 over all coordinates, tail included.
inline double squared_distance_to_prior_mean(const ParameterSequence& theta0, const PriorSpec& prior) {
  const auto b = bias_profile(theta0, prior);
  const double d = theta0[1] - prior.mean(1);
  return b.front() + d * d;
}

struct RiskDecomposition {
  std::size_t m = 0;
  double bias = 0.0;                     // b_m
  double variance_proxy = 0.0;           // eps m mean(Lambda)_m
  double posterior_variance_sum = 0.0;   // sum_{j<=m} sigma_j
  double posterior_variance_max = 0.0;   // max_{j<=m} sigma_j
  double mean_shift = 0.0;               // rho_m
  double rate = 0.0;                     // max(b_m, eps m mean(Lambda)_m)
};

inline RiskDecomposition risk_decomposition(const ParameterSequence& theta0, const PriorSpec& prior,
                                            const OperatorSequence& op, double eps, std::size_t m) {
  require_noise_level(eps);
  require(theta0.size() == op.size() && prior.size() >= op.size(),
          "risk decomposition: theta0, prior and operator lengths must agree");
  require_dimension(m, op.size());
  RiskDecomposition r;
  r.m = m;
  r.bias = bias_profile(theta0, prior)[m - 1];
  r.variance_proxy = op.variance_proxy(eps, m);
  for (std::size_t j = 1; j <= m; ++j) {
    const auto mom = coordinate_moments(prior.coordinate(j), op.log_lambda_sq(j), eps, 0.0);
    r.posterior_variance_sum += mom.sigma;
    r.posterior_variance_max = std::max(r.posterior_variance_max, mom.sigma);
    if (!prior.is_improper(j)) {
      const double shrink = 1.0 / (1.0 + prior_signal_ratio(prior, op, eps, j));
      const double d = (prior.mean(j) - theta0[j]) * shrink;
      r.mean_shift += d * d;
    }
  }
  r.rate = std::max(r.bias, r.variance_proxy);
  return r;
}

enum class SelectionKind { oracle, minimax };

inline const char* to_string(SelectionKind k) { return k == SelectionKind::oracle ? "oracle" : "minimax"; }

struct SelectionResult {
  std::size_t dimension = 0;
  double rate = 0.0;
  SelectionKind kind = SelectionKind::oracle;
};

namespace detail {

/// Smallest minimiser of max(first_m, eps m mean(Lambda)_m) over m = 1..n,
/// compared in log space so that exponential operators never overflow.
inline SelectionResult select_against(std::span<const double> first, const OperatorSequence& op, double eps,
                                      SelectionKind kind) {
  const std::size_t n = first.size();
  const double log_eps = std::log(eps);
  std::vector<double> log_objective(n);
  for (std::size_t m = 1; m <= n; ++m) {
    const double lb = first[m - 1] > 0.0 ? std::log(first[m - 1]) : -kInf;
    log_objective[m - 1] = std::max(lb, log_eps + op.log_Lambda_sum(m));
  }
  const std::size_t best = argmin_smallest(log_objective);
  return {best, std::max(first[best - 1], op.variance_proxy(eps, best)), kind};
}

}  // namespace detail

/// m*_eps and Phi*_eps: smallest minimiser of max(b_m, eps m mean(Lambda)_m).
inline SelectionResult oracle_dimension(const ParameterSequence& theta0, const PriorSpec& prior,
                                        const OperatorSequence& op, double eps) {
  require_noise_level(eps);
  require(theta0.size() == op.size() && prior.size() >= op.size(),
          "oracle dimension: theta0, prior and operator lengths must agree");
  const auto b = bias_profile(theta0, prior);
  return detail::select_against(b, op, eps, SelectionKind::oracle);
}

/// m°_eps and Phi°_eps: smallest minimiser of max(w_m, eps m mean(Lambda)_m).
inline SelectionResult minimax_dimension(const WeightedClass& cls, const OperatorSequence& op, double eps) {
  require_noise_level(eps);
  const std::size_t n = std::min(cls.size(), op.size());
  return detail::select_against(cls.weights().subspan(0, n), op, eps, SelectionKind::minimax);
}

/// Slack for comparisons of quantities that agree in exact arithmetic
/// (e.g. 0.01 * 10^2 against 1).
inline constexpr double kLogSlack = 1e-12;

/// M_eps = max{1 <= m <= floor(1/eps) : eps Lambda_m^max <= Lambda_1}, capped at N.
inline std::size_t max_dimension(const OperatorSequence& op, double eps) {
  require_noise_level(eps);
  const std::size_t upper = std::min(inverse_floor(eps), op.size());
  const double log_eps = std::log(eps);
  std::size_t m = 1;
  while (m < upper && log_eps + op.log_Lambda_max(m + 1) <= op.log_Lambda(1) + kLogSlack) ++m;
  return m;
}

// ---------------------------------------------------------------------------
// Assumption checks

/// Operator-only constants, certified over 1..N.
struct OperatorConstants {
  double C_lambda = 1.0;                  // max_k max_{j>k} lambda_j^2 / min_{j<=k} lambda_j^2, >= 1
  std::size_t C_lambda_witness = 0;       // k attaining C_lambda (0: clamped at 1)
  bool submultiplicative = true;          // Lambda^max_{kl} <= Lambda^max_k Lambda^max_l for kl <= N
  std::pair<std::size_t, std::size_t> submultiplicative_witness{0, 0};
  std::size_t verified_up_to = 0;         // N
  double L_lambda = 1.0;                  // max_k Lambda^max_k / mean(Lambda)_k
  std::size_t L_lambda_argmax = 1;
  double sup_lambda = 0.0;

  bool satisfied() const { return submultiplicative; }
};

inline OperatorConstants operator_constants(const OperatorSequence& op) {
  const std::size_t n = op.size();
  OperatorConstants c;
  c.verified_up_to = n;
  c.sup_lambda = op.sup_lambda();

  // (i) suffix max of log lambda^2 against prefix min.
  std::vector<double> suffix_max(n + 1, -kInf);
  for (std::size_t j = n; j >= 1; --j) suffix_max[j - 1] = std::max(suffix_max[j], op.log_lambda_sq(j));
  double prefix_min = kInf;
  double best = 0.0;  // log C, clamped at log 1
  for (std::size_t k = 1; k < n; ++k) {
    prefix_min = std::min(prefix_min, op.log_lambda_sq(k));
    const double ratio = suffix_max[k] - prefix_min;
    if (ratio > best + kLogSlack) {
      best = ratio;
      c.C_lambda_witness = k;
    }
  }
  c.C_lambda = std::exp(best);

  // (ii) exhaustive over k <= l, kl <= N; the condition is symmetric in (k,l).
  for (std::size_t k = 1; k * k <= n && c.submultiplicative; ++k) {
    for (std::size_t l = k; k * l <= n; ++l) {
      if (op.log_Lambda_max(k * l) > op.log_Lambda_max(k) + op.log_Lambda_max(l) + kLogSlack) {
        c.submultiplicative = false;
        c.submultiplicative_witness = {k, l};
        break;
      }
    }
  }

  // (iii)
  double log_l = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double r = op.log_Lambda_max(k) - op.log_Lambda_mean(k);
    if (r > log_l) {
      log_l = r;
      c.L_lambda_argmax = k;
    }
  }
  c.L_lambda = std::exp(log_l);
  return c;
}

/// Quantities attached to a single noise level.
struct NoiseLevelReport {
  double eps = 0.0;
  std::size_t max_dimension = 0;  // M_eps
  double d = kInf;                // min_{j<=M_eps} s_j / max(sqrt(eps Lambda_j), eps Lambda_j)
  SelectionResult oracle;
  double kappa_oracle = 0.0;      // min(b_{m*}, eps m* mean Lambda) / Phi*
  double L_oracle = 1.0;          // eps m* Lambda^max_{m*} / Phi*
  bool oracle_feasible = false;   // m* <= M_eps
  std::optional<SelectionResult> minimax;
  double kappa_minimax = 0.0;
  double L_minimax = 1.0;
  bool minimax_feasible = false;
};

/// Largest d such that s_j >= d max(sqrt(eps Lambda_j), eps Lambda_j) for all
/// j <= M. Improper coordinates satisfy the condition for every d.
inline double variance_condition_constant(const PriorSpec& prior, const OperatorSequence& op, double eps,
                                          std::size_t m) {
  double d = kInf;
  for (std::size_t j = 1; j <= m; ++j) {
    if (prior.is_improper(j)) continue;
    const double log_noise = std::log(eps) + op.log_Lambda(j);
    const double log_scale = std::max(0.5 * log_noise, log_noise);
    d = std::min(d, std::exp(std::log(prior.variance(j)) - log_scale));
  }
  return d;
}

inline NoiseLevelReport assess_noise_level(const ParameterSequence& theta0, const PriorSpec& prior,
                                           const OperatorSequence& op, const WeightedClass* cls, double eps) {
  NoiseLevelReport r;
  r.eps = eps;
  r.max_dimension = max_dimension(op, eps);
  r.d = variance_condition_constant(prior, op, eps, r.max_dimension);
  const auto b = bias_profile(theta0, prior);
  r.oracle = oracle_dimension(theta0, prior, op, eps);
  {
    const std::size_t m = r.oracle.dimension;
    const double vp = op.variance_proxy(eps, m);
    r.kappa_oracle = r.oracle.rate > 0.0 ? std::min(b[m - 1], vp) / r.oracle.rate : 0.0;
    r.L_oracle = std::exp(std::log(eps) + std::log(double(m)) + op.log_Lambda_max(m) - std::log(r.oracle.rate));
    r.oracle_feasible = m <= r.max_dimension;
  }
  if (cls) {
    r.minimax = minimax_dimension(*cls, op, eps);
    const std::size_t m = r.minimax->dimension;
    const double vp = op.variance_proxy(eps, m);
    r.kappa_minimax = std::min(cls->weight(m), vp) / r.minimax->rate;
    r.L_minimax = std::exp(std::log(eps) + std::log(double(m)) + op.log_Lambda_max(m) - std::log(r.minimax->rate));
    r.minimax_feasible = m <= r.max_dimension;
  }
  return r;
}

struct AssumptionReport {
  std::vector<NoiseLevelReport> levels;
  OperatorConstants op;
  double d = kInf;             // min over the grid; inf when every relevant coordinate is improper
  double kappa_oracle = 0.0;   // grid infimum
  double kappa_minimax = 0.0;  // grid infimum (0 without a class)
  double L_oracle = 1.0;       // grid supremum
  double L_minimax = 1.0;
  bool has_class = false;

  bool variance_condition() const { return d > 0.0; }
  bool oracle_condition() const { return kappa_oracle > 0.0 && kappa_oracle <= 1.0; }
  bool minimax_condition() const { return has_class && kappa_minimax > 0.0 && kappa_minimax <= 1.0; }
};

/// Folds per-noise-level reports and operator constants into one report.
/// The infimum over eps in (0, eps_0) is approximated by the grid.
inline AssumptionReport combine_reports(std::vector<NoiseLevelReport> levels, OperatorConstants op) {
  require(!levels.empty(), "assumption report needs at least one noise level");
  AssumptionReport r;
  r.op = op;
  r.kappa_oracle = kInf;
  r.kappa_minimax = kInf;
  r.has_class = levels.front().minimax.has_value();
  for (const auto& l : levels) {
    r.d = std::min(r.d, l.d);
    r.kappa_oracle = std::min(r.kappa_oracle, l.kappa_oracle);
    r.L_oracle = std::max(r.L_oracle, l.L_oracle);
    if (r.has_class) {
      r.kappa_minimax = std::min(r.kappa_minimax, l.kappa_minimax);
      r.L_minimax = std::max(r.L_minimax, l.L_minimax);
    }
  }
  if (!r.has_class) r.kappa_minimax = 0.0;
  r.levels = std::move(levels);
  return r;
}

inline AssumptionReport check_assumptions(const ParameterSequence& theta0, const PriorSpec& prior,
                                          const OperatorSequence& op, const WeightedClass* cls,
                                          std::span<const double> eps_grid) {
  require(!eps_grid.empty(), "eps grid must be non-empty");
  std::vector<NoiseLevelReport> levels;
  for (double eps : eps_grid) {
    require_noise_level(eps);
    levels.push_back(assess_noise_level(theta0, prior, op, cls, eps));
  }
  return combine_reports(std::move(levels), operator_constants(op));
}

// ---------------------------------------------------------------------------
// Brackets and composite constants

struct Brackets {
  std::size_t lower = 0;   // m^-
  std::size_t center = 0;  // m* or m°
  std::size_t upper = 0;   // m^+
  double rate = 0.0;       // Phi* or (1 v r) Phi°
};

struct BracketConstants {
  double d = kInf;
  double C_lambda = 1.0;
  double L_lambda = 1.0;
};

namespace detail {

inline double one_plus_inv(double d) { return 1.0 + (std::isinf(d) ? 0.0 : 1.0 / d); }
inline double inv_sq(double d) { return std::isinf(d) ? 0.0 : 1.0 / (d * d); }

inline Brackets brackets_around(std::span<const double> bias, const OperatorSequence& op, double eps,
                                std::size_t center, double rate, const BracketConstants& k) {
  const std::size_t m_max = max_dimension(op, eps);
  if (center > m_max) {
    throw Infeasible("selected dimension " + std::to_string(center) + " exceeds M_eps = " + std::to_string(m_max) +
                     " at eps = " + std::to_string(eps));
  }
  Brackets br;
  br.center = center;
  br.rate = rate;
  const double bias_threshold = 8.0 * k.L_lambda * k.C_lambda * one_plus_inv(k.d) * rate;
  br.lower = center;
  for (std::size_t m = 1; m <= center; ++m) {
    if (bias[m - 1] <= bias_threshold) {
      br.lower = m;
      break;
    }
  }
  // m <= 5 L (eps Lambda^max_center)^-1 rate, compared in log space.
  const double log_limit = std::log(5.0 * k.L_lambda) - std::log(eps) - op.log_Lambda_max(center) + std::log(rate);
  br.upper = center;
  for (std::size_t m = m_max; m >= center; --m) {
    if (std::log(double(m)) <= log_limit + kLogSlack) {
      br.upper = m;
      break;
    }
  }
  return br;
}

}  // namespace detail

/// Oracle brackets (m^-, m^+) around m*.
inline Brackets oracle_brackets(const ParameterSequence& theta0, const PriorSpec& prior, const OperatorSequence& op,
                                double eps, const BracketConstants& k) {
  const auto sel = oracle_dimension(theta0, prior, op, eps);
  const auto b = bias_profile(theta0, prior);
  return detail::brackets_around(b, op, eps, sel.dimension, sel.rate, k);
}

/// Minimax brackets around m°, with (1 v r) Phi° in place of Phi*.
inline Brackets minimax_brackets(const ParameterSequence& theta0, const PriorSpec& prior, const OperatorSequence& op,
                                 const WeightedClass& cls, double eps, const BracketConstants& k) {
  const auto sel = minimax_dimension(cls, op, eps);
  const auto b = bias_profile(theta0, prior);
  return detail::brackets_around(b, op, eps, sel.dimension, std::max(1.0, cls.radius()) * sel.rate, k);
}

/// Composite constants derived from certified assumption constants.
struct CompositeConstants {
  double oracle_mise_upper = 0.0;          // 2 + d^-2 ||theta - mu||^2
  double oracle_mise_lower = 0.0;          // (1 + 1/d)^-2
  double minimax_mise_upper = 0.0;         // (2 + r/d^2)(1 v r)
  double K_oracle = 0.0;                   // sieve posterior at m*
  double K_minimax = 0.0;                  // sieve posterior at m°
  double K_hierarchical_oracle = 0.0;      // hierarchical posterior, oracle rate
  double K_hierarchical_minimax = 0.0;     // hierarchical posterior, minimax rate (upper only)
  std::size_t D_oracle = 0;
  std::size_t D_minimax = 0;
};

inline CompositeConstants composite_constants(const AssumptionReport& rep, const OperatorSequence& op,
                                              double distance_sq, double radius) {
  CompositeConstants c;
  const double opi = detail::one_plus_inv(rep.d);
  const double isq = detail::inv_sq(rep.d);
  const double one_v_r = std::max(1.0, radius);
  const double L = rep.op.L_lambda;
  const double C = rep.op.C_lambda;
  c.oracle_mise_upper = 2.0 + isq * distance_sq;
  c.oracle_mise_lower = 1.0 / (opi * opi);
  c.minimax_mise_upper = (2.0 + radius * isq) * one_v_r;
  c.K_oracle = 10.0 * std::max(opi, isq * distance_sq) * rep.L_oracle;
  if (rep.has_class && rep.kappa_minimax > 0.0) {
    c.K_minimax = 10.0 * std::max(opi, radius * isq) * one_v_r * (rep.L_minimax / rep.kappa_minimax);
  }
  auto tail_factor = [&](double kappa, std::size_t& D) {
    D = static_cast<std::size_t>(std::ceil(5.0 * L / kappa));
    if (D > op.size()) {
      throw Infeasible("composite constant needs Lambda^max_D with D = " + std::to_string(D) +
                       " beyond the truncation N = " + std::to_string(op.size()));
    }
    const double log_term = std::log(double(D)) + op.log_Lambda_max(D);
    return std::max(8.0 * C * opi, detail::checked_exp(log_term, "D Lambda^max_D"));
  };
  if (rep.kappa_oracle > 0.0) {
    c.K_hierarchical_oracle =
        10.0 * std::max(opi, distance_sq * isq) * L * L * tail_factor(rep.kappa_oracle, c.D_oracle);
  }
  if (rep.has_class && rep.kappa_minimax > 0.0) {
    c.K_hierarchical_minimax =
        16.0 * std::max(opi, radius * isq) * L * L * tail_factor(rep.kappa_minimax, c.D_minimax) * one_v_r;
  }
  return c;
}

}  // namespace igssm
