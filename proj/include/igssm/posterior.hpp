#pragma once

// Coordinatewise conjugate calculus. Under a N(mu_j, s_j) prior the
// posterior of theta_j given Y_j is Gaussian with
//
//     sigma_j   = (lambda_j^2 / eps + 1 / s_j)^-1
//     theta^Y_j = sigma_j (mu_j / s_j + lambda_j Y_j / eps)
//
// An improper coordinate (mu_j = 0, s_j = inf) is its own variant and is
// never approximated by a large variance: sigma_j = eps Lambda_j and
// theta^Y_j = Y_j / lambda_j.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "igssm/model.hpp"
#include "igssm/random.hpp"

namespace igssm {

struct ProperCoordinate {
  double mean = 0.0;
  double variance = 1.0;
};

struct ImproperCoordinate {};

using CoordinatePrior = std::variant<ProperCoordinate, ImproperCoordinate>;

/// Prior means and variances of the Gaussian sequence prior. Coordinates
/// may mix proper and improper specifications. Beyond its length the prior
/// mean is taken to be zero.
class PriorSpec {
 public:
  explicit PriorSpec(std::vector<CoordinatePrior> coordinates) : coords_(std::move(coordinates)) {
    require(!coords_.empty(), "prior must have length N >= 1");
    for (const auto& c : coords_) {
      if (const auto* p = std::get_if<ProperCoordinate>(&c)) {
        require(p->variance > 0.0 && std::isfinite(p->variance),
                "proper prior variances must be finite and strictly positive");
        require(std::isfinite(p->mean), "prior means must be finite");
      }
    }
  }

  static PriorSpec improper(std::size_t n) {
    return PriorSpec(std::vector<CoordinatePrior>(n, ImproperCoordinate{}));
  }

  static PriorSpec proper(std::span<const double> means, std::span<const double> variances) {
    require(means.size() == variances.size(), "prior means and variances must have equal length");
    std::vector<CoordinatePrior> c(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) c[i] = ProperCoordinate{means[i], variances[i]};
    return PriorSpec(std::move(c));
  }

  /// s_j = d * max(sqrt(eps Lambda_j), eps Lambda_j): the smallest variances
  /// for which the variance condition holds with constant d at this eps.
  static PriorSpec scaled(const OperatorSequence& op, double eps, double d, std::span<const double> means) {
    require_noise_level(eps);
    require(d > 0.0 && std::isfinite(d), "prior variance scale d must be > 0");
    require(means.size() == op.size(), "prior means must match the operator length");
    std::vector<CoordinatePrior> c(op.size());
    for (std::size_t j = 1; j <= op.size(); ++j) {
      const double log_noise = std::log(eps) + op.log_Lambda(j);
      const double v = d * detail::checked_exp(std::max(0.5 * log_noise, log_noise), "prior variance");
      c[j - 1] = ProperCoordinate{means[j - 1], v};
    }
    return PriorSpec(std::move(c));
  }

  std::size_t size() const noexcept { return coords_.size(); }
  const CoordinatePrior& coordinate(std::size_t j) const { return coords_.at(j - 1); }
  bool is_improper(std::size_t j) const { return std::holds_alternative<ImproperCoordinate>(coordinate(j)); }

  double mean(std::size_t j) const {
    if (j > coords_.size()) return 0.0;
    const auto* p = std::get_if<ProperCoordinate>(&coords_[j - 1]);
    return p ? p->mean : 0.0;
  }

  /// Finite prior variance; throws for an improper coordinate.
  double variance(std::size_t j) const {
    const auto* p = std::get_if<ProperCoordinate>(&coordinate(j));
    if (!p) throw std::domain_error("prior variance of improper coordinate " + std::to_string(j));
    return p->variance;
  }

  bool any_improper(std::size_t upto) const {
    for (std::size_t j = 1; j <= std::min(upto, size()); ++j)
      if (is_improper(j)) return true;
    return false;
  }
  bool all_improper() const { return count_improper() == size(); }

  std::vector<double> means() const {
    std::vector<double> m(size());
    for (std::size_t j = 1; j <= size(); ++j) m[j - 1] = mean(j);
    return m;
  }

 private:
  std::size_t count_improper() const {
    std::size_t n = 0;
    for (const auto& c : coords_) n += std::holds_alternative<ImproperCoordinate>(c) ? 1 : 0;
    return n;
  }

  std::vector<CoordinatePrior> coords_;
};

/// s_j lambda_j^2 / eps, the signal-to-prior ratio. The stable forms
/// s_j / sigma_j = 1 + ratio and sigma_j / s_j = 1 / (1 + ratio) are built
/// from it.
inline double prior_signal_ratio(const PriorSpec& prior, const OperatorSequence& op, double eps, std::size_t j) {
  return std::exp(std::log(prior.variance(j)) + op.log_lambda_sq(j) - std::log(eps));
}

/// log(s_j / sigma_j) = log1p(s_j lambda_j^2 / eps).
inline double log_prior_to_posterior_variance(const PriorSpec& prior, const OperatorSequence& op, double eps,
                                              std::size_t j) {
  return std::log1p(prior_signal_ratio(prior, op, eps, j));
}

struct PosteriorSummary {
  std::vector<double> sigma;      // posterior variances
  std::vector<double> post_mean;  // posterior means theta^Y
  double eps = 0.0;

  std::size_t size() const noexcept { return sigma.size(); }
};

struct CoordinateMoments {
  double sigma;
  double mean;
};

inline CoordinateMoments coordinate_moments(const CoordinatePrior& c, double log_lambda_sq, double eps, double y) {
  if (std::holds_alternative<ImproperCoordinate>(c)) {
    const double inv_lambda = detail::checked_exp(-0.5 * log_lambda_sq, "1/lambda_j");
    return {detail::checked_exp(std::log(eps) - log_lambda_sq, "eps * Lambda_j"), y * inv_lambda};
  }
  const auto& p = std::get<ProperCoordinate>(c);
  const double ratio = std::exp(std::log(p.variance) + log_lambda_sq - std::log(eps));
  const double shrink = 1.0 / (1.0 + ratio);  // sigma_j / s_j
  const double sigma = p.variance * shrink;
  // theta^Y = (mu + ratio * Y / lambda) / (1 + ratio); ratio * Y / lambda
  // is rewritten as s * lambda * Y / eps so that lambda -> 0 stays finite.
  const double lambda = std::exp(0.5 * log_lambda_sq);
  const double data_term = p.variance * lambda * y / eps;
  return {sigma, (p.mean + data_term) * shrink};
}

/// Posterior variances and means for the observed coordinates
/// 1..obs.size() (which may be a prefix of the prior/operator length).
inline PosteriorSummary coordinate_posterior(const PriorSpec& prior, const OperatorSequence& op,
                                             const Observation& obs) {
  require_noise_level(obs.eps);
  require(obs.size() >= 1, "observation must have at least one coordinate");
  require(obs.size() <= op.size() && obs.size() <= prior.size(),
          "observation is longer than the operator or prior sequence");
  PosteriorSummary out;
  out.eps = obs.eps;
  out.sigma.resize(obs.size());
  out.post_mean.resize(obs.size());
  for (std::size_t j = 1; j <= obs.size(); ++j) {
    const auto mom = coordinate_moments(prior.coordinate(j), op.log_lambda_sq(j), obs.eps, obs.y[j - 1]);
    out.sigma[j - 1] = mom.sigma;
    out.post_mean[j - 1] = mom.mean;
  }
  return out;
}

inline void require_dimension(std::size_t m, std::size_t n) {
  if (m < 1 || m > n) {
    throw std::out_of_range("dimension m=" + std::to_string(m) + " outside 1.." + std::to_string(n));
  }
}

/// Sieve posterior mean: theta^Y_j for j <= m, mu_j beyond.
inline ParameterSequence sieve_posterior_mean(std::size_t m, const PosteriorSummary& summary, const PriorSpec& prior) {
  require_dimension(m, summary.size());
  ParameterSequence out;
  out.values.resize(summary.size());
  for (std::size_t j = 1; j <= summary.size(); ++j) {
    out.values[j - 1] = j <= m ? summary.post_mean[j - 1] : prior.mean(j);
  }
  return out;
}

/// One sieve posterior draw into `out`: N(theta^Y_j, sigma_j) for j <= m,
/// exactly mu_j beyond.
inline void draw_sieve_posterior(std::size_t m, const PosteriorSummary& summary, const PriorSpec& prior,
                                 NormalSource& normals, std::span<double> out) {
  for (std::size_t j = 1; j <= out.size(); ++j) {
    out[j - 1] = j <= m ? summary.post_mean[j - 1] + std::sqrt(summary.sigma[j - 1]) * normals() : prior.mean(j);
  }
}

inline std::vector<std::vector<double>> sample_sieve_posterior(std::size_t m, const PosteriorSummary& summary,
                                                               const PriorSpec& prior, std::size_t n_draws,
                                                               std::uint64_t seed) {
  require_dimension(m, summary.size());
  require(n_draws >= 1, "n_draws must be >= 1");
  std::vector<std::vector<double>> draws(n_draws, std::vector<double>(summary.size()));
  NormalSource normals(make_stream(seed, 0));
  for (auto& d : draws) draw_sieve_posterior(m, summary, prior, normals, d);
  return draws;
}

}  // namespace igssm
