#pragma once

// Sequences and the indirect Gaussian sequence space model
//
//     Y_j = lambda_j * theta_j + sqrt(eps) * xi_j,   xi_j iid N(0,1),
//
// truncated to a finite length N. The operator keeps everything in log
// space: for exponentially decaying operators Lambda_j = lambda_j^-2
// leaves the double range long before N, and that must surface as an
// error rather than as inf.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "igssm/random.hpp"

namespace igssm {

/// A configuration that is well formed but for which the requested
/// computation is not defined (selected dimension beyond M_eps, overflow).
class Infeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

inline void require_noise_level(double eps) {
  require(eps > 0.0 && eps < 1.0 && std::isfinite(eps),
          "noise level eps must lie in the open interval (0,1), got " + std::to_string(eps));
}

/// Default truncation: ceil(1/eps).
inline std::size_t default_truncation(double eps) {
  require_noise_level(eps);
  return static_cast<std::size_t>(std::ceil(1.0 / eps - 1e-9));
}

/// floor(1/eps), robust to 1/eps landing a hair below an integer.
inline std::size_t inverse_floor(double eps) {
  return static_cast<std::size_t>(std::floor(1.0 / eps + 1e-9));
}

namespace detail {

inline const double kLogMax = std::log(std::numeric_limits<double>::max());

inline double checked_exp(double log_value, const char* what) {
  if (log_value > kLogMax) {
    throw Infeasible(std::string(what) + " exceeds the representable double range (log value " +
                     std::to_string(log_value) + ")");
  }
  return std::exp(log_value);
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operator

enum class OperatorFamily { polynomial, exponential, constant, explicit_list };

inline const char* to_string(OperatorFamily f) {
  switch (f) {
    case OperatorFamily::polynomial: return "polynomial";
    case OperatorFamily::exponential: return "exponential";
    case OperatorFamily::constant: return "constant";
    case OperatorFamily::explicit_list: return "explicit";
  }
  return "?";
}

/// The operator sequence lambda_1..lambda_N with the derived quantities
/// Lambda_j = lambda_j^-2, Lambda_m^max = max_{j<=m} Lambda_j and
/// mean Lambda_m = m^-1 sum_{j<=m} Lambda_j. Indices in the public API are
/// 1-based, matching the model.
class OperatorSequence {
 public:
  OperatorSequence(OperatorFamily family, double decay, std::vector<double> log_lambda_sq)
      : family_(family), decay_(decay), log_lambda_sq_(std::move(log_lambda_sq)) {
    require(!log_lambda_sq_.empty(), "operator sequence must have length N >= 1");
    const std::size_t n = log_lambda_sq_.size();
    log_sum_.resize(n);
    log_max_.resize(n);
    double running_sum = -std::numeric_limits<double>::infinity();
    double running_max = -std::numeric_limits<double>::infinity();
    sup_log_lambda_sq_ = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      require(std::isfinite(log_lambda_sq_[i]), "operator values must be finite and positive");
      const double log_cap = -log_lambda_sq_[i];
      running_sum = detail::log_add(running_sum, log_cap);
      running_max = std::max(running_max, log_cap);
      log_sum_[i] = running_sum;
      log_max_[i] = running_max;
      sup_log_lambda_sq_ = std::max(sup_log_lambda_sq_, log_lambda_sq_[i]);
    }
  }

  std::size_t size() const noexcept { return log_lambda_sq_.size(); }
  OperatorFamily family() const noexcept { return family_; }
  double decay() const noexcept { return decay_; }

  double log_lambda_sq(std::size_t j) const { return log_lambda_sq_.at(j - 1); }
  double lambda_sq(std::size_t j) const { return std::exp(log_lambda_sq(j)); }
  double lambda(std::size_t j) const { return std::exp(0.5 * log_lambda_sq(j)); }
  double sup_lambda() const noexcept { return std::exp(0.5 * sup_log_lambda_sq_); }

  double log_Lambda(std::size_t j) const { return -log_lambda_sq(j); }
  double Lambda(std::size_t j) const { return detail::checked_exp(log_Lambda(j), "Lambda_j"); }

  double log_Lambda_max(std::size_t m) const { return log_max_.at(m - 1); }
  double Lambda_max(std::size_t m) const {
    return detail::checked_exp(log_Lambda_max(m), "Lambda_m^max");
  }

  /// log of sum_{j<=m} Lambda_j = log(m * mean Lambda_m).
  double log_Lambda_sum(std::size_t m) const { return log_sum_.at(m - 1); }
  double Lambda_sum(std::size_t m) const {
    return detail::checked_exp(log_Lambda_sum(m), "sum of Lambda_j");
  }
  double log_Lambda_mean(std::size_t m) const {
    return log_Lambda_sum(m) - std::log(static_cast<double>(m));
  }
  double Lambda_mean(std::size_t m) const {
    return detail::checked_exp(log_Lambda_mean(m), "mean Lambda_m");
  }

  /// eps * m * mean Lambda_m, the variance proxy of dimension m.
  double variance_proxy(double eps, std::size_t m) const {
    return detail::checked_exp(std::log(eps) + log_Lambda_sum(m), "eps * m * mean Lambda_m");
  }

  std::span<const double> log_lambda_sq_values() const noexcept { return log_lambda_sq_; }

 private:
  OperatorFamily family_;
  double decay_;
  std::vector<double> log_lambda_sq_;
  std::vector<double> log_sum_;
  std::vector<double> log_max_;
  double sup_log_lambda_sq_;
};

/// lambda_j^2 = j^{-2a} (polynomial), exp(1 - j^{2a}) (exponential), 1 (constant).
inline OperatorSequence make_operator(OperatorFamily family, double a, std::size_t n) {
  require(n >= 1, "operator length N must be >= 1");
  require(a >= 0.0 && std::isfinite(a), "operator decay parameter a must be >= 0");
  require(family != OperatorFamily::explicit_list,
          "explicit operators are built from their values, see make_explicit_operator");
  std::vector<double> log_sq(n);
  for (std::size_t j = 1; j <= n; ++j) {
    const double x = static_cast<double>(j);
    switch (family) {
      case OperatorFamily::polynomial: log_sq[j - 1] = -2.0 * a * std::log(x); break;
      case OperatorFamily::exponential: log_sq[j - 1] = 1.0 - std::pow(x, 2.0 * a); break;
      case OperatorFamily::constant: log_sq[j - 1] = 0.0; break;
      case OperatorFamily::explicit_list: break;
    }
  }
  return OperatorSequence(family, family == OperatorFamily::constant ? 0.0 : a, std::move(log_sq));
}

inline OperatorSequence make_explicit_operator(std::span<const double> lambda) {
  require(!lambda.empty(), "explicit operator must have at least one value");
  std::vector<double> log_sq(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    require(lambda[i] > 0.0 && std::isfinite(lambda[i]),
            "explicit operator values must be finite and strictly positive");
    log_sq[i] = 2.0 * std::log(lambda[i]);
  }
  return OperatorSequence(OperatorFamily::explicit_list, 0.0, std::move(log_sq));
}

// ---------------------------------------------------------------------------
// Parameter sequences

enum class ParameterFamily { polynomial, exponential, explicit_list };

inline const char* to_string(ParameterFamily f) {
  switch (f) {
    case ParameterFamily::polynomial: return "polynomial";
    case ParameterFamily::exponential: return "exponential";
    case ParameterFamily::explicit_list: return "explicit";
  }
  return "?";
}

/// theta_1..theta_N together with sum_{j>N} theta_j^2, the part of the
/// sequence cut off by the truncation.
///
///   polynomial   theta_j = scale * j^-q, q > 1/2. The tail is bounded by
///                scale^2 * int_{N+1/2}^inf x^-2q dx, which dominates the sum
///                because x^-2q is convex (midpoint rule).
///   exponential  theta_j = scale * exp(-rate * j); the tail is the exact
///                geometric remainder.
///   explicit     finitely many values, zero afterwards; the tail is exact.
struct ParameterSequence {
  std::vector<double> values;
  ParameterFamily family = ParameterFamily::explicit_list;
  double tail_sq = 0.0;
  std::string tail_rule = "exact";

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t j) const { return values.at(j - 1); }  // 1-based
};

inline ParameterSequence make_parameter(ParameterFamily family, double scale, double shape,
                                        std::size_t n) {
  require(n >= 1, "parameter length N must be >= 1");
  require(std::isfinite(scale), "parameter scale must be finite");
  ParameterSequence out;
  out.family = family;
  out.values.resize(n);
  const double nn = static_cast<double>(n);
  switch (family) {
    case ParameterFamily::polynomial:
      require(shape > 0.5, "polynomial parameter exponent q must exceed 1/2 (square summability)");
      for (std::size_t j = 1; j <= n; ++j) out.values[j - 1] = scale * std::pow(double(j), -shape);
      out.tail_sq = scale * scale * std::pow(nn + 0.5, 1.0 - 2.0 * shape) / (2.0 * shape - 1.0);
      out.tail_rule = "integral from N+1/2 (upper bound)";
      break;
    case ParameterFamily::exponential:
      require(shape > 0.0, "exponential parameter rate must be > 0");
      for (std::size_t j = 1; j <= n; ++j) out.values[j - 1] = scale * std::exp(-shape * double(j));
      out.tail_sq = scale * scale * std::exp(-2.0 * shape * (nn + 1.0)) /
                    (-std::expm1(-2.0 * shape));
      out.tail_rule = "geometric (exact)";
      break;
    case ParameterFamily::explicit_list:
      throw std::invalid_argument("explicit parameters are built from values, see make_explicit_parameter");
  }
  return out;
}

/// Explicit values, zero beyond the list. Truncating below the list length
/// moves the remainder into the exact tail.
inline ParameterSequence make_explicit_parameter(std::span<const double> values, std::size_t n) {
  require(n >= 1, "parameter length N must be >= 1");
  ParameterSequence out;
  out.family = ParameterFamily::explicit_list;
  out.values.assign(n, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(std::isfinite(values[i]), "explicit parameter values must be finite");
    if (i < n) {
      out.values[i] = values[i];
    } else {
      out.tail_sq += values[i] * values[i];
    }
  }
  out.tail_rule = "exact";
  return out;
}

// ---------------------------------------------------------------------------
// Weighted ellipsoid { theta : sum_j (theta_j - mu_j)^2 / w_j <= r }

enum class WeightFamily { polynomial, exponential, explicit_list };

class WeightedClass {
 public:
  WeightedClass(std::vector<double> weights, double radius, WeightFamily family = WeightFamily::explicit_list,
                double smoothness = 0.0)
      : weights_(std::move(weights)), radius_(radius), family_(family), smoothness_(smoothness) {
    require(!weights_.empty(), "weight sequence must be non-empty");
    require(radius_ >= 0.0 && std::isfinite(radius_), "class radius r must be finite and >= 0");
    require(weights_.front() == 1.0, "weights must start at w_1 = 1");
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      require(weights_[i] > 0.0, "weights must be strictly positive");
      if (i > 0) require(weights_[i] <= weights_[i - 1], "weights must be non-increasing");
    }
    require(weights_.size() == 1 || weights_.back() < 1.0,
            "weights must decrease towards zero, a constant sequence is not admissible");
  }

  std::size_t size() const noexcept { return weights_.size(); }
  double radius() const noexcept { return radius_; }
  WeightFamily family() const noexcept { return family_; }
  double smoothness() const noexcept { return smoothness_; }
  double weight(std::size_t m) const { return weights_.at(m - 1); }
  std::span<const double> weights() const noexcept { return weights_; }

  /// sum_{j<=N} (theta_j - mu_j)^2 / w_j.
  double weighted_distance(std::span<const double> theta, std::span<const double> mean) const {
    require(theta.size() <= weights_.size() && mean.size() == theta.size(),
            "weighted norm: sequence lengths must agree and not exceed the weight length");
    double s = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = theta[i] - mean[i];
      s += d * d / weights_[i];
    }
    return s;
  }

  bool contains(std::span<const double> theta, std::span<const double> mean) const {
    return weighted_distance(theta, mean) <= radius_;
  }

 private:
  std::vector<double> weights_;
  double radius_;
  WeightFamily family_;
  double smoothness_;
};

/// w_j = j^{-2p} (polynomial) or exp(1 - j^{2p}) (exponential).
inline WeightedClass make_class(WeightFamily family, double p, double radius, std::size_t n) {
  require(n >= 1, "class length N must be >= 1");
  require(p > 0.0 && std::isfinite(p), "class smoothness p must be > 0");
  std::vector<double> w(n);
  for (std::size_t j = 1; j <= n; ++j) {
    const double x = static_cast<double>(j);
    switch (family) {
      case WeightFamily::polynomial: w[j - 1] = std::pow(x, -2.0 * p); break;
      case WeightFamily::exponential: w[j - 1] = std::exp(1.0 - std::pow(x, 2.0 * p)); break;
      case WeightFamily::explicit_list:
        throw std::invalid_argument("explicit classes are built from their weights");
    }
    // exp(1 - j^{2p}) underflows to 0 for large j; keep the sequence positive.
    w[j - 1] = std::max(w[j - 1], std::numeric_limits<double>::denorm_min());
  }
  return WeightedClass(std::move(w), radius, family, p);
}

/// Uniform bias bound over the ellipsoid: b_m(theta) <= w_m * r.
inline double class_bias_bound(const WeightedClass& cls, std::size_t m) {
  if (m < 1 || m > cls.size()) {
    throw std::out_of_range("dimension m=" + std::to_string(m) + " outside 1.." +
                            std::to_string(cls.size()));
  }
  return cls.weight(m) * cls.radius();
}

// ---------------------------------------------------------------------------
// Observations

struct Observation {
  std::vector<double> y;
  double eps = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return y.size(); }
};

/// Fills y[0..count) with lambda_j theta_j + sqrt(eps) xi_j from `normals`.
inline void draw_observation(std::span<double> y, std::span<const double> theta, const OperatorSequence& op,
                             double eps, NormalSource& normals) {
  const double noise = std::sqrt(eps);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = op.lambda(i + 1) * theta[i] + noise * normals();
  }
}

/// One realisation of the model; (theta0, op, eps, seed, stream) determine
/// the output bit for bit. A non-zero `count` observes only the first
/// `count` coordinates, which are identical to those of the full draw.
inline Observation simulate_observation(const ParameterSequence& theta0, const OperatorSequence& op,
                                        double eps, std::uint64_t seed, std::uint64_t stream = 0,
                                        std::size_t count = 0) {
  require_noise_level(eps);
  require(theta0.size() == op.size(), "parameter and operator lengths must agree");
  require(count <= op.size(), "cannot observe more coordinates than the truncation length");
  Observation obs;
  obs.eps = eps;
  obs.seed = seed;
  obs.y.resize(count == 0 ? op.size() : count);
  NormalSource normals(make_stream(seed, stream));
  draw_observation(obs.y, theta0.values, op, eps, normals);
  return obs;
}

}  // namespace igssm
