#pragma once

// Reference computations used by the tests. None of them calls into the
// library's own formulas: posteriors come from numerical integration,
// dimensions from plain linear scans over directly summed sequences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

struct Moments {
  double mean;
  double variance;
};

/// Posterior mean and variance of theta given Y = lambda theta + sqrt(eps) xi
/// under theta ~ N(mu, s), by composite Simpson integration of the
/// unnormalised density on a grid around its mode.
inline Moments grid_posterior(double eps, double lambda, double s, double mu, double y) {
  auto log_density = [&](double t) {
    const double r = y - lambda * t;
    return -0.5 * (t - mu) * (t - mu) / s - 0.5 * r * r / eps;
  };
  // The mode lies between mu and y / lambda; both factors have width at
  // least min(sqrt(s), sqrt(eps) / lambda).
  const double w = std::min(std::sqrt(s), std::sqrt(eps) / lambda);
  const double a = std::min(mu, y / lambda) - 5.0 * w;
  const double b = std::max(mu, y / lambda) + 5.0 * w;
  const double coarse = w / 4.0;
  double mode = a, best = -std::numeric_limits<double>::infinity();
  for (double t = a; t <= b; t += coarse) {
    const double v = log_density(t);
    if (v > best) {
      best = v;
      mode = t;
    }
  }
  const int n = 12000;  // even number of panels
  const double lo = mode - 16.0 * w, hi = mode + 16.0 * w;
  const double h = (hi - lo) / n;
  long double z = 0, m1 = 0, m2 = 0;
  for (int i = 0; i <= n; ++i) {
    const double t = lo + h * i;
    const double c = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const long double f = std::exp(static_cast<long double>(log_density(t) - best)) * c;
    z += f;
    m1 += f * t;
    m2 += f * t * t;
  }
  const long double mean = m1 / z;
  return {static_cast<double>(mean), static_cast<double>(m2 / z - mean * mean)};
}

/// b_m = sum_{j>m} (theta_j - mu_j)^2 over the listed coordinates plus `tail`.
inline double bias(const std::vector<double>& theta, const std::vector<double>& mu, std::size_t m, double tail) {
  double s = tail;
  for (std::size_t j = theta.size(); j > m; --j) s += (theta[j - 1] - mu[j - 1]) * (theta[j - 1] - mu[j - 1]);
  return s;
}

/// Smallest index minimising `values` (1-based), by linear scan.
inline std::size_t smallest_argmin(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[best]) best = i;
  }
  return best + 1;
}

}  // namespace oracle
