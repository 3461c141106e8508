#pragma once

// Independent reference computations used by the tests. Nothing here calls
// the solver; everything is closed form or brute-force quadrature.

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline constexpr double pi = 3.14159265358979323846;

/// Heat kernel of d_t - a Laplacian in d dimensions.
inline double heat_kernel(double dt, double dist2, double a, int d) {
  return std::pow(4.0 * pi * a * dt, -0.5 * d) * std::exp(-dist2 / (4.0 * a * dt));
}

/// Mass of N(mu, 2 a dt) on [lo, hi].
inline double interval_mass(double lo, double hi, double mu, double a, double dt) {
  const double s = std::sqrt(4.0 * a * dt);
  return 0.5 * (std::erf((hi - mu) / s) - std::erf((lo - mu) / s));
}

/// Composite Simpson rule on [lo, hi] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int n) {
  if (n % 2) ++n;
  const double h = (hi - lo) / n;
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return s * h / 3.0;
}

/// Mass of the 2-d isotropic Gaussian N(0, 2 a dt I) on the disc of radius r
/// centred at distance c from its mean, by 1-d quadrature in the polar angle.
inline double disc_mass_2d(double r, double c, double a, double dt) {
  const double var = 2.0 * a * dt;
  auto f = [&](double x) {
    const double half = std::sqrt(std::max(0.0, r * r - (x - c) * (x - c)));
    return std::exp(-x * x / (2 * var)) / std::sqrt(2 * pi * var) * std::erf(half / std::sqrt(2 * var));
  };
  return simpson(f, c - r, c + r, 2000);
}

/// Brute-force mean oscillation of a time-independent scalar coefficient in
/// d = 1: sup over centres x0 in [lo, hi] of (1/2r) int |a - avg| over
/// [x0 - r, x0 + r], by a dense midpoint rule.
inline double mean_oscillation_1d(const std::function<double(double)>& a, double r, double lo,
                                  double hi, int n_centres, int n_quad) {
  double best = 0;
  std::vector<double> v(n_quad);
  for (int c = 0; c < n_centres; ++c) {
    const double x0 = n_centres == 1 ? lo : lo + (hi - lo) * c / (n_centres - 1);
    double avg = 0;
    for (int i = 0; i < n_quad; ++i) {
      v[i] = a(x0 - r + 2 * r * (i + 0.5) / n_quad);
      avg += v[i];
    }
    avg /= n_quad;
    double osc = 0;
    for (int i = 0; i < n_quad; ++i) osc += std::abs(v[i] - avg);
    best = std::max(best, osc / n_quad);
  }
  return best;
}

/// Least-squares slope.
inline double slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace oracle
