#pragma once

#include "pklab/pde.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <ostream>
#include <string>

namespace pklab {

enum class EnvelopeSide { upper, lower };

/// N (t-s)^{-d/2} exp(-kappa |x-y|^2 / (t-s)) for 0 < t-s <= T.
///
/// N and kappa are stored in this single normalized form for both sides.
/// The two-sided estimate is usually written with a shared pair (N1, k1) as
///   upper:  N1 (t-s)^{-d/2} exp(-|x-y|^2 / (k1 (t-s)))   -> N = N1,   kappa = 1/k1
///   lower:  N1^{-1} (t-s)^{-d/2} exp(-k1 |x-y|^2/(t-s)) -> N = 1/N1, kappa = k1
/// from_classical_convention / classical_N / classical_kappa convert between the two.
struct GaussianEnvelope {
  double N = 1;
  double kappa = 1;
  double T = std::numeric_limits<double>::infinity();
  EnvelopeSide side = EnvelopeSide::upper;
  int d = 1;

  GaussianEnvelope() = default;
  GaussianEnvelope(double N_, double kappa_, double T_, EnvelopeSide side_, int d_)
      : N(N_), kappa(kappa_), T(T_), side(side_), d(d_) {
    require(N > 0 && kappa > 0 && T > 0, ErrorKind::argument, "ARGUMENT",
            fmt::format("envelope needs N, kappa, T > 0 (got {}, {}, {})", N, kappa, T));
    require(d >= 1, ErrorKind::argument, "ARGUMENT", "envelope dimension must be >= 1");
  }

  static GaussianEnvelope from_classical_convention(EnvelopeSide side, double N1, double k1,
                                                    double T, int d) {
    return side == EnvelopeSide::upper ? GaussianEnvelope(N1, 1.0 / k1, T, side, d)
                                       : GaussianEnvelope(1.0 / N1, k1, T, side, d);
  }
  double classical_N() const { return side == EnvelopeSide::upper ? N : 1.0 / N; }
  double classical_kappa() const { return side == EnvelopeSide::upper ? 1.0 / kappa : kappa; }

  double operator()(double dt, double dist) const {
    return N * std::pow(dt, -0.5 * d) * std::exp(-kappa * dist * dist / dt);
  }
};

/// Empirical Harnack-type constants that feed the envelopes.
///
/// N0_lb / N0_wh are the local-boundedness and weak-Harnack constants of the
/// adjoint operator, kept apart; N0() is their max. N1_sy is the mass floor
/// constant. N2 is the Harnack constant in the chain geometry and N_ks the
/// one in the two-step geometry used when the chain is short.
struct HarnackConstants {
  double N0_lb = 1;
  double N0_wh = 1;
  double N1_sy = 1;
  double N2 = 2;
  double N_ks = 2;
  double R0 = 1;

  double N0() const { return std::max(N0_lb, N0_wh); }

  void validate() const {
    require(N0_lb > 0 && N0_wh > 0 && N1_sy > 0 && N_ks > 0 && R0 > 0, ErrorKind::precondition,
            "PRECONDITION", "Harnack constants must be positive");
    require(N2 > 1, ErrorKind::precondition, "PRECONDITION",
            fmt::format("chain Harnack constant must exceed 1, got {}", N2));
  }
};

inline double unit_ball_volume(int d) {
  require(d >= 1, ErrorKind::argument, "ARGUMENT", "dimension must be >= 1");
  return std::pow(pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

/// Barrier h(t, x) for the unit-mass indicator of B_r(y) released at tau:
/// (1 + (t-tau)/r^2)^{-d lambda / (2 Lambda)} exp((1 - |x-y|^2/(t-tau+r^2)) / (4 Lambda)).
inline double barrier_h(double elapsed, double dist, double r, int d, double lambda, double Lambda) {
  require(elapsed >= 0 && r > 0, ErrorKind::argument, "ARGUMENT",
          "barrier needs t - tau >= 0 and r > 0");
  const double s = elapsed + r * r;
  return std::pow(1.0 + elapsed / (r * r), -d * lambda / (2.0 * Lambda)) *
         std::exp((1.0 - dist * dist / s) / (4.0 * Lambda));
}

/// Bracketed factor of Ph / h at a point with coefficient matrix A,
/// displacement v = x - y and s = t - tau + r^2. Non-negative whenever A lies
/// in the window [lambda, Lambda].
inline double barrier_residual(const Mat& A, const Vec& v, double s, int d, double lambda,
                               double Lambda) {
  require(s > 0, ErrorKind::argument, "ARGUMENT", "s must be positive");
  require(A.rows() == d && A.cols() == d && v.size() == d, ErrorKind::argument, "ARGUMENT",
          "dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  const double tol = 1e-12 * Lambda;
  require(lo >= lambda - tol && hi <= Lambda + tol, ErrorKind::precondition, "PRECONDITION",
          fmt::format("matrix spectrum [{}, {}] outside window [{}, {}]", lo, hi, lambda, Lambda));
  // grouped as v.(Lambda I - A)v and tr A - d lambda, both non-negative, so
  // nothing cancels when A sits at either end of the window
  const Mat gap = Lambda * Mat::Identity(d, d) - A;
  return v.dot(gap * v) / (4.0 * Lambda * Lambda * s * s) +
         (A.trace() - d * lambda) / (2.0 * Lambda * s);
}

/// Upper bound on the ball integral int_{B_r(y)} Gamma(t, x, tau, z) dz.
inline double lemma21_bound(double r, double elapsed, double dist, int d, double lambda,
                            double Lambda) {
  require(r > 0 && elapsed > 0, ErrorKind::argument, "ARGUMENT", "need r > 0 and t - tau > 0");
  return barrier_h(elapsed, dist, r, d, lambda, Lambda);
}

/// Amplitude of the time-and-ball-averaged barrier:
/// 2^d e^{1/(4 Lambda)} / (4^{d lambda / (2 Lambda)} |B_1|).
inline double averaged_barrier_amplitude(int d, double lambda, double Lambda) {
  return std::pow(2.0, d) * std::exp(1.0 / (4.0 * Lambda)) /
         (std::pow(4.0, d * lambda / (2.0 * Lambda)) * unit_ball_volume(d));
}

/// Bound for lemma21_bound at r = sqrt(t-s)/2 and tau in [s, (3s+t)/4]:
/// e^{1/(4 Lambda)} / 4^{d lambda/(2 Lambda)} exp(-|x-y|^2 / (5 Lambda (t-s))).
inline double quarter_window_bound(double span, double dist, int d, double lambda, double Lambda) {
  return std::exp(1.0 / (4.0 * Lambda)) / std::pow(4.0, d * lambda / (2.0 * Lambda)) *
         std::exp(-dist * dist / (5.0 * Lambda * span));
}

inline GaussianEnvelope upper_envelope(int d, double lambda, double Lambda, double N0,
                                       double T = std::numeric_limits<double>::infinity()) {
  require(N0 > 0, ErrorKind::argument, "ARGUMENT", "N0 must be positive");
  return GaussianEnvelope(N0 * averaged_barrier_amplitude(d, lambda, Lambda), 1.0 / (5.0 * Lambda),
                          T, EnvelopeSide::upper, d);
}

/// 4 ln N2: exponent rate of the chained Harnack factor in terms of t - t0.
inline double kappa0_base(double N2) { return 4.0 * std::log(N2); }

/// Worst case over t0 in [s + 9r^2/4, s + 13r^2/4], where t - t0 >= 3(t-s)/16.
inline double kappa0(double N2) { return kappa0_base(N2) * 16.0 / 3.0; }

/// Lower-bound constant of the sigma-slice estimate u >= exp(...)/C: the max
/// of the chain case (N2 N1) and the two-step case (N_ks^2 N1).
inline double slice_lower_constant(const HarnackConstants& c) {
  return std::max(c.N2 * c.N1_sy, c.N_ks * c.N_ks * c.N1_sy);
}

inline GaussianEnvelope lower_envelope(int d, const HarnackConstants& c) {
  c.validate();
  const double amp = std::pow(4.0, d) / (c.N0() * slice_lower_constant(c) * unit_ball_volume(d));
  return GaussianEnvelope(amp, kappa0(c.N2), c.R0 * c.R0, EnvelopeSide::lower, d);
}

struct MassProbe {
  double tau;
  Vec xi;
};

struct SyMassResult {
  double empirical_N1 = 0;        // max over probes of 1 / integral
  std::vector<double> integrals;  // per probe
  double min_integral() const {
    return integrals.empty() ? 0.0 : *std::min_element(integrals.begin(), integrals.end());
  }
};

/// Probes (sigma + a rho^2, y + b rho) on an n_t x n_x lattice of a in [0,1]
/// and b in [-1,1]^d, snapped to the grid.
inline std::vector<MassProbe> sy_probe_lattice(const Grid& g, double rho, double sigma,
                                               const Vec& y, int n_t, int n_x) {
  require(n_t >= 1 && n_x >= 1, ErrorKind::argument, "ARGUMENT", "lattice sizes must be >= 1");
  std::vector<MassProbe> out;
  const long ns = g.require_step(sigma, "sigma");
  for (int i = 0; i < n_t; ++i) {
    const double a = n_t == 1 ? 0.0 : static_cast<double>(i) / (n_t - 1);
    const long n = ns + static_cast<long>(std::floor(a * rho * rho / g.dt + 1e-9));
    const int per_axis = n_x;
    const int total = g.d == 1 ? per_axis : per_axis * per_axis;
    for (int flat = 0; flat < total; ++flat) {
      Vec xi(g.d);
      int rem = flat;
      bool inside = true;
      double r2 = 0;
      for (int ax = 0; ax < g.d; ++ax) {
        const int j = rem % per_axis;
        rem /= per_axis;
        const double b = per_axis == 1 ? 0.0 : -1.0 + 2.0 * j / (per_axis - 1);
        // snap towards y so the probe stays inside B_rho(y)
        const double off = std::trunc(b * rho / g.dx + std::copysign(1e-9, b)) * g.dx;
        xi(ax) = y(ax) + off;
        r2 += off * off;
      }
      inside = r2 <= rho * rho * (1 + 1e-12);
      if (inside) out.push_back({g.time(n), xi});
    }
  }
  return out;
}

/// Mass check of the Safonov-Yuan floor: for each probe (tau, xi) in
/// [sigma, sigma + rho^2] x B_rho(y), the integral of Gamma(tau, xi, sigma, .)
/// over B_{2 rho}(y), computed from one adjoint solve per probe.
inline SyMassResult sy_mass_check(const CoefficientField& field, const Grid& g, double rho,
                                  double sigma, const Vec& y, const std::vector<MassProbe>& probes) {
  require(rho > 0, ErrorKind::argument, "ARGUMENT", "rho must be positive");
  require(!probes.empty(), ErrorKind::argument, "ARGUMENT", "no probes");
  g.require_step(sigma, "sigma");
  for (int a = 0; a < g.d; ++a)
    require(y(a) - 2 * rho >= -g.L && y(a) + 2 * rho <= g.L, ErrorKind::geometry, "GEOMETRY",
            "ball B_{2 rho}(y) clipped by the grid boundary");
  for (const auto& p : probes) {
    const double tol = 1e-6 * g.dt;
    require(p.tau >= sigma - tol && p.tau <= sigma + rho * rho + tol && (p.xi - y).norm() <= rho * (1 + 1e-12),
            ErrorKind::argument, "ARGUMENT", "probe outside [sigma, sigma + rho^2] x B_rho(y)");
  }
  SyMassResult res;
  res.integrals.assign(probes.size(), 0.0);
  parallel_for(probes.size(), [&](std::size_t i) {
    const auto& p = probes[i];
    const std::size_t node = g.require_node(p.xi, "probe point");
    const long ns = *g.step_of(sigma);
    const long nt = g.require_step(p.tau, "probe time");
    if (nt == ns) {
      res.integrals[i] = (p.xi - y).norm() <= 2 * rho ? 1.0 : 0.0;
      return;
    }
    const Grid w = time_window(g, sigma, p.tau);
    SolveOptions opt;
    opt.record_times = std::vector<double>{w.t0};
    const KernelField adj = solve_adjoint_mixture(field, w, {{w.t1, node, 1.0}}, opt);
    res.integrals[i] = ball_integral(adj, w.t0, y, 2 * rho);
  });
  double worst = 0;
  for (double v : res.integrals) worst = std::max(worst, v > 0 ? 1.0 / v : std::numeric_limits<double>::infinity());
  res.empirical_N1 = worst;
  return res;
}

/// key = value report of an envelope in both rate conventions.
inline void write_envelope_report(std::ostream& os, const std::string& name,
                                  const GaussianEnvelope& e) {
  const auto f = [](double v) { return fmt::format("{:.17g}", v); };
  os << name << ".side=" << (e.side == EnvelopeSide::upper ? "upper" : "lower") << '\n'
     << name << ".d=" << e.d << '\n'
     << name << ".N=" << f(e.N) << '\n'
     << name << ".kappa=" << f(e.kappa) << '\n'
     << name << ".T=" << f(e.T) << '\n'
     << name << ".classical_N1=" << f(e.classical_N()) << '\n'
     << name << ".classical_kappa1=" << f(e.classical_kappa()) << '\n';
}

inline void write_constants_report(std::ostream& os, const HarnackConstants& c) {
  const auto f = [](double v) { return fmt::format("{:.17g}", v); };
  os << "N0_lb=" << f(c.N0_lb) << '\n'
     << "N0_wh=" << f(c.N0_wh) << '\n'
     << "N0=" << f(c.N0()) << '\n'
     << "N0_note=local-boundedness and weak-Harnack constants estimated separately; max used\n"
     << "N1_sy=" << f(c.N1_sy) << '\n'
     << "N2=" << f(c.N2) << '\n'
     << "N_ks=" << f(c.N_ks) << '\n'
     << "kappa0=" << f(kappa0(c.N2)) << '\n'
     << "R0=" << f(c.R0) << '\n';
}

}  // namespace pklab
