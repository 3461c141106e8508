#pragma once

#include "pklab/bounds.hpp"
#include "pklab/io.hpp"
#include "pklab/pde.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <vector>

namespace pklab {

enum class ChainCase { chain, direct };

struct Waypoint {
  double t;
  Vec x;
};

/// Harnack chain from (t0, y) to (t, x):
///   r = sqrt(t-s)/2, t0 = sigma + r^2/4, k = ceil(4 |x-y|^2 / (t - t0)),
///   x_j = y + j (x-y)/k, t_j = t0 + j (t-t0)/k, y_j = (x_{j-1} + x_j)/2,
///   eps = sqrt((t-t0)/k) / 2.
/// Waypoints, centres and eps are populated only in the chain case (k >= 3).
struct ChainPlan {
  ChainCase case_tag = ChainCase::direct;
  long k = 0;
  double s = 0;
  double t = 0;
  double sigma = 0;
  double t0 = 0;
  double r = 0;
  double epsilon = 0;
  Vec x;
  Vec y;
  std::vector<Waypoint> waypoints;  // j = 0..k
  std::vector<Vec> centres;         // j = 1..k, stored at index j-1
};

struct ChainInvariantReport {
  bool waypoint_formula = true;
  bool step_within_eps = true;
  bool centre_within_half_eps = true;
  bool cylinders_after_sigma = true;
  bool direct_bound = true;
  bool ok() const {
    return waypoint_formula && step_within_eps && centre_within_half_eps && cylinders_after_sigma &&
           direct_bound;
  }
};

/// Checks the geometric invariants of a plan. Inequalities allow a relative
/// slack of 1e-12 for floating-point rounding of the equality cases.
inline ChainInvariantReport check_chain_invariants(const ChainPlan& p) {
  ChainInvariantReport rep;
  constexpr double rel = 1e-12;
  const double dist2 = (p.x - p.y).squaredNorm();
  if (p.case_tag == ChainCase::direct) {
    rep.direct_bound = dist2 <= 7.0 * (p.t - p.s) / 16.0 * (1 + rel);
    return rep;
  }
  const double kd = static_cast<double>(p.k);
  for (long j = 0; j <= p.k; ++j) {
    const auto& w = p.waypoints[static_cast<std::size_t>(j)];
    const Vec xj = p.y + static_cast<double>(j) * (p.x - p.y) / kd;
    const double tj = p.t0 + static_cast<double>(j) * (p.t - p.t0) / kd;
    if (!(w.x == xj) || w.t != tj) rep.waypoint_formula = false;
  }
  const double eps = p.epsilon;
  for (long j = 1; j <= p.k; ++j) {
    const auto& a = p.waypoints[static_cast<std::size_t>(j - 1)];
    const auto& b = p.waypoints[static_cast<std::size_t>(j)];
    const Vec& c = p.centres[static_cast<std::size_t>(j - 1)];
    if ((b.x - a.x).norm() > eps * (1 + rel)) rep.step_within_eps = false;
    if ((b.x - c).norm() > 0.5 * eps * (1 + rel) || (a.x - c).norm() > 0.5 * eps * (1 + rel))
      rep.centre_within_half_eps = false;
    // C^(j) = B_{2 eps}(y_j) x (t_{j-1} - eps^2, t_j) must lie in (sigma, inf)
    if (!(a.t - eps * eps > p.sigma)) rep.cylinders_after_sigma = false;
  }
  return rep;
}

inline ChainPlan chain_plan(const Vec& x, const Vec& y, double t, double s, double sigma) {
  require(x.size() == y.size() && x.size() >= 1, ErrorKind::argument, "ARGUMENT",
          "x and y must share a dimension");
  require(t > s, ErrorKind::argument, "ARGUMENT", "need t > s");
  ChainPlan p;
  p.x = x;
  p.y = y;
  p.t = t;
  p.s = s;
  p.sigma = sigma;
  p.r = std::sqrt(t - s) / 2.0;
  const double r2 = p.r * p.r;
  const double tol = 1e-12 * std::max(1.0, std::abs(t - s));
  require(sigma >= s + 2 * r2 - tol && sigma <= s + 3 * r2 + tol, ErrorKind::argument, "ARGUMENT",
          fmt::format("sigma = {} outside [s + 2r^2, s + 3r^2] = [{}, {}]", sigma, s + 2 * r2,
                      s + 3 * r2));
  p.t0 = sigma + r2 / 4.0;
  const double dist2 = (x - y).squaredNorm();
  p.k = static_cast<long>(std::ceil(4.0 * dist2 / (t - p.t0)));
  p.case_tag = p.k >= 3 ? ChainCase::chain : ChainCase::direct;
  if (p.case_tag == ChainCase::chain) {
    const double kd = static_cast<double>(p.k);
    p.epsilon = 0.5 * std::sqrt((t - p.t0) / kd);
    p.waypoints.reserve(static_cast<std::size_t>(p.k + 1));
    for (long j = 0; j <= p.k; ++j) {
      const double jd = static_cast<double>(j);
      p.waypoints.push_back({p.t0 + jd * (t - p.t0) / kd, y + jd * (x - y) / kd});
    }
    for (long j = 1; j <= p.k; ++j)
      p.centres.push_back(0.5 * (p.waypoints[j - 1].x + p.waypoints[j].x));
  }
  const auto rep = check_chain_invariants(p);
  require(rep.ok(), ErrorKind::estimation, "CHAIN_INVARIANT", "chain plan violates its invariants");
  return p;
}

struct ChainFactor {
  double factor;       // N2^{-k}
  double closed_form;  // N2^{-1} exp(-4 ln N2 |x-y|^2 / (t - t0))
};

inline ChainFactor chain_lower_factor(const ChainPlan& p, double N2) {
  require(p.case_tag == ChainCase::chain, ErrorKind::argument, "ARGUMENT",
          "direct-case plan: use direct_lower_factor");
  require(N2 > 1, ErrorKind::argument, "ARGUMENT", "N2 must exceed 1");
  const double dist2 = (p.x - p.y).squaredNorm();
  return {std::pow(N2, -static_cast<double>(p.k)),
          std::exp(-std::log(N2) - kappa0_base(N2) * dist2 / (p.t - p.t0))};
}

/// Two Harnack applications: N_ks^{-2}.
inline double direct_lower_factor(const ChainPlan& p, double N_ks) {
  require(p.case_tag == ChainCase::direct, ErrorKind::argument, "ARGUMENT",
          "chain-case plan: use chain_lower_factor");
  require(N_ks > 0, ErrorKind::argument, "ARGUMENT", "N_ks must be positive");
  return 1.0 / (N_ks * N_ks);
}

/// CSV: j, t_j, x_j..., y_j..., epsilon for j = 1..k.
inline void write_chain_csv(std::ostream& os, const ChainPlan& p) {
  const auto d = p.x.size();
  std::vector<std::string> header{"j", "t_j"};
  for (Eigen::Index a = 0; a < d; ++a) header.push_back(d == 1 ? "x_j" : fmt::format("x_j{}", a + 1));
  for (Eigen::Index a = 0; a < d; ++a) header.push_back(d == 1 ? "y_j" : fmt::format("y_j{}", a + 1));
  header.push_back("epsilon");
  CsvWriter w(os, header);
  for (long j = 1; j <= static_cast<long>(p.centres.size()); ++j) {
    std::vector<std::string> cells{std::to_string(j), fmt17(p.waypoints[j].t)};
    for (Eigen::Index a = 0; a < d; ++a) cells.push_back(fmt17(p.waypoints[j].x(a)));
    for (Eigen::Index a = 0; a < d; ++a) cells.push_back(fmt17(p.centres[j - 1](a)));
    cells.push_back(fmt17(p.epsilon));
    w.row_text(cells);
  }
}

// ---------------------------------------------------------------------------
// Empirical Harnack-type constants
// ---------------------------------------------------------------------------

/// Window of a kernel: nodes in B_radius(centre) at slice times in [a, b].
struct SlabStats {
  double sup = 0;
  double inf = std::numeric_limits<double>::infinity();
  double mean = 0;
  std::size_t count = 0;
};

inline SlabStats slab_stats(const KernelField& k, double a, double b, const Vec& centre,
                            double radius, bool include_upper = true) {
  const Grid& g = k.grid;
  const double tol = 1e-6 * g.dt;
  std::vector<std::size_t> nodes;
  const double r2 = radius * radius * (1 + 1e-12);
  for (std::size_t n = 0; n < g.n_nodes(); ++n)
    if ((g.point(n) - centre).squaredNorm() <= r2) nodes.push_back(n);
  SlabStats st;
  CompensatedSum acc;
  for (std::size_t si = 0; si < k.n_slices(); ++si) {
    const double tk = k.times[si];
    if (tk < a - tol) continue;
    if (include_upper ? tk > b + tol : tk > b - tol) continue;
    const auto s = k.slice(si);
    for (std::size_t n : nodes) {
      st.sup = std::max(st.sup, std::abs(s[n]));
      st.inf = std::min(st.inf, s[n]);
      acc.add(std::abs(s[n]));
      ++st.count;
    }
  }
  require(st.count > 0, ErrorKind::geometry, "GEOMETRY", "empty space-time window");
  st.mean = acc.value() / static_cast<double>(st.count);
  return st;
}

/// Forward Harnack configuration. With base time b and radius rho, the ratio
/// is sup over (b + e0 rho^2, b + e1 rho^2) x B_rho(y0) divided by inf over
/// (b + l0 rho^2, b + l1 rho^2) x B_rho(y0).
struct HarnackGeometry {
  double early_lo, early_hi, late_lo, late_hi;

  /// Chain cylinder C^(j): base t_{j-1} - eps^2, early (eps^2, 2 eps^2),
  /// late (4 eps^2, 5 eps^2).
  static HarnackGeometry chain() { return {1, 2, 4, 5}; }
  /// Two-step form: early (rho^2, 2 rho^2), late (3 rho^2, 4 rho^2).
  static HarnackGeometry two_step() { return {1, 2, 3, 4}; }
};

/// sup(early) / inf(late) for a forward solution held in k.
inline double harnack_ratio(const KernelField& k, double base, const Vec& y0, double rho,
                            const HarnackGeometry& geo) {
  const double r2 = rho * rho;
  const auto early = slab_stats(k, base + geo.early_lo * r2, base + geo.early_hi * r2, y0, rho);
  const auto late = slab_stats(k, base + geo.late_lo * r2, base + geo.late_hi * r2, y0, rho);
  if (!(late.inf > 0)) return std::numeric_limits<double>::quiet_NaN();
  return early.sup / late.inf;
}

struct EstimateOptions {
  int max_mixture = 5;         // kernels per random solution, 1..max_mixture
  double source_depth = 4.0;   // sources at times in [base - depth rho^2, base)
  double source_spread = 3.0;  // source positions in B_{spread rho}(y0)
  double target_height = 4.0;  // adjoint targets in [top, top + height r^2]
  double target_spread = 4.0;  // adjoint target positions in B_{spread r}(x0)
  bool anchor_trial = true;    // trial 0: one unit mass just below the centre of the cylinder
  int window_slices = 64;      // recorded time slices per window
};

namespace detail {

inline Vec snap_to_grid(const Grid& g, const Vec& x) {
  Vec out(x.size());
  for (Eigen::Index a = 0; a < x.size(); ++a) {
    const double i = std::clamp(std::round((x(a) + g.L) / g.dx), 1.0, g.nx - 2.0);
    out(a) = g.coord(static_cast<int>(i));
  }
  return out;
}

inline Vec random_in_ball(std::mt19937_64& rng, int d, double radius) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(d);
  do {
    for (int a = 0; a < d; ++a) v(a) = u(rng);
  } while (v.squaredNorm() > 1.0);
  return radius * v;
}

/// Up to n + 1 grid times spread evenly over [a, b], both ends included.
inline std::vector<double> window_times(const Grid& g, double a, double b, int n) {
  const long na = static_cast<long>(std::ceil((a - g.t0) / g.dt - 1e-9));
  const long nb = static_cast<long>(std::floor((b - g.t0) / g.dt + 1e-9));
  std::vector<double> out;
  if (nb < na) return out;
  const long stride = std::max(1L, (nb - na) / std::max(1, n));
  for (long k = na; k <= nb; k += stride) out.push_back(g.time(k));
  if (out.back() != g.time(nb)) out.push_back(g.time(nb));
  return out;
}

/// Grid node closest to the centre of the box.
inline Vec box_centre(const Grid& g) { return snap_to_grid(g, Vec::Zero(g.d)); }

}  // namespace detail

/// Max over trials and scales of the forward Harnack ratio for random
/// non-negative solutions: mixtures of 1..max_mixture kernels from point
/// sources strictly below the test cylinder. The cylinder sits at the grid
/// centre with its base source_depth rho^2 above t0.
inline double estimate_harnack_constant(const CoefficientField& field, const Grid& g,
                                        const std::vector<double>& scales, int n_trials,
                                        std::uint64_t seed,
                                        const HarnackGeometry& geo = HarnackGeometry::chain(),
                                        const EstimateOptions& opt = {}) {
  require(!scales.empty() && n_trials >= 1, ErrorKind::argument, "ARGUMENT",
          "need scales and at least one trial");
  const Vec y0 = detail::box_centre(g);
  const std::size_t total = scales.size() * static_cast<std::size_t>(n_trials);
  std::vector<double> ratios(total, std::numeric_limits<double>::quiet_NaN());
  for (double rho : scales) {
    require(rho > 0, ErrorKind::argument, "ARGUMENT", "scales must be positive");
    require(y0.cwiseAbs().maxCoeff() + (opt.source_spread + 1) * rho <= g.L, ErrorKind::geometry,
            "GEOMETRY", fmt::format("scale {} does not fit the grid", rho));
    require((opt.source_depth + geo.late_hi) * rho * rho < g.t1 - g.t0, ErrorKind::geometry,
            "GEOMETRY", fmt::format("scale {} does not fit the time window", rho));
  }
  parallel_for(total, [&](std::size_t idx) {
    const double rho = scales[idx / static_cast<std::size_t>(n_trials)];
    const double r2 = rho * rho;
    const std::size_t trial = idx % static_cast<std::size_t>(n_trials);
    // the same relative configuration at every scale
    auto rng = substream(seed, trial);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> nmix(1, opt.max_mixture);
    // cylinder base on the grid, leaving room for sources below it
    const long nbase = static_cast<long>(std::ceil(opt.source_depth * r2 / g.dt));
    const double base = g.time(nbase);
    std::vector<PointMass> masses;
    if (opt.anchor_trial && trial == 0) {
      masses.push_back({g.time(nbase - 1), g.require_node(y0, "source"), 1.0});
    } else {
      const int m = nmix(rng);
      for (int i = 0; i < m; ++i) {
        const double depth = u01(rng) * opt.source_depth * r2;
        long ns = nbase - 1 - static_cast<long>(std::floor(depth / g.dt));
        ns = std::clamp(ns, 0L, nbase - 1);
        const Vec pos =
            detail::snap_to_grid(g, y0 + detail::random_in_ball(rng, g.d, opt.source_spread * rho));
        masses.push_back({g.time(ns), g.require_node(pos, "source"), 0.1 + u01(rng)});
      }
    }
    const long nend = nbase + static_cast<long>(std::ceil(geo.late_hi * r2 / g.dt));
    require(nend <= g.n_steps, ErrorKind::geometry, "GEOMETRY", "cylinder exceeds time window");
    Grid w = g;
    w.t1 = g.time(nend);
    w.n_steps = nend;
    SolveOptions so;
    so.check_truncation = false;
    so.record_times = detail::window_times(w, base + geo.early_lo * r2, base + geo.early_hi * r2,
                                           opt.window_slices);
    for (double t : detail::window_times(w, base + geo.late_lo * r2, base + geo.late_hi * r2,
                                         opt.window_slices))
      so.record_times->push_back(t);
    const KernelField k = solve_forward_mixture(field, w, masses, so);
    ratios[idx] = harnack_ratio(k, base, y0, rho, geo);
  });
  double best = std::numeric_limits<double>::quiet_NaN();
  for (double r : ratios)
    if (std::isfinite(r)) best = std::isnan(best) ? r : std::max(best, r);
  if (std::isnan(best))
    fail(ErrorKind::estimation, "ESTIMATION", "all Harnack trials were degenerate");
  return best;
}

struct AdjointConstants {
  double N0_lb;  // max of sup_{C_r}|u| / mean_{C_2r}|u|
  double N0_wh;  // max of mean over the upper slab / inf_{C_r} u
};

/// Local-boundedness and weak-Harnack ratios of one adjoint solution on
/// C_2r(X0) = (t0, t0 + 4r^2) x B_2r(x0), C_r = (t0, t0 + r^2) x B_r(x0) and
/// the slab (t0 + 2r^2, t0 + 3r^2) x B_r(x0). The top time of C_2r is
/// excluded so terminal masses placed there do not enter the means.
inline AdjointConstants adjoint_ratios(const KernelField& v, double t0, const Vec& x0, double r) {
  const double r2 = r * r;
  const auto inner = slab_stats(v, t0, t0 + r2, x0, r);
  const auto outer = slab_stats(v, t0, t0 + 4 * r2, x0, 2 * r, false);
  const auto slab = slab_stats(v, t0 + 2 * r2, t0 + 3 * r2, x0, r);
  AdjointConstants c;
  c.N0_lb = outer.mean > 0 ? inner.sup / outer.mean : std::numeric_limits<double>::quiet_NaN();
  c.N0_wh = inner.inf > 0 ? slab.mean / inner.inf : std::numeric_limits<double>::quiet_NaN();
  return c;
}

/// Max over trials and scales of the adjoint ratios for random non-negative
/// adjoint solutions: mixtures of 1..max_mixture adjoint kernels whose
/// terminal points lie at or above the top of C_2r.
inline AdjointConstants estimate_adjoint_constants(const CoefficientField& field, const Grid& g,
                                                   const std::vector<double>& scales, int n_trials,
                                                   std::uint64_t seed,
                                                   const EstimateOptions& opt = {}) {
  require(!scales.empty() && n_trials >= 1, ErrorKind::argument, "ARGUMENT",
          "need scales and at least one trial");
  const Vec x0 = detail::box_centre(g);
  for (double r : scales) {
    require(r > 0, ErrorKind::argument, "ARGUMENT", "scales must be positive");
    require(x0.cwiseAbs().maxCoeff() + (opt.target_spread + 1) * r <= g.L, ErrorKind::geometry,
            "GEOMETRY", fmt::format("scale {} does not fit the grid", r));
    require((4 + opt.target_height) * r * r < g.t1 - g.t0, ErrorKind::geometry, "GEOMETRY",
            fmt::format("scale {} does not fit the time window", r));
  }
  const std::size_t total = scales.size() * static_cast<std::size_t>(n_trials);
  std::vector<AdjointConstants> out(total, {std::numeric_limits<double>::quiet_NaN(),
                                            std::numeric_limits<double>::quiet_NaN()});
  parallel_for(total, [&](std::size_t idx) {
    const double r = scales[idx / static_cast<std::size_t>(n_trials)];
    const double r2 = r * r;
    auto rng = substream(seed, idx % static_cast<std::size_t>(n_trials));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> nmix(1, opt.max_mixture);
    const double c0 = g.t0;  // cylinder base
    const long ntop = static_cast<long>(std::ceil(4 * r2 / g.dt - 1e-9));
    std::vector<PointMass> masses;
    long nmax = ntop;
    if (opt.anchor_trial && idx % static_cast<std::size_t>(n_trials) == 0) {
      masses.push_back({g.time(ntop), g.require_node(x0, "target"), 1.0});
    } else {
      const int m = nmix(rng);
      for (int i = 0; i < m; ++i) {
        const long nt =
            ntop + static_cast<long>(std::floor(u01(rng) * opt.target_height * r2 / g.dt));
        nmax = std::max(nmax, nt);
        const Vec pos =
            detail::snap_to_grid(g, x0 + detail::random_in_ball(rng, g.d, opt.target_spread * r));
        masses.push_back({g.time(nt), g.require_node(pos, "target"), 0.1 + u01(rng)});
      }
    }
    require(nmax <= g.n_steps, ErrorKind::geometry, "GEOMETRY", "targets exceed time window");
    Grid w = g;
    w.t1 = g.time(nmax);
    w.n_steps = nmax;
    SolveOptions so;
    so.check_truncation = false;
    so.record_times = detail::window_times(g, c0, c0 + r2, opt.window_slices);
    for (double t : detail::window_times(g, c0 + r2, g.time(ntop), 3 * opt.window_slices))
      so.record_times->push_back(t);
    const KernelField v = solve_adjoint_mixture(field, w, masses, so);
    out[idx] = adjoint_ratios(v, c0, x0, r);
  });
  AdjointConstants best{std::numeric_limits<double>::quiet_NaN(),
                        std::numeric_limits<double>::quiet_NaN()};
  for (const auto& c : out) {
    if (std::isfinite(c.N0_lb)) best.N0_lb = std::isnan(best.N0_lb) ? c.N0_lb : std::max(best.N0_lb, c.N0_lb);
    if (std::isfinite(c.N0_wh)) best.N0_wh = std::isnan(best.N0_wh) ? c.N0_wh : std::max(best.N0_wh, c.N0_wh);
  }
  if (std::isnan(best.N0_lb) || std::isnan(best.N0_wh))
    fail(ErrorKind::estimation, "ESTIMATION", "all adjoint trials were degenerate");
  return best;
}

struct SigmaAverage {
  double mean_u;                 // mean over sigma of u^(sigma)(t, x)
  double mean_bound;             // mean over sigma of the lower factor / N1
  std::vector<double> sigmas;
  std::vector<double> u;
};

/// u^(sigma)(t, x) = int_{B_r(y)} Gamma(t, x, sigma, z) dz at 8 midpoint
/// sigmas in [s + 2r^2, s + 3r^2] (snapped to grid times), from one adjoint
/// solve at (t, x), against the chained lower factor divided by N1.
inline SigmaAverage sigma_average(const CoefficientField& field, const Grid& g, double t,
                                  const Vec& x, double s, const Vec& y,
                                  const HarnackConstants& c, int n_sigma = 8) {
  const double r = std::sqrt(t - s) / 2;
  const double r2 = r * r;
  SigmaAverage out;
  for (int i = 0; i < n_sigma; ++i) {
    const double target = s + 2 * r2 + r2 * (i + 0.5) / n_sigma;
    const long n = std::lround((target - g.t0) / g.dt);
    out.sigmas.push_back(g.time(n));
  }
  SolveOptions so;
  so.record_times = out.sigmas;
  const KernelField adj = solve_adjoint(field, g, t, x, so);
  CompensatedSum su, sb;
  for (double sg : out.sigmas) {
    const double val = ball_integral(adj, sg, y, r);
    out.u.push_back(val);
    su.add(val);
    const ChainPlan p = chain_plan(x, y, t, s, std::clamp(sg, s + 2 * r2, s + 3 * r2));
    const double f = p.case_tag == ChainCase::chain ? chain_lower_factor(p, c.N2).closed_form
                                                    : direct_lower_factor(p, c.N_ks);
    sb.add(f / c.N1_sy);
  }
  out.mean_u = su.value() / n_sigma;
  out.mean_bound = sb.value() / n_sigma;
  return out;
}

}  // namespace pklab
