#pragma once

#include "pklab/bounds.hpp"
#include "pklab/chain.hpp"
#include "pklab/io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace pklab {

struct KernelSample {
  double dt = 0;
  double dist = 0;
  double gamma = 0;
  std::size_t source = 0;  // index into the kernel list
  double t = 0;            // free time of the sample
  Vec x;                   // free point of the sample
};

struct KernelSampleSet {
  std::vector<KernelSample> rows;
  std::vector<std::string> labels;    // per source
  std::vector<std::string> grid_ids;  // per source
  int d = 1;

  std::size_t size() const noexcept { return rows.size(); }
  bool empty() const noexcept { return rows.empty(); }
  double max_dt() const {
    double m = 0;
    for (const auto& r : rows) m = std::max(m, r.dt);
    return m;
  }
};

/// Offsets from the anchor point crossed with elapsed times t - s > 0.
struct KernelSampleSpec {
  std::vector<Vec> offsets;
  std::vector<double> elapsed;
};

inline std::string grid_id(const Grid& g) {
  return fmt::format("d{}_L{}_nx{}_dt{}", g.d, g.L, g.nx, g.dt);
}

inline constexpr int boundary_exclusion_cells = 3;

/// Reads kernel values at anchor + offset, elapsed time dt from the anchor
/// (later for forward kernels, earlier for adjoint ones). Nodes within
/// boundary_exclusion_cells of the boundary are skipped. Repeated requests
/// for the same (source, t, x) are kept once.
inline KernelSampleSet sample_kernel(const std::vector<const KernelField*>& kernels,
                                     const KernelSampleSpec& spec,
                                     const std::vector<std::string>& labels = {}) {
  KernelSampleSet out;
  require(!kernels.empty(), ErrorKind::argument, "ARGUMENT", "no kernels to sample");
  out.d = kernels.front()->grid.d;
  for (std::size_t src = 0; src < kernels.size(); ++src) {
    const KernelField& k = *kernels[src];
    require(k.grid.d == out.d, ErrorKind::argument, "ARGUMENT", "kernels of mixed dimension");
    out.labels.push_back(src < labels.size() ? labels[src] : fmt::format("kernel{}", src));
    out.grid_ids.push_back(grid_id(k.grid));
    const Vec anchor = k.anchor_point();
    const double sign = k.direction == KernelDirection::forward ? 1.0 : -1.0;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (double dt : spec.elapsed) {
      require(dt > 0, ErrorKind::argument, "ARGUMENT", fmt::format("elapsed time {} must be positive", dt));
      const double t = k.anchor_time + sign * dt;
      const std::size_t slice = k.require_slice(t);
      for (const Vec& off : spec.offsets) {
        require(off.size() == out.d, ErrorKind::argument, "ARGUMENT", "offset dimension");
        const Vec x = anchor + off;
        const std::size_t node = k.grid.require_node(x, "sample point");
        if (k.grid.boundary_distance(node) < boundary_exclusion_cells) continue;
        if (!seen.insert({slice, node}).second) continue;
        KernelSample r;
        r.dt = std::abs(k.times[slice] - k.anchor_time);
        r.dist = (k.grid.point(node) - anchor).norm();
        r.gamma = k.slice(slice)[node];
        r.source = src;
        r.t = k.times[slice];
        r.x = k.grid.point(node);
        out.rows.push_back(std::move(r));
      }
    }
  }
  return out;
}

/// One point of a feasibility frontier, in the classical convention of its side:
/// upper Gamma <= N dt^{-d/2} exp(-dist^2 / (kappa dt)); lower
/// Gamma >= N^{-1} dt^{-d/2} exp(-kappa dist^2 / dt).
struct FrontierPoint {
  double kappa = 0;
  double N_min = 0;
  bool feasible = true;
};

namespace detail {

inline void check_kappa_grid(const std::vector<double>& grid) {
  require(!grid.empty(), ErrorKind::argument, "ARGUMENT", "empty kappa grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(grid[i] > 0, ErrorKind::argument, "ARGUMENT", "kappa values must be positive");
    require(i == 0 || grid[i] > grid[i - 1], ErrorKind::argument, "ARGUMENT",
            "kappa grid must be ascending");
  }
}

inline bool envelope_holds(const KernelSampleSet& s, const GaussianEnvelope& e) {
  for (const auto& r : s.rows) {
    const double b = e(r.dt, r.dist);
    if (e.side == EnvelopeSide::upper ? r.gamma > b : r.gamma < b) return false;
  }
  return true;
}

// Moves N up by ulps until the envelope evaluated as stored holds on every row.
inline double settle(const KernelSampleSet& s, EnvelopeSide side, double N, double kappa, int d) {
  for (int i = 0; i < 64; ++i) {
    if (envelope_holds(s, GaussianEnvelope::from_classical_convention(side, N, kappa, s.max_dt(), d)))
      return N;
    N = std::nextafter(N, std::numeric_limits<double>::infinity());
  }
  fail(ErrorKind::estimation, "ESTIMATION", "frontier value does not settle");
}

}  // namespace detail

/// N_min(kappa) = max over rows of gamma dt^{d/2} exp(dist^2 / (kappa dt)).
inline std::vector<FrontierPoint> fit_upper(const KernelSampleSet& s,
                                            const std::vector<double>& kappa_grid) {
  require(!s.empty(), ErrorKind::argument, "ARGUMENT", "no samples to fit");
  detail::check_kappa_grid(kappa_grid);
  std::vector<FrontierPoint> out(kappa_grid.size());
  parallel_for(kappa_grid.size(), [&](std::size_t i) {
    const double kappa = kappa_grid[i];
    // log space: far rows pair a vanishing gamma with a huge exponential
    double logN = -std::numeric_limits<double>::infinity();
    for (const auto& r : s.rows)
      if (r.gamma > 0)
        logN = std::max(logN, std::log(r.gamma) + 0.5 * s.d * std::log(r.dt) +
                                  r.dist * r.dist / (kappa * r.dt));
    const double N = std::exp(logN);
    out[i].kappa = kappa;
    out[i].feasible = std::isfinite(N) && N > 0;
    out[i].N_min = out[i].feasible ? detail::settle(s, EnvelopeSide::upper, N, kappa, s.d)
                                   : (N > 0 ? N : 0.0);
  });
  return out;
}

/// N_min(kappa1) = 1 / min over rows of gamma dt^{d/2} exp(kappa1 dist^2 / dt).
/// Infeasible at every kappa1 once some gamma vanishes.
inline std::vector<FrontierPoint> fit_lower(const KernelSampleSet& s,
                                            const std::vector<double>& kappa_grid) {
  require(!s.empty(), ErrorKind::argument, "ARGUMENT", "no samples to fit");
  detail::check_kappa_grid(kappa_grid);
  std::vector<FrontierPoint> out(kappa_grid.size());
  parallel_for(kappa_grid.size(), [&](std::size_t i) {
    const double kappa = kappa_grid[i];
    double logm = std::numeric_limits<double>::infinity();
    for (const auto& r : s.rows)
      logm = std::min(logm, r.gamma > 0 ? std::log(r.gamma) + 0.5 * s.d * std::log(r.dt) +
                                               kappa * r.dist * r.dist / r.dt
                                         : -std::numeric_limits<double>::infinity());
    const double N = std::exp(-logm);
    out[i].kappa = kappa;
    out[i].feasible = std::isfinite(N);
    out[i].N_min = out[i].feasible ? detail::settle(s, EnvelopeSide::lower, N, kappa, s.d)
                                   : std::numeric_limits<double>::infinity();
  });
  return out;
}

inline GaussianEnvelope envelope_from_frontier(const FrontierPoint& p, EnvelopeSide side, double T,
                                               int d) {
  require(p.feasible, ErrorKind::argument, "ARGUMENT",
          fmt::format("frontier point at kappa {} is infeasible", p.kappa));
  return GaussianEnvelope::from_classical_convention(side, p.N_min, p.kappa, T, d);
}

inline const char* convention_name(EnvelopeSide side) {
  return side == EnvelopeSide::upper ? "classical_upper:exp(-dist^2/(kappa*dt))"
                                     : "classical_lower:exp(-kappa*dist^2/dt)";
}

/// CSV: kappa, N_min, convention. Infeasible points carry N_min = inf.
inline void write_frontier_csv(std::ostream& os, const std::vector<FrontierPoint>& f,
                               EnvelopeSide side) {
  CsvWriter w(os, {"kappa", "N_min", "convention"});
  for (const auto& p : f)
    w.row_text({fmt17(p.kappa), p.feasible ? fmt17(p.N_min) : std::string("inf"),
                convention_name(side)});
}

struct Violation {
  std::size_t row = 0;
  double dt = 0;
  double dist = 0;
  double gamma = 0;
  double bound = 0;
  EnvelopeSide side = EnvelopeSide::upper;
  double t = 0;
  Vec x;
};

struct ViolationReport {
  std::vector<Violation> violations;
  std::size_t checked = 0;
  bool holds() const noexcept { return violations.empty(); }
};

/// Every row outside lower (1 - tol_rel) <= gamma <= upper (1 + tol_rel).
inline ViolationReport sandwich_check(const KernelSampleSet& s, const GaussianEnvelope& upper,
                                      const GaussianEnvelope& lower, double tol_rel) {
  ViolationReport rep;
  if (s.empty()) return rep;
  require(upper.side == EnvelopeSide::upper && lower.side == EnvelopeSide::lower,
          ErrorKind::argument, "ARGUMENT", "envelope sides swapped");
  require(upper.T >= s.max_dt() && lower.T >= s.max_dt(), ErrorKind::precondition,
          "PRECONDITION",
          fmt::format("envelope horizon below sampled dt {}", s.max_dt()));
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& r = s.rows[i];
    const double hi = upper(r.dt, r.dist), lo = lower(r.dt, r.dist);
    if (r.gamma > hi * (1 + tol_rel))
      rep.violations.push_back({i, r.dt, r.dist, r.gamma, hi, EnvelopeSide::upper, r.t, r.x});
    if (r.gamma < lo * (1 - tol_rel))
      rep.violations.push_back({i, r.dt, r.dist, r.gamma, lo, EnvelopeSide::lower, r.t, r.x});
  }
  rep.checked = s.rows.size();
  return rep;
}

/// CSV: dt, dist, gamma, bound, side.
inline void write_violation_csv(std::ostream& os, const ViolationReport& rep) {
  CsvWriter w(os, {"dt", "dist", "gamma", "bound", "side"});
  for (const auto& v : rep.violations)
    w.row_text({fmt17(v.dt), fmt17(v.dist), fmt17(v.gamma), fmt17(v.bound),
                v.side == EnvelopeSide::upper ? "upper" : "lower"});
}

/// Least-squares slope of log gamma against log dt.
inline double loglog_slope(const std::vector<double>& dt, const std::vector<double>& gamma) {
  require(dt.size() == gamma.size(), ErrorKind::argument, "ARGUMENT", "length mismatch");
  std::set<double> distinct(dt.begin(), dt.end());
  require(distinct.size() >= 4, ErrorKind::argument, "ARGUMENT",
          fmt::format("need at least 4 distinct times, got {}", distinct.size()));
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < dt.size(); ++i) {
    require(dt[i] > 0 && gamma[i] > 0, ErrorKind::argument, "ARGUMENT",
            "on-diagonal values and times must be positive");
    lx.push_back(std::log(dt[i]));
    ly.push_back(std::log(gamma[i]));
  }
  return ls_slope(lx, ly);
}

/// Slope of log Gamma(t_i, y, s, y) against log(t_i - s) for a forward kernel.
inline double ondiag_scaling(const KernelField& k, const std::vector<double>& times) {
  require(k.direction == KernelDirection::forward, ErrorKind::argument, "ARGUMENT",
          "on-diagonal scaling reads a forward kernel");
  std::vector<double> dt, g;
  for (double t : times) {
    dt.push_back(t - k.anchor_time);
    g.push_back(k.value_at(t, k.anchor_node));
  }
  return loglog_slope(dt, g);
}

/// Geometric times s + dt_min q^i, i = 0..n-1, snapped to the grid.
inline std::vector<double> geometric_times(const Grid& g, double s, double dt_min, double dt_max,
                                           int n) {
  require(n >= 2 && dt_max > dt_min && dt_min > 0, ErrorKind::argument, "ARGUMENT",
          "bad geometric time range");
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    const double t = s + dt_min * std::pow(dt_max / dt_min, static_cast<double>(i) / (n - 1));
    const double snapped = g.time(std::lround((t - g.t0) / g.dt));
    if (out.empty() || snapped > out.back()) out.push_back(snapped);
  }
  return out;
}

/// Grids and trial counts for measure_constants.
struct MeasureOptions {
  double L = 2.0;          // half-width of the Harnack and adjoint grids
  int nx = 401;
  std::vector<double> scales{0.1, 0.2};
  int trials = 8;
  double rho_sy = 0.2;     // mass-floor scale
  double L_sy = 4.0;
  int nx_sy = 801;
  int sy_nt = 3;
  int sy_nx = 5;
  double R0 = 1.0;
  std::uint64_t seed = 1;
};

/// Empirical constants at desk scale: N2 and N_ks from forward Harnack
/// ratios, N0_lb / N0_wh from adjoint ratios, N1_sy from the mass floor.
inline HarnackConstants measure_constants(const CoefficientField& field, const MeasureOptions& o) {
  require(!o.scales.empty(), ErrorKind::argument, "ARGUMENT", "need at least one scale");
  const int d = field.dimension();
  const double Lambda = field.Lambda();
  const double smax = *std::max_element(o.scales.begin(), o.scales.end());
  const EstimateOptions eo;
  auto window = [&](double height) { return build_grid(d, o.L, o.nx, 0.0, 1.03 * height * smax * smax, 0.5, Lambda); };
  HarnackConstants c;
  const auto chain = HarnackGeometry::chain(), two = HarnackGeometry::two_step();
  c.N2 = estimate_harnack_constant(field, window(eo.source_depth + chain.late_hi), o.scales, o.trials,
                                   o.seed, chain, eo);
  c.N_ks = estimate_harnack_constant(field, window(eo.source_depth + two.late_hi), o.scales, o.trials,
                                     o.seed, two, eo);
  const auto a = estimate_adjoint_constants(field, window(4 + eo.target_height), o.scales, o.trials,
                                            o.seed, eo);
  c.N0_lb = a.N0_lb;
  c.N0_wh = a.N0_wh;
  const double r2 = o.rho_sy * o.rho_sy;
  const Grid gs = build_grid(d, o.L_sy, o.nx_sy, 0.0, r2, 0.5, Lambda);
  const Vec y = Vec::Zero(d);
  c.N1_sy = sy_mass_check(field, gs, o.rho_sy, 0.0, y,
                          sy_probe_lattice(gs, o.rho_sy, 0.0, y, o.sy_nt, o.sy_nx))
                .empirical_N1;
  c.R0 = o.R0;
  return c;
}

}  // namespace pklab
