#include "oracles.hpp"
#include "pklab/bounds.hpp"
#include "pklab/chain.hpp"
#include "pklab/diffusion.hpp"
#include "pklab/envelope.hpp"
#include "pklab/io.hpp"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace pklab;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Context {
  std::filesystem::path csv_dir;
  std::uint64_t seed = 20261014;

  std::ofstream csv(const std::string& name) const { return open_output((csv_dir / name).string()); }
};

CoefficientField identity_field(int d) {
  FieldParams p;
  p.d = d;
  return make_field(FieldKind::constant, p);
}

// a(x) = 1 + sin(x)/2 in d = 1, the mean of sin(x_i)/2 over coordinates in d = 2
CoefficientField sine_field(int d = 1, double offdiag = 0.0) {
  FieldParams p;
  p.d = d;
  p.lambda = 0.5;
  p.Lambda = 1.5;
  p.amp = 0.5 - std::abs(offdiag);
  p.offdiag = offdiag;
  p.label = d == 1 ? "sine" : "sine2d";
  return make_field(FieldKind::smooth_spatial, p);
}

CoefficientField time_field() {
  FieldParams p;
  p.lambda = 0.5;
  p.Lambda = 1.5;
  p.base = 1.0;
  p.amp = 0.5;
  p.freq = 10.0;
  p.label = "time_only";
  return make_field(FieldKind::time_only, p);
}

double heat_at(const KernelField& k, double t, const Vec& x, const Vec& y) {
  return oracle::heat_kernel(t - k.anchor_time, (x - y).squaredNorm(), 1.0, k.grid.d);
}

// ---------------------------------------------------------------------------

Outcome exact_kernel(const Context& ctx) {
  Outcome o;
  auto csv = ctx.csv("c1_exact_kernel.csv");
  CsvWriter w(csv, {"d", "nx", "dx", "ondiag_rel_err", "core_sup_rel_err"});
  for (int d : {1, 2}) {
    const double L = d == 1 ? 4.0 : 3.0;
    const std::vector<int> ladder = d == 1 ? std::vector<int>{101, 201, 401} : std::vector<int>{41, 81, 161};
    std::vector<double> ondiag;
    double core = 0;
    for (int nx : ladder) {
      const Grid g = build_grid(d, L, nx, 0.0, 0.1, 0.5, 1.0);
      SolveOptions opt;
      opt.record_times = std::vector<double>{0.1};
      const Vec y = Vec::Zero(d);
      const auto k = solve_forward(identity_field(d), g, 0.0, y, opt);
      const double exact0 = heat_at(k, 0.1, y, y);
      ondiag.push_back(std::abs(k.value_at(0.1, y) - exact0) / exact0);
      const auto slice = k.slice(k.require_slice(0.1));
      const double radius = 2 * std::sqrt(0.1);
      core = 0;
      for (std::size_t n = 0; n < g.n_nodes(); ++n) {
        const Vec x = g.point(n);
        if (x.norm() > radius) continue;
        const double e = heat_at(k, 0.1, x, y);
        core = std::max(core, std::abs(slice[n] - e) / e);
      }
      w.row({static_cast<double>(d), static_cast<double>(nx), g.dx, ondiag.back(), core});
    }
    const double p1 = std::log2(ondiag[0] / ondiag[1]), p2 = std::log2(ondiag[1] / ondiag[2]);
    const bool ok = ondiag.back() <= 0.01 && core <= 0.03 && std::min(p1, p2) >= 1.8;
    o.pass = o.pass && ok;
    o.detail += fmt::format("d={} nx={}: ondiag_rel={:.3e} core_sup_rel={:.3e} order={:.3f},{:.3f}; ", d,
                            ladder.back(), ondiag.back(), core, p1, p2);
  }
  return o;
}

// Spectrum in [lo, hi]. Every eighth draw is diagonal with entries on the
// window edges, which stays exactly admissible; a rotated edge eigenvalue
// would land an ulp outside the window.
Mat random_spd(std::mt19937_64& rng, int d, double lo, double hi, bool edges) {
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  if (edges || lo == hi) {
    Mat a = Mat::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      const double c = u(rng);
      a(i, i) = c < 0.4 ? lo : c < 0.8 ? hi : lo + (hi - lo) * u(rng);
    }
    return a;
  }
  Mat g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = n(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  const Mat q = qr.householderQ();
  Vec ev(d);
  for (int i = 0; i < d; ++i) ev(i) = lo + (hi - lo) * u(rng);
  const Mat a = q * ev.asDiagonal() * q.transpose();
  return 0.5 * (a + a.transpose());
}

Outcome barrier(const Context& ctx) {
  auto rng = substream(ctx.seed, 2);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = std::numeric_limits<double>::infinity();
  int negative = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const int d = 1 + i % 3;
    const double Lam = 1.5, lam = (i / 3) % 2 ? Lam : Lam / 3;
    const Mat A = random_spd(rng, d, lam, Lam, i % 8 == 0);
    Vec v(d);
    for (int a = 0; a < d; ++a) v(a) = 6 * u(rng) - 3;
    const double s = std::pow(10.0, -3 + 5 * u(rng));
    const double r = barrier_residual(A, v, s, d, lam, Lam);
    worst = std::min(worst, r);
    negative += r < -1e-12;
  }
  return {negative == 0, fmt::format("trials={} below_-1e-12={} min_residual={:.3e}", trials, negative, worst)};
}

// Adjoint kernels at (t, x) for the ball-integral criteria, with slices at
// every time the samples need.
struct BallSetup {
  CoefficientField field;
  Grid grid;
  double t;
  std::vector<Vec> anchors;
};

std::vector<BallSetup> ball_setups() {
  std::vector<BallSetup> out;
  for (auto f : {identity_field(1), sine_field()}) {
    const double t = 0.4;
    Grid g = build_grid(1, 7.0, 701, 0.0, t, 0.5, f.Lambda());
    out.push_back({f, g, t, {make_vec({-0.6}), make_vec({0.0}), make_vec({0.6})}});
  }
  return out;
}

const std::vector<double> ball_offsets{-1.5, -1.0, -0.6, -0.3, -0.1, 0.0, 0.1, 0.3, 0.6, 1.0, 1.5};

Outcome lemma21(const Context& ctx) {
  auto csv = ctx.csv("c3_lemma21.csv");
  CsvWriter w(csv, {"field", "x", "y", "r", "elapsed", "ball_integral", "bound"});
  std::size_t checked = 0, bad = 0;
  double worst = 0;
  for (const auto& b : ball_setups()) {
    const Grid& g = b.grid;
    std::vector<double> elapsed;
    for (int i = 1; i <= 8; ++i) elapsed.push_back(0.05 * i);
    SolveOptions opt;
    std::vector<double> rec;
    for (double e : elapsed) rec.push_back(g.time(std::lround((b.t - e - g.t0) / g.dt)));
    opt.record_times = rec;
    for (const Vec& x0 : b.anchors) {
      const Vec x = detail::snap_to_grid(g, x0);
      const auto k = solve_adjoint(b.field, g, b.t, x, opt);
      for (double tau : rec)
        for (double off : ball_offsets)
          for (double r : {0.1, 0.2}) {
            const Vec y = detail::snap_to_grid(g, x + make_vec({off}));
            const double lhs = ball_integral(k, tau, y, r);
            const double bound = lemma21_bound(r, b.t - tau, (x - y).norm(), 1, b.field.lambda(), b.field.Lambda());
            ++checked;
            bad += lhs > bound * 1.03;
            worst = std::max(worst, lhs / bound);
            w.row_text({b.field.label(), fmt17(x(0)), fmt17(y(0)), fmt17(r), fmt17(b.t - tau), fmt17(lhs),
                        fmt17(bound)});
          }
    }
  }
  return {bad == 0, fmt::format("samples={} violations={} max_ratio={:.4f}", checked, bad, worst)};
}

Outcome quarter_window(const Context& ctx) {
  auto csv = ctx.csv("c4_quarter_window.csv");
  CsvWriter w(csv, {"field", "x", "y", "span", "averaged_density", "bound"});
  std::size_t checked = 0, bad = 0;
  double worst = 0;
  for (const auto& b : ball_setups()) {
    const Grid& g = b.grid;
    const double lam = b.field.lambda(), Lam = b.field.Lambda();
    for (double span : {0.1, 0.2, 0.4}) {
      const double s = b.t - span;
      const double r = std::sqrt(span) / 2;
      std::vector<double> taus;
      for (int i = 0; i < 8; ++i) taus.push_back(g.time(std::lround((s + span / 4 * (i + 0.5) / 8 - g.t0) / g.dt)));
      SolveOptions opt;
      opt.record_times = taus;
      for (const Vec& x0 : b.anchors) {
        const Vec x = detail::snap_to_grid(g, x0);
        const auto k = solve_adjoint(b.field, g, b.t, x, opt);
        for (double off : ball_offsets) {
          const Vec y = detail::snap_to_grid(g, x + make_vec({off}));
          CompensatedSum acc;
          for (double tau : taus) acc.add(ball_integral(k, tau, y, r));
          const double lhs = acc.value() / 8 / (unit_ball_volume(1) * r);
          const double dist = (x - y).norm();
          const double bound = averaged_barrier_amplitude(1, lam, Lam) * std::pow(span, -0.5) *
                               std::exp(-dist * dist / (5 * Lam * span));
          ++checked;
          bad += lhs > bound * 1.03;
          worst = std::max(worst, lhs / bound);
          w.row_text({b.field.label(), fmt17(x(0)), fmt17(y(0)), fmt17(span), fmt17(lhs), fmt17(bound)});
        }
      }
    }
  }
  return {bad == 0, fmt::format("samples={} violations={} max_ratio={:.4f}", checked, bad, worst)};
}

Outcome sy_floor(const Context& ctx) {
  auto csv = ctx.csv("c5_sy_mass.csv");
  CsvWriter w(csv, {"rho", "empirical_N1", "min_integral"});
  std::vector<double> n1;
  double lowest = std::numeric_limits<double>::infinity();
  const auto f = identity_field(1);
  for (double rho : {0.1, 0.2, 0.4}) {
    const Grid g = build_grid(1, 6.0, 2401, 0.0, rho * rho, 0.5, 1.0);
    const Vec y = make_vec({0});
    const auto r = sy_mass_check(f, g, rho, 0.0, y, sy_probe_lattice(g, rho, 0.0, y, 3, 5));
    n1.push_back(r.empirical_N1);
    lowest = std::min(lowest, r.min_integral());
    w.row({rho, r.empirical_N1, r.min_integral()});
  }
  const double lo = *std::min_element(n1.begin(), n1.end()), hi = *std::max_element(n1.begin(), n1.end());
  const double spread = hi / lo - 1;
  const bool ok = std::isfinite(hi) && spread <= 0.10 && lowest >= 0.5;
  return {ok, fmt::format("N1={:.4f},{:.4f},{:.4f} spread={:.4f} min_probe_integral={:.4f}", n1[0], n1[1], n1[2],
                          spread, lowest)};
}

Outcome chain_geometry(const Context& ctx) {
  auto rng = substream(ctx.seed, 6);
  std::uniform_real_distribution<double> u(0, 1);
  int broken = 0, factor_bad = 0, direct_bad = 0, chains = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const int d = 1 + i % 3;
    Vec x(d), y(d);
    for (int a = 0; a < d; ++a) {
      x(a) = 6 * u(rng) - 3;
      y(a) = 6 * u(rng) - 3;
    }
    // every fourth pair is close, so both cases are exercised
    if (i % 4 == 0) x = y + 0.05 * (x - y);
    const double s = 2 * u(rng) - 1;
    const double t = s + 0.01 + 2 * u(rng);
    const double r2 = (t - s) / 4;
    const double sigma = s + 2 * r2 + u(rng) * r2;
    const auto p = chain_plan(x, y, t, s, sigma);
    broken += !check_chain_invariants(p).ok();
    const double dist2 = (x - y).squaredNorm();
    if (p.case_tag == ChainCase::chain) {
      ++chains;
      const auto f = chain_lower_factor(p, 1.01 + 10 * u(rng));
      factor_bad += !(f.factor >= f.closed_form);
    } else {
      direct_bad += !(dist2 <= 7 * (t - s) / 16);
    }
  }
  return {broken + factor_bad + direct_bad == 0,
          fmt::format("trials={} chain_cases={} invariant_failures={} factor_below_closed_form={} "
                      "direct_trigger_mismatches={}",
                      trials, chains, broken, factor_bad, direct_bad)};
}

template <class T>
bool nonincreasing_where_feasible(const std::vector<T>& f) {
  bool seen = false;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& p : f) {
    if (!p.feasible) {
      if (seen) return false;  // feasibility is closed under increasing kappa
      continue;
    }
    seen = true;
    if (p.N_min > prev) return false;
    prev = p.N_min;
  }
  return true;
}

Outcome sandwich(const Context& ctx) {
  Outcome o;
  const double T = 0.4;
  for (const auto& f : {identity_field(1), sine_field()}) {
    MeasureOptions mo;
    mo.R0 = std::sqrt(T);
    mo.seed = ctx.seed;
    const auto hc = measure_constants(f, mo);
    const auto upper = upper_envelope(1, f.lambda(), f.Lambda(), hc.N0(), T);
    const auto lower = lower_envelope(1, hc);

    const Grid g = build_grid(1, 7.0, 701, 0.0, T, 0.5, f.Lambda());
    const auto times = geometric_times(g, 0.0, 0.01, T, 10);
    SolveOptions opt;
    opt.record_times = times;
    std::vector<KernelField> ks;
    for (double y : {0.0, 0.5}) ks.push_back(solve_forward(f, g, 0.0, make_vec({y}), opt));
    KernelSampleSpec spec;
    for (int i = -40; i <= 40; ++i) spec.offsets.push_back(make_vec({0.04 * i}));
    spec.elapsed = times;
    const auto samples = sample_kernel({&ks[0], &ks[1]}, spec, {f.label(), f.label()});
    const auto rep = sandwich_check(samples, upper, lower, 0.0);
    {
      auto os = ctx.csv(fmt::format("c7_violations_{}.csv", f.label()));
      write_violation_csv(os, rep);
    }
    const auto up = fit_upper(samples, {1, 1.5, 2, 3, 4, 5, 6, 8});
    const auto lo = fit_lower(samples, {0.125, 0.25, 0.5, 1, 2, 4, 8});
    {
      auto os = ctx.csv(fmt::format("c7_frontier_upper_{}.csv", f.label()));
      write_frontier_csv(os, up, EnvelopeSide::upper);
    }
    {
      auto os = ctx.csv(fmt::format("c7_frontier_lower_{}.csv", f.label()));
      write_frontier_csv(os, lo, EnvelopeSide::lower);
    }
    const bool mono = nonincreasing_where_feasible(up) && nonincreasing_where_feasible(lo);
    o.pass = o.pass && rep.holds() && mono;
    o.detail += fmt::format(
        "{}: N0={:.4g} N2={:.4g} N_ks={:.4g} N1={:.4g} samples={} violations={} frontier_monotone={}; ",
        f.label(), hc.N0(), hc.N2, hc.N_ks, hc.N1_sy, rep.checked, rep.violations.size(), mono);
  }
  return o;
}

Outcome ondiag(const Context& ctx) {
  Outcome o;
  auto csv = ctx.csv("c8_ondiag.csv");
  CsvWriter w(csv, {"d", "dt", "gamma"});
  for (int d : {1, 2}) {
    const auto f = sine_field(d, d == 2 ? 0.1 : 0.0);
    const Grid g = d == 1 ? build_grid(1, 7.0, 701, 0.0, 0.4, 0.5, f.Lambda())
                          : build_grid(2, 6.5, 261, 0.0, 0.4, 0.5, f.Lambda());
    const auto times = geometric_times(g, 0.0, 0.05, 0.4, 8);
    SolveOptions opt;
    opt.record_times = times;
    const Vec y = Vec::Zero(d);
    const auto k = solve_forward(f, g, 0.0, y, opt);
    for (double t : times) w.row({static_cast<double>(d), t, k.value_at(t, y)});
    const double slope = ondiag_scaling(k, times);
    const bool ok = std::abs(slope + 0.5 * d) <= 0.1;
    o.pass = o.pass && ok;
    o.detail += fmt::format("d={} slope={:.4f} (target {}); ", d, slope, -0.5 * d);
  }
  return o;
}

Outcome monte_carlo(const Context& ctx) {
  Outcome o;
  struct Case {
    CoefficientField f;
    double limit;
  };
  const double t = 0.1;
  int idx = 0;
  for (const auto& c : {Case{identity_field(1), 0.01}, Case{sine_field(), 0.05}, Case{time_field(), 0.05}}) {
    const Grid g = build_grid(1, 4.0, 401, 0.0, t, 0.5, c.f.Lambda());
    const Vec y = make_vec({0});
    const auto k = solve_adjoint(c.f, g, t, y);
    const auto ens = simulate(c.f, 0.0, y, t, 1000000, 200, ctx.seed + idx++);
    const auto cmp = density_compare(ens, k, 100, c.f.Lambda());
    {
      auto os = ctx.csv(fmt::format("c9_histogram_{}.csv", c.f.label()));
      write_histogram_csv(os, cmp);
    }
    o.pass = o.pass && cmp.tv <= c.limit;
    o.detail += fmt::format("{}: tv={:.4g} (limit {}); ", c.f.label(), cmp.tv, c.limit);
  }
  return o;
}

CoefficientField checkerboard(int d, double cell) {
  FieldParams p;
  p.d = d;
  p.lambda = 0.5;
  p.Lambda = 1.5;
  p.cell = cell;
  return make_field(FieldKind::checkerboard, p);
}

std::string slab_bytes(const KernelField& k) {
  std::ostringstream os;
  write_kernel_slab(os, k);
  return os.str();
}

Outcome discrete_structure(const Context& ctx) {
  double ck = 0, dual = 0, rows = 0;
  {
    const Grid g = build_grid(1, 4.0, 81, 0.0, 0.1, 0.5, 1.0);
    ck = std::max(ck, chapman_kolmogorov_check(identity_field(1), g, 0.0, make_vec({0}), g.time(20), g.t1));
  }
  {
    const auto f = sine_field();
    const Grid g = build_grid(1, 4.0, 81, 0.0, 0.1, 0.5, f.Lambda());
    ck = std::max(ck, chapman_kolmogorov_check(f, g, 0.0, make_vec({0.5}), g.time(31), g.t1));
  }
  {
    const auto f = time_field();
    const Grid g = build_grid(1, 4.0, 81, 0.0, 0.1, 0.5, f.Lambda());
    ck = std::max(ck, chapman_kolmogorov_check(f, g, 0.0, make_vec({0}), g.time(17), g.t1));
  }
  {
    const auto f = checkerboard(2, 0.3);
    const Grid g = build_grid(2, 3.0, 41, 0.0, 0.05, 0.5, f.Lambda());
    ck = std::max(ck, chapman_kolmogorov_check(f, g, 0.0, make_vec({0, 0}), g.time(5), g.t1, 7));
  }
  for (int which = 0; which < 4; ++which) {
    const int d = which >= 2 ? 2 : 1;
    const auto f = which == 0 ? identity_field(1) : which == 1 ? sine_field() : which == 2 ? checkerboard(2, 0.3)
                                                                                         : sine_field(2, 0.1);
    const Grid g = build_grid(d, 3.0, d == 1 ? 121 : 41, 0.0, 0.1, 0.5, f.Lambda());
    SolveOptions opt;
    opt.check_truncation = false;
    const Vec y = d == 1 ? make_vec({-0.25}) : make_vec({-0.3, 0.15});
    const Vec x = d == 1 ? make_vec({0.2}) : make_vec({0.3, 0.0});
    const double s = g.time(3), t = g.time(g.n_steps - 2);
    const double a = solve_forward(f, g, s, y, opt).value_at(t, x);
    const double b = solve_adjoint(f, g, t, x, opt).value_at(s, y);
    dual = std::max(dual, std::abs(a - b) / std::max(1.0, std::abs(a)));
  }
  for (const auto& f : {sine_field(), time_field(), checkerboard(1, 0.25)}) {
    const Grid g = build_grid(1, 4.0, 201, 0.0, 0.1, 0.5, f.Lambda());
    const auto adj = solve_adjoint(f, g, 0.1, make_vec({0.32}));
    for (std::size_t k = 0; k < adj.n_slices(); ++k) rows = std::max(rows, std::abs(slice_mass(adj, k) - 1));
  }
  bool same = true;
  {
    const auto f = sine_field();
    const Grid g = build_grid(1, 4.0, 201, 0.0, 0.1, 0.5, f.Lambda());
    same = same && slab_bytes(solve_forward(f, g, 0.0, make_vec({0.08}))) ==
                       slab_bytes(solve_forward(f, g, 0.0, make_vec({0.08})));
    const auto e1 = simulate(f, 0.0, make_vec({0}), 0.1, 20000, 100, ctx.seed);
    set_max_threads(1);
    const auto e2 = simulate(f, 0.0, make_vec({0}), 0.1, 20000, 100, ctx.seed);
    set_max_threads(0);
    same = same && e1.endpoints == e2.endpoints;
  }
  const bool ok = ck <= 1e-10 && dual <= 1e-12 && rows <= 1e-10 && same;
  return {ok, fmt::format("ck={:.3e} duality={:.3e} row_sum_dev={:.3e} byte_identical={}", ck, dual, rows, same)};
}

Outcome exploratory(const Context& ctx) {
  auto csv = ctx.csv("c11_rough_sweep.csv");
  CsvWriter w(csv, {"field", "cell", "kappa", "N_min_upper", "N0_wh", "N0_lb"});
  const std::vector<double> kappas{2, 3, 4, 6, 8};
  std::string detail;
  for (const char* kind : {"checkerboard", "oscillatory"}) {
    for (double cell : {0.5, 0.25, 0.125}) {
      FieldParams p;
      p.lambda = 0.5;
      p.Lambda = 1.5;
      p.cell = cell;
      p.amp = 0.5;
      p.freq = 2 * pi / cell;
      const auto f = make_field(parse_field_kind(kind), p);
      const Grid g = build_grid(1, 7.0, 701, 0.0, 0.4, 0.5, f.Lambda());
      const auto times = geometric_times(g, 0.0, 0.05, 0.4, 6);
      SolveOptions opt;
      opt.record_times = times;
      const auto k = solve_forward(f, g, 0.0, make_vec({0}), opt);
      KernelSampleSpec spec;
      for (int i = -25; i <= 25; ++i) spec.offsets.push_back(make_vec({0.04 * i}));
      spec.elapsed = times;
      const auto up = fit_upper(sample_kernel({&k}, spec, {f.label()}), kappas);
      const Grid ga = build_grid(1, 2.0, 401, 0.0, 1.03 * 8 * 0.04, 0.5, f.Lambda());
      const auto a = estimate_adjoint_constants(f, ga, {0.1, 0.2}, 8, ctx.seed);
      for (const auto& pt : up)
        w.row_text({kind, fmt17(cell), fmt17(pt.kappa), fmt17(pt.N_min), fmt17(a.N0_wh), fmt17(a.N0_lb)});
      detail += fmt::format("{}@{}: N_min(k=4)={:.4g} N0_wh={:.4g}; ", kind, cell, up[2].N_min, a.N0_wh);
    }
  }
  return {true, detail};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.csv_dir = "acceptance_out";
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--csv-dir") && i + 1 < argc) {
      ctx.csv_dir = argv[++i];
    } else if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      only.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--csv-dir DIR] [--only N]...\n";
      return 2;
    }
  }
  std::filesystem::create_directories(ctx.csv_dir);

  const std::vector<std::pair<const char*, std::function<Outcome(const Context&)>>> criteria{
      {"exact_kernel_oracle", exact_kernel},
      {"barrier_nonnegativity", barrier},
      {"barrier_dominance", lemma21},
      {"quarter_window_average", quarter_window},
      {"mass_floor", sy_floor},
      {"chain_geometry", chain_geometry},
      {"gaussian_sandwich", sandwich},
      {"ondiagonal_scaling", ondiag},
      {"monte_carlo_concordance", monte_carlo},
      {"discrete_structure", discrete_structure},
      {"exploratory_rough_fields", exploratory},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, fmt::format("error: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool reported = id == 11;
    const char* verdict = reported ? (o.pass ? "REPORTED" : "FAIL") : (o.pass ? "PASS" : "FAIL");
    failed += !o.pass;
    std::cout << fmt::format("criterion {:2d} {:<26} {:<8} [{:.1f}s] {}", id, criteria[i].first, verdict, secs,
                             o.detail)
              << std::endl;
  }
  std::cout << (failed ? fmt::format("acceptance: {} criteria failed", failed) : "acceptance: all criteria passed")
            << std::endl;
  return failed ? 1 : 0;
}
