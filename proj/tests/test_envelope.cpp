#include "oracles.hpp"
#include "pklab/envelope.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace pklab;

namespace {

CoefficientField identity_field(int d) {
  FieldParams p;
  p.d = d;
  return make_field(FieldKind::constant, p);
}

CoefficientField sine_field() {
  return CoefficientField(
      1, [](double, const Vec& x) { return Mat::Constant(1, 1, 1.0 + 0.5 * std::sin(x(0))); }, 0.5,
      1.5, "sine", true);
}

KernelSampleSet exact_set(const std::vector<double>& dts, const std::vector<double>& dists) {
  KernelSampleSet s;
  s.labels = {"exact"};
  s.grid_ids = {"closed_form"};
  for (double dt : dts)
    for (double r : dists) {
      KernelSample row;
      row.dt = dt;
      row.dist = r;
      row.gamma = oracle::heat_kernel(dt, r * r, 1.0, 1);
      row.t = dt;
      row.x = make_vec({r});
      s.rows.push_back(row);
    }
  return s;
}

KernelSampleSpec line_spec(double dx, int half, std::vector<double> elapsed) {
  KernelSampleSpec spec;
  for (int i = -half; i <= half; ++i) spec.offsets.push_back(make_vec({i * dx}));
  spec.elapsed = std::move(elapsed);
  return spec;
}

const std::vector<double> kappas{0.5, 1, 2, 3, 3.9, 4, 5, 8};

}  // namespace

TEST(SampleKernel, Counting) {
  const Grid g = build_grid(1, 6.0, 601, 0.0, 0.5, 0.5, 1.0);
  SolveOptions opt;
  opt.record_stride = 25;
  const auto k = solve_forward(identity_field(1), g, 0.0, make_vec({0}), opt);
  KernelSampleSpec one;
  one.offsets = {make_vec({0.1})};
  one.elapsed = {g.time(100)};
  EXPECT_EQ(sample_kernel({&k}, one).size(), 1u);
  const auto full = sample_kernel({&k}, line_spec(0.1, 10, {g.time(100), g.time(200), g.time(300),
                                                            g.time(400), g.time(500)}));
  EXPECT_EQ(full.size(), 105u);
  EXPECT_EQ(full.labels.size(), 1u);
  for (const auto& r : full.rows) {
    EXPECT_GT(r.dt, 0);
    EXPECT_GE(r.gamma, 0);
  }
}

TEST(SampleKernel, SymmetricOffsetsGiveEqualValues) {
  const Grid g = build_grid(1, 4.0, 401, 0.0, 0.2, 0.5, 1.0);
  const auto k = solve_forward(identity_field(1), g, 0.0, make_vec({0}));
  KernelSampleSpec spec;
  spec.elapsed = {0.2};
  spec.offsets = {make_vec({0.3}), make_vec({-0.3})};
  const auto s = sample_kernel({&k}, spec);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s.rows[0].gamma, s.rows[1].gamma);
  EXPECT_EQ(s.rows[0].dist, s.rows[1].dist);
}

TEST(SampleKernel, BoundaryAndOffGrid) {
  const Grid g = build_grid(1, 4.0, 401, 0.0, 0.2, 0.5, 1.0);
  const auto k = solve_forward(identity_field(1), g, 0.0, make_vec({0}));
  KernelSampleSpec spec;
  spec.elapsed = {0.2};
  spec.offsets = {make_vec({4.0}), make_vec({3.98}), make_vec({3.96}), make_vec({3.94})};
  EXPECT_EQ(sample_kernel({&k}, spec).size(), 1u);
  spec.offsets = {make_vec({0.013})};
  try {
    sample_kernel({&k}, spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::argument);
  }
  spec.offsets = {make_vec({0.0})};
  spec.elapsed = {0.3};
  EXPECT_THROW(sample_kernel({&k}, spec), Error);
}

TEST(FitUpper, ExactKernelAtItsRate) {
  const auto s = exact_set({0.05, 0.1, 0.2, 0.4}, {0, 0.1, 0.5, 1, 2});
  const auto f = fit_upper(s, {4.0});
  EXPECT_NEAR(f[0].N_min, 0.28209479177387814, 1e-15);
  EXPECT_NEAR(f[0].N_min, 0.2821, 1e-4);
}

TEST(FitUpper, BelowTheRateFollowsTheFarField) {
  const auto near = exact_set({0.1, 0.2}, {0, 0.2, 0.5});
  const auto far = exact_set({0.1, 0.2}, {0, 0.2, 0.5, 1.0, 1.5});
  const double base = 1 / std::sqrt(4 * oracle::pi);
  const double kappa = 3.9;
  auto closed = [&](double max_ratio) { return base * std::exp(max_ratio * (1 / kappa - 0.25)); };
  const double fn = fit_upper(near, {kappa})[0].N_min;
  const double ff = fit_upper(far, {kappa})[0].N_min;
  EXPECT_NEAR(fn, closed(0.25 / 0.1), 1e-12);
  EXPECT_NEAR(ff, closed(2.25 / 0.1), 1e-12);
  EXPECT_GT(ff, fn);
}

TEST(FitUpper, SingleOnDiagonalRow) {
  auto s = exact_set({0.3}, {0});
  s.rows[0].gamma = 0.7;
  for (const auto& p : fit_upper(s, kappas)) EXPECT_NEAR(p.N_min, 0.7 * std::sqrt(0.3), 1e-15);
}

TEST(FitUpper, Errors) {
  EXPECT_THROW(fit_upper(KernelSampleSet{}, {1.0}), Error);
  const auto s = exact_set({0.3}, {0});
  EXPECT_THROW(fit_upper(s, {2.0, 1.0}), Error);
  EXPECT_THROW(fit_upper(s, {0.0, 1.0}), Error);
}

TEST(FitLower, ExactKernelAtItsRate) {
  const auto s = exact_set({0.05, 0.1, 0.2, 0.4}, {0, 0.1, 0.5, 1, 2});
  const auto f = fit_lower(s, {0.25, 0.5, 1.0});
  EXPECT_NEAR(f[0].N_min, 3.5449077018110318, 1e-13);
  EXPECT_NEAR(f[0].N_min, 3.5449, 1e-4);
  // above the rate the on-diagonal rows decide
  for (const auto& p : f) EXPECT_NEAR(p.N_min, std::sqrt(4 * oracle::pi), 1e-13);
  const auto below = fit_lower(s, {0.2});
  EXPECT_GT(below[0].N_min, f[0].N_min * 1.01);
}

TEST(FitLower, VanishingSampleIsInfeasible) {
  auto s = exact_set({0.1, 0.2}, {0, 0.5});
  s.rows[3].gamma = 0;
  for (const auto& p : fit_lower(s, kappas)) {
    EXPECT_FALSE(p.feasible);
    EXPECT_TRUE(std::isinf(p.N_min));
  }
  EXPECT_THROW(envelope_from_frontier(fit_lower(s, {1.0})[0], EnvelopeSide::lower, 1.0, 1), Error);
}

TEST(Sandwich, ExactKernelInsidePaddedEnvelopes) {
  const auto s = exact_set({0.05, 0.1, 0.2, 0.4}, {0, 0.1, 0.5, 1, 2});
  const auto up = GaussianEnvelope::from_classical_convention(EnvelopeSide::upper, 0.2821 * 1.01, 4, 1, 1);
  const auto lo = GaussianEnvelope::from_classical_convention(EnvelopeSide::lower, 3.5449 * 1.01, 0.25, 1, 1);
  const auto rep = sandwich_check(s, up, lo, 0.0);
  EXPECT_TRUE(rep.holds());
  EXPECT_EQ(rep.checked, s.size());
}

TEST(Sandwich, FastUpperRateFailsInTheFarField) {
  const auto s = exact_set({0.05, 0.1, 0.2, 0.4}, {0, 0.1, 0.2, 0.5, 1, 2});
  const auto up = GaussianEnvelope::from_classical_convention(EnvelopeSide::upper, 0.2821 * 1.01, 3, 1, 1);
  const auto lo = GaussianEnvelope::from_classical_convention(EnvelopeSide::lower, 3.5449 * 1.01, 0.25, 1, 1);
  const auto rep = sandwich_check(s, up, lo, 0.0);
  ASSERT_FALSE(rep.holds());
  // violation iff N e^{-r^2/(3 dt)} < exact, i.e. r^2/dt (1/3 - 1/4) > log(N / exact amplitude)
  const double threshold = 12 * std::log(0.2821 * 1.01 * std::sqrt(4 * oracle::pi));
  std::size_t expected = 0;
  for (const auto& r : s.rows) expected += r.dist * r.dist / r.dt > threshold;
  EXPECT_EQ(rep.violations.size(), expected);
  for (const auto& v : rep.violations) {
    EXPECT_EQ(v.side, EnvelopeSide::upper);
    EXPECT_GT(v.dist * v.dist / v.dt, threshold);
    EXPECT_GT(v.gamma, v.bound);
    EXPECT_EQ(v.x.size(), 1);
  }
  std::ostringstream os;
  write_violation_csv(os, rep);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "dt,dist,gamma,bound,side");
}

TEST(Sandwich, EmptySamples) {
  const GaussianEnvelope up(1, 1, 1, EnvelopeSide::upper, 1), lo(1, 1, 1, EnvelopeSide::lower, 1);
  EXPECT_TRUE(sandwich_check(KernelSampleSet{}, up, lo, 0.0).holds());
}

TEST(Frontier, MonotoneSubsetAndConsistent) {
  const Grid g = build_grid(1, 7.0, 701, 0.0, 0.4, 0.5, 1.5);
  SolveOptions opt;
  opt.record_stride = 20;
  const auto k = solve_forward(sine_field(), g, 0.0, make_vec({0.2}), opt);
  std::vector<double> el;
  // early slices of the explicit scheme vanish identically past their reach
  for (std::size_t i = 1; i < k.times.size(); i += 3)
    if (k.times[i] >= 0.05) el.push_back(k.times[i]);
  const auto s = sample_kernel({&k}, line_spec(0.1, 10, el), {"sine"});
  ASSERT_GT(s.size(), 100u);
  const std::vector<double> grid{0.5, 1, 2, 3, 4, 6, 8, 12};
  const auto up = fit_upper(s, grid);
  const auto lo = fit_lower(s, {0.1, 0.15, 0.25, 0.4, 0.6, 1.0});
  for (std::size_t i = 1; i < up.size(); ++i) EXPECT_LE(up[i].N_min, up[i - 1].N_min);
  for (std::size_t i = 1; i < lo.size(); ++i) EXPECT_LE(lo[i].N_min, lo[i - 1].N_min);
  KernelSampleSet half = s;
  half.rows.resize(s.rows.size() / 2);
  const auto up_half = fit_upper(half, grid);
  for (std::size_t i = 0; i < up.size(); ++i) EXPECT_LE(up_half[i].N_min, up[i].N_min);
  for (const auto& pu : up)
    for (const auto& pl : lo) {
      ASSERT_TRUE(pu.feasible && pl.feasible);
      const auto rep = sandwich_check(s, envelope_from_frontier(pu, EnvelopeSide::upper, s.max_dt(), 1),
                                      envelope_from_frontier(pl, EnvelopeSide::lower, s.max_dt(), 1), 0.0);
      EXPECT_TRUE(rep.holds()) << pu.kappa << " " << pl.kappa;
    }
  std::ostringstream os;
  write_frontier_csv(os, up, EnvelopeSide::upper);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "kappa,N_min,convention");
}

TEST(OnDiagonal, ExactSlope) {
  std::vector<double> dt, g;
  for (int i = 0; i < 6; ++i) {
    dt.push_back(0.01 * std::pow(2.0, i));
    g.push_back(oracle::heat_kernel(dt.back(), 0, 1.0, 1));
  }
  EXPECT_NEAR(loglog_slope(dt, g), -0.5, 1e-13);
  dt.resize(3);
  g.resize(3);
  EXPECT_THROW(loglog_slope(dt, g), Error);
}

TEST(OnDiagonal, FdIdentityIn2d) {
  const Grid g = build_grid(2, 4.0, 161, 0.0, 0.2, 0.5, 1.0);
  const auto times = geometric_times(g, 0.0, 0.025, 0.2, 6);
  SolveOptions opt;
  opt.record_times = times;
  const auto k = solve_forward(identity_field(2), g, 0.0, make_vec({0, 0}), opt);
  EXPECT_NEAR(ondiag_scaling(k, times), -1.0, 0.05);
}

TEST(OnDiagonal, SmoothVariableFieldIn1d) {
  const Grid g = build_grid(1, 7.0, 701, 0.0, 0.4, 0.5, 1.5);
  const auto times = geometric_times(g, 0.0, 0.0125, 0.4, 6);
  SolveOptions opt;
  opt.record_times = times;
  const auto k = solve_forward(sine_field(), g, 0.0, make_vec({0.3}), opt);
  EXPECT_NEAR(ondiag_scaling(k, times), -0.5, 0.1);
  EXPECT_THROW(ondiag_scaling(k, {times[0], times[1], times[2]}), Error);
}
