#pragma once

#include "pklab/io.hpp"
#include "pklab/pde.hpp"

#include <fmt/format.h>

#include <cmath>
#include <ostream>
#include <random>
#include <vector>

namespace pklab {

/// Symmetric square root of 2A, so that sigma sigma^T / 2 = A.
inline Mat sigma_from_a(const Mat& A) {
  require(A.rows() == A.cols() && A.rows() >= 1, ErrorKind::decomposition, "DECOMPOSITION",
          "matrix must be square");
  require((A - A.transpose()).norm() <= 1e-12 * A.norm(), ErrorKind::decomposition, "DECOMPOSITION", "matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(2.0 * A);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0))
    fail(ErrorKind::decomposition, "DECOMPOSITION",
         fmt::format("matrix is not positive definite (min eigenvalue {})",
                     es.info() == Eigen::Success ? es.eigenvalues().minCoeff() / 2 : NAN));
  const Vec root = es.eigenvalues().cwiseSqrt();
  Mat s = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (s + s.transpose());
}

namespace detail {

/// sqrt(2A) without an eigen-solve for d <= 2.
inline void fast_sigma(const Mat& a, Mat& out) {
  const auto d = a.rows();
  if (d == 1) {
    out.resize(1, 1);
    if (!(a(0, 0) > 0)) {
      out = sigma_from_a(a);
      return;
    }
    out(0, 0) = std::sqrt(2.0 * a(0, 0));
    return;
  }
  if (d == 2) {
    // sqrt(M) = (M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M))
    const Mat m = 2.0 * a;
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    if (!(det > 0) || !(m(0, 0) > 0)) {
      out = sigma_from_a(a);
      return;
    }
    const double sd = std::sqrt(det);
    const double den = std::sqrt(m(0, 0) + m(1, 1) + 2.0 * sd);
    out.resize(2, 2);
    out(0, 0) = (m(0, 0) + sd) / den;
    out(1, 1) = (m(1, 1) + sd) / den;
    out(0, 1) = out(1, 0) = m(0, 1) / den;
    return;
  }
  out = sigma_from_a(a);
}

}  // namespace detail

/// Endpoints X_t of Euler-Maruyama paths started at (s, y).
struct PathEnsemble {
  int d = 1;
  double s = 0;
  double t = 0;
  Vec y;
  std::size_t n_paths = 0;
  long n_steps = 0;
  std::uint64_t seed = 0;
  std::vector<double> endpoints;  // n_paths * d, path-major

  Vec endpoint(std::size_t i) const {
    Vec v(d);
    for (int a = 0; a < d; ++a) v(a) = endpoints[i * d + a];
    return v;
  }
};

inline constexpr std::size_t path_block = 4096;

/// Paths of dX = sigma dW, sigma sigma^T = 2A, from X_s = y to time t. The law
/// of X_t is Gamma(t, y, s, .), so the coefficient is read in reflected time:
/// diffusion step n uses A(t - (n+1) h, X), the left end of the matching step
/// of the kernel solve. For time-independent fields this is plain
/// Euler-Maruyama. Paths are grouped in blocks of path_block, each with its
/// own substream of the seed.
inline PathEnsemble simulate(const CoefficientField& field, double s, const Vec& y, double t,
                             std::size_t n_paths, long n_steps, std::uint64_t seed) {
  require(t > s, ErrorKind::argument, "ARGUMENT", "need t > s");
  require(n_steps >= 100, ErrorKind::argument, "ARGUMENT",
          fmt::format("n_steps = {} below minimum 100", n_steps));
  require(n_paths >= 1, ErrorKind::argument, "ARGUMENT", "need at least one path");
  require(y.size() == field.dimension(), ErrorKind::argument, "ARGUMENT", "start point dimension");
  const int d = field.dimension();
  PathEnsemble ens;
  ens.d = d;
  ens.s = s;
  ens.t = t;
  ens.y = y;
  ens.n_paths = n_paths;
  ens.n_steps = n_steps;
  ens.seed = seed;
  ens.endpoints.assign(n_paths * d, 0.0);
  const double h = (t - s) / static_cast<double>(n_steps);
  const double sq = std::sqrt(h);
  const std::size_t n_blocks = (n_paths + path_block - 1) / path_block;
  parallel_for(n_blocks, [&](std::size_t b) {
    auto rng = substream(seed, b);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec x(d), dw(d);
    Mat sig(d, d);
    const std::size_t lo = b * path_block, hi = std::min(n_paths, lo + path_block);
    for (std::size_t p = lo; p < hi; ++p) {
      x = y;
      for (long n = 0; n < n_steps; ++n) {
        const double tn = t - static_cast<double>(n + 1) * h;
        Mat a;
        try {
          a = field(tn, x);
        } catch (const Error& e) {
          fail(ErrorKind::simulation, "SIMULATION",
               fmt::format("path {} step {}: {}", p, n, e.what()));
        }
        if (!a.allFinite())
          fail(ErrorKind::simulation, "SIMULATION",
               fmt::format("path {} step {}: non-finite coefficient", p, n));
        detail::fast_sigma(a, sig);
        for (int i = 0; i < d; ++i) dw(i) = sq * normal(rng);
        x += sig * dw;
      }
      for (int i = 0; i < d; ++i) ens.endpoints[p * d + i] = x(i);
    }
  });
  return ens;
}

/// Histogram densities on equal-width bins covering [-L, L]^d. Bin index is
/// i0 + bins * i1.
struct BinnedDensity {
  int d = 1;
  int bins = 0;
  double L = 0;
  double width = 0;
  std::vector<double> density;

  double binvol() const { return std::pow(width, d); }
  double centre(int i) const { return -L + (i + 0.5) * width; }
  std::size_t size() const { return density.size(); }
};

namespace detail {

inline BinnedDensity empty_bins(int d, int bins, double L) {
  BinnedDensity b;
  b.d = d;
  b.bins = bins;
  b.L = L;
  b.width = 2.0 * L / bins;
  b.density.assign(d == 1 ? bins : static_cast<std::size_t>(bins) * bins, 0.0);
  return b;
}

/// Piecewise-linear (d=1) or bilinear (d=2) interpolant of a slice.
inline double interpolate(const Grid& g, std::span<const double> u, const Vec& x) {
  double f0 = (x(0) + g.L) / g.dx;
  int i0 = std::clamp(static_cast<int>(std::floor(f0)), 0, g.nx - 2);
  const double w0 = std::clamp(f0 - i0, 0.0, 1.0);
  if (g.d == 1) return (1 - w0) * u[i0] + w0 * u[i0 + 1];
  double f1 = (x(1) + g.L) / g.dx;
  int i1 = std::clamp(static_cast<int>(std::floor(f1)), 0, g.nx - 2);
  const double w1 = std::clamp(f1 - i1, 0.0, 1.0);
  return (1 - w0) * (1 - w1) * u[g.flat(i0, i1)] + w0 * (1 - w1) * u[g.flat(i0 + 1, i1)] +
         (1 - w0) * w1 * u[g.flat(i0, i1 + 1)] + w0 * w1 * u[g.flat(i0 + 1, i1 + 1)];
}

}  // namespace detail

/// Empirical density of the ensemble endpoints.
inline BinnedDensity histogram(const PathEnsemble& e, int bins, double L) {
  auto b = detail::empty_bins(e.d, bins, L);
  std::vector<double> counts(b.size(), 0.0);
  for (std::size_t p = 0; p < e.n_paths; ++p) {
    std::size_t idx = 0;
    bool inside = true;
    for (int a = 0; a < e.d; ++a) {
      const double f = (e.endpoints[p * e.d + a] + L) / b.width;
      if (!(f >= 0 && f < bins)) {
        inside = false;
        break;
      }
      idx += static_cast<std::size_t>(f) * (a == 0 ? 1 : static_cast<std::size_t>(bins));
    }
    if (inside) counts[idx] += 1.0;
  }
  const double norm = 1.0 / (static_cast<double>(e.n_paths) * b.binvol());
  for (std::size_t i = 0; i < b.size(); ++i) b.density[i] = counts[i] * norm;
  return b;
}

/// Bin averages of the kernel slice at `time`, from `sub` sub-samples per
/// axis per bin of the linear interpolant.
inline BinnedDensity binned_kernel_density(const KernelField& k, double time, int bins,
                                           int sub = 8) {
  const Grid& g = k.grid;
  auto b = detail::empty_bins(g.d, bins, g.L);
  const auto slice = k.slice(k.require_slice(time));
  Vec x(g.d);
  for (std::size_t idx = 0; idx < b.size(); ++idx) {
    const int i0 = static_cast<int>(idx % bins);
    const int i1 = static_cast<int>(idx / bins);
    CompensatedSum acc;
    const int n1 = g.d == 1 ? 1 : sub;
    for (int a = 0; a < sub; ++a)
      for (int c = 0; c < n1; ++c) {
        x(0) = -g.L + (i0 + (a + 0.5) / sub) * b.width;
        if (g.d == 2) x(1) = -g.L + (i1 + (c + 0.5) / sub) * b.width;
        acc.add(detail::interpolate(g, slice, x));
      }
    b.density[idx] = acc.value() / (sub * n1);
  }
  return b;
}

/// 1/2 sum |p - q| binvol.
inline double tv_distance(const BinnedDensity& p, const BinnedDensity& q) {
  require(p.size() == q.size() && p.width == q.width, ErrorKind::argument, "ARGUMENT",
          "densities binned differently");
  CompensatedSum s;
  for (std::size_t i = 0; i < p.size(); ++i) s.add(std::abs(p.density[i] - q.density[i]));
  return 0.5 * s.value() * p.binvol();
}

struct DensityComparison {
  double tv = 0;
  double sup_rel_err_on_core = 0;
  double core_radius = 0;
  BinnedDensity mc;
  BinnedDensity fd;
};

/// Histogram of the ensemble against the binned adjoint kernel anchored at
/// (t, y), read at time s, over the grid box. The core is the set of bins
/// whose centre lies within 2 sqrt(Lambda (t-s)) of y.
inline DensityComparison density_compare(const PathEnsemble& ens, const KernelField& k, int bins,
                                         double Lambda) {
  require(bins >= 20, ErrorKind::argument, "ARGUMENT", fmt::format("bins = {} below 20", bins));
  require(k.direction == KernelDirection::adjoint, ErrorKind::argument, "ARGUMENT",
          "density comparison needs an adjoint kernel");
  require(ens.d == k.grid.d, ErrorKind::argument, "ARGUMENT", "dimension mismatch");
  const double tol = 1e-9 * std::max(1.0, std::abs(ens.t));
  require(std::abs(ens.t - k.anchor_time) <= tol, ErrorKind::argument, "ARGUMENT",
          fmt::format("end times differ ({} vs {})", ens.t, k.anchor_time));
  require((ens.y - k.anchor_point()).norm() <= 1e-9, ErrorKind::argument, "ARGUMENT",
          "source points differ");
  require(k.slice_index(ens.s).has_value(), ErrorKind::argument, "ARGUMENT",
          fmt::format("kernel has no slice at the ensemble start time {}", ens.s));
  DensityComparison out;
  out.fd = binned_kernel_density(k, ens.s, bins);
  out.mc = histogram(ens, bins, k.grid.L);
  out.tv = tv_distance(out.mc, out.fd);
  out.core_radius = 2.0 * std::sqrt(Lambda * (ens.t - ens.s));
  const int d = ens.d;
  for (std::size_t idx = 0; idx < out.fd.size(); ++idx) {
    Vec c(d);
    c(0) = out.fd.centre(static_cast<int>(idx % bins));
    if (d == 2) c(1) = out.fd.centre(static_cast<int>(idx / bins));
    if ((c - ens.y).norm() > out.core_radius) continue;
    const double q = out.fd.density[idx];
    if (q > 0)
      out.sup_rel_err_on_core =
          std::max(out.sup_rel_err_on_core, std::abs(out.mc.density[idx] - q) / q);
  }
  return out;
}

/// CSV: bin centre(s), density_mc, density_fd, abs_diff.
inline void write_histogram_csv(std::ostream& os, const DensityComparison& c) {
  const int d = c.fd.d;
  std::vector<std::string> header;
  if (d == 1)
    header = {"bin_center", "density_mc", "density_fd", "abs_diff"};
  else
    header = {"bin_center_x1", "bin_center_x2", "density_mc", "density_fd", "abs_diff"};
  CsvWriter w(os, header);
  for (std::size_t idx = 0; idx < c.fd.size(); ++idx) {
    const double mc = c.mc.density[idx], fd = c.fd.density[idx];
    const int bins = c.fd.bins;
    if (d == 1)
      w.row({c.fd.centre(static_cast<int>(idx)), mc, fd, std::abs(mc - fd)});
    else
      w.row({c.fd.centre(static_cast<int>(idx % bins)), c.fd.centre(static_cast<int>(idx / bins)),
             mc, fd, std::abs(mc - fd)});
  }
}

}  // namespace pklab
