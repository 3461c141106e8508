#pragma once

#include "pklab/coeff.hpp"

#include <fmt/format.h>

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace pklab {

enum class Boundary { dirichlet_zero };

/// Uniform grid on [-L, L]^d with an explicit time step. Node index is
/// i0 + nx * i1 (axis 0 fastest).
struct Grid {
  int d = 1;
  double L = 1;
  int nx = 41;
  double dx = 0;
  double t0 = 0;
  double t1 = 1;
  double dt = 0;
  long n_steps = 0;
  Boundary boundary = Boundary::dirichlet_zero;

  std::size_t n_nodes() const noexcept {
    return d == 1 ? static_cast<std::size_t>(nx) : static_cast<std::size_t>(nx) * nx;
  }
  double cellvol() const noexcept { return std::pow(dx, d); }
  double coord(int i) const noexcept { return -L + i * dx; }
  double time(long n) const noexcept { return t0 + static_cast<double>(n) * dt; }

  std::array<int, 2> index(std::size_t flat) const noexcept {
    if (d == 1) return {static_cast<int>(flat), 0};
    return {static_cast<int>(flat % nx), static_cast<int>(flat / nx)};
  }
  std::size_t flat(int i0, int i1 = 0) const noexcept {
    return static_cast<std::size_t>(i0) + (d == 1 ? 0 : static_cast<std::size_t>(nx) * i1);
  }
  Vec point(std::size_t flat_index) const {
    const auto ij = index(flat_index);
    Vec x(d);
    x(0) = coord(ij[0]);
    if (d == 2) x(1) = coord(ij[1]);
    return x;
  }
  bool is_boundary(std::size_t flat_index) const noexcept {
    const auto ij = index(flat_index);
    if (ij[0] == 0 || ij[0] == nx - 1) return true;
    return d == 2 && (ij[1] == 0 || ij[1] == nx - 1);
  }
  /// Number of cells from flat_index to the nearest boundary node.
  int boundary_distance(std::size_t flat_index) const noexcept {
    const auto ij = index(flat_index);
    int m = std::min(ij[0], nx - 1 - ij[0]);
    if (d == 2) m = std::min({m, ij[1], nx - 1 - ij[1]});
    return m;
  }

  /// Flat index of the node at x, or nullopt when x is not a node.
  std::optional<std::size_t> node_of(const Vec& x) const {
    if (x.size() != d) return std::nullopt;
    std::array<int, 2> ij{0, 0};
    for (int a = 0; a < d; ++a) {
      const double f = (x(a) + L) / dx;
      const double r = std::round(f);
      if (std::abs(f - r) > 1e-7 || r < 0 || r > nx - 1) return std::nullopt;
      ij[a] = static_cast<int>(r);
    }
    return flat(ij[0], ij[1]);
  }
  std::size_t require_node(const Vec& x, const char* what) const {
    auto n = node_of(x);
    if (!n) fail(ErrorKind::argument, "OFF_GRID", fmt::format("{} is not a grid node", what));
    return *n;
  }

  /// Step index of time t, or nullopt when t is not on the time grid.
  std::optional<long> step_of(double t) const {
    const double f = (t - t0) / dt;
    const double r = std::round(f);
    if (std::abs(f - r) > 1e-6 || r < 0 || r > static_cast<double>(n_steps)) return std::nullopt;
    return static_cast<long>(r);
  }
  long require_step(double t, const char* what) const {
    auto n = step_of(t);
    if (!n) fail(ErrorKind::argument, "OFF_TIME_GRID", fmt::format("{} = {} is not a grid time", what, t));
    return *n;
  }
};

/// Largest explicit step allowed by the CFL condition dt * 2 Lambda sum 1/dx^2 <= 1.
inline double cfl_limit(int d, double dx, double Lambda) { return dx * dx / (2.0 * Lambda * d); }

inline Grid build_grid(int d, double L, int nx, double t0, double t1, double safety,
                       double Lambda) {
  require(d == 1 || d == 2, ErrorKind::argument, "ARGUMENT", "grid dimension must be 1 or 2");
  require(L > 0, ErrorKind::argument, "ARGUMENT", "half-width L must be positive");
  require(nx >= 41, ErrorKind::argument, "ARGUMENT", fmt::format("nx = {} below minimum 41", nx));
  require(t1 > t0, ErrorKind::argument, "ARGUMENT", "t1 must exceed t0");
  require(safety > 0 && safety <= 1, ErrorKind::argument, "ARGUMENT", "safety must lie in (0, 1]");
  require(Lambda > 0, ErrorKind::argument, "ARGUMENT", "Lambda must be positive");
  Grid g;
  g.d = d;
  g.L = L;
  g.nx = nx;
  g.dx = 2.0 * L / (nx - 1);
  g.t0 = t0;
  g.t1 = t1;
  const double limit = safety * cfl_limit(d, g.dx, Lambda);
  require(limit >= 1e-9, ErrorKind::resolution, "RESOLUTION",
          fmt::format("CFL-feasible dt {} below 1e-9", limit));
  const double span = t1 - t0;
  g.n_steps = static_cast<long>(std::ceil(span / limit * (1.0 - 1e-12)));
  g.n_steps = std::max(1L, g.n_steps);
  g.dt = span / static_cast<double>(g.n_steps);
  return g;
}

/// Copy of g whose time axis is the sub-window [a, b]; both must be grid
/// times. Node times of the window coincide with g.time(step_of(a) + n).
inline Grid time_window(const Grid& g, double a, double b) {
  const long na = g.require_step(a, "window start");
  const long nb = g.require_step(b, "window end");
  require(nb > na, ErrorKind::argument, "ARGUMENT", "empty time window");
  Grid w = g;
  w.t0 = g.time(na);
  w.n_steps = nb - na;
  w.t1 = g.time(nb);
  return w;
}

/// Half-width needed so that a solve anchored at `centre` over a time span
/// `span` leaks at most exp(-16) of its mass through the boundary.
inline double required_half_width(const Vec& centre, double span, double Lambda) {
  return centre.cwiseAbs().maxCoeff() + 8.0 * std::sqrt(Lambda * span);
}

// ---------------------------------------------------------------------------
// Step operator
// ---------------------------------------------------------------------------

/// One explicit Euler step u(t+dt) = u + dt a^{ij} D_ij u. For every
/// interior node the update is u_0 + sum_k w_k (u_k - u_0), so constants are
/// reproduced bit for bit. Boundary nodes are held at zero.
struct StepOperator {
  double t = 0;
  int stencil = 0;                    // off-centre entries per node: 2 (d=1) or 8 (d=2)
  std::vector<std::ptrdiff_t> offsets; // flat offsets of the off-centre entries
  std::vector<double> weights;        // n_nodes * stencil, zero rows at the boundary
  bool monotone = true;
  double min_centre_weight = 1;       // min over nodes of 1 - sum_k w_k
  double min_offcentre_weight = 0;

  double weight(std::size_t node, int k) const { return weights[node * stencil + k]; }

  void apply(const Grid& g, std::span<const double> in, std::span<double> out) const {
    const std::size_t n = g.n_nodes();
    for (std::size_t i = 0; i < n; ++i) {
      if (g.is_boundary(i)) {
        out[i] = 0.0;
        continue;
      }
      const double u0 = in[i];
      const double* w = &weights[i * stencil];
      double acc = 0.0;
      for (int k = 0; k < stencil; ++k) acc += w[k] * (in[i + offsets[k]] - u0);
      out[i] = u0 + acc;
    }
  }

  /// Transposed step restricted to interior nodes.
  void apply_transpose(const Grid& g, std::span<const double> in, std::span<double> out) const {
    const std::size_t n = g.n_nodes();
    for (std::size_t z = 0; z < n; ++z) {
      if (g.is_boundary(z)) {
        out[z] = 0.0;
        continue;
      }
      const double* wz = &weights[z * stencil];
      double row = 0.0;
      for (int k = 0; k < stencil; ++k) row += wz[k];
      double acc = (1.0 - row) * in[z];
      for (int k = 0; k < stencil; ++k) {
        // node x = z - offset_k reaches z through its k-th entry
        const std::size_t x = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(z) - offsets[k]);
        if (g.is_boundary(x)) continue;
        acc += weights[x * stencil + k] * in[x];
      }
      out[z] = acc;
    }
  }
};

inline StepOperator step_operator(const CoefficientField& field, const Grid& g, double t) {
  require(field.dimension() == g.d, ErrorKind::argument, "ARGUMENT",
          "field dimension differs from grid dimension");
  StepOperator op;
  op.t = t;
  const std::size_t n = g.n_nodes();
  const double h2 = g.dx * g.dx;
  const auto nx = static_cast<std::ptrdiff_t>(g.nx);
  if (g.d == 1) {
    op.stencil = 2;
    op.offsets = {-1, +1};
  } else {
    op.stencil = 8;
    // -x, +x, -y, +y, (-,-), (+,+), (+,-), (-,+)
    op.offsets = {-1, +1, -nx, +nx, -1 - nx, +1 + nx, +1 - nx, -1 + nx};
  }
  op.weights.assign(n * op.stencil, 0.0);
  op.min_centre_weight = 1.0;
  op.min_offcentre_weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (g.is_boundary(i)) continue;
    const Mat a = field(t, g.point(i));
    if (!a.allFinite())
      fail(ErrorKind::evaluation, "EVAL_NONFINITE",
           fmt::format("field '{}' non-finite at node {} t={}", field.label(), i, t));
    double* w = &op.weights[i * op.stencil];
    if (g.d == 1) {
      const double c = g.dt * a(0, 0) / h2;
      w[0] = c;
      w[1] = c;
    } else {
      const double b = a(0, 1);
      const double ab = std::abs(b);
      const double wx = g.dt * (a(0, 0) - ab) / h2;
      const double wy = g.dt * (a(1, 1) - ab) / h2;
      const double wc = g.dt * ab / h2;
      w[0] = wx;
      w[1] = wx;
      w[2] = wy;
      w[3] = wy;
      // corners on the diagonal matching sign(a12)
      w[4] = b >= 0 ? wc : 0.0;
      w[5] = b >= 0 ? wc : 0.0;
      w[6] = b < 0 ? wc : 0.0;
      w[7] = b < 0 ? wc : 0.0;
    }
    double sum = 0;
    for (int k = 0; k < op.stencil; ++k) {
      sum += w[k];
      op.min_offcentre_weight = std::min(op.min_offcentre_weight, w[k]);
    }
    op.min_centre_weight = std::min(op.min_centre_weight, 1.0 - sum);
  }
  op.monotone = op.min_centre_weight >= 0.0 && op.min_offcentre_weight >= 0.0;
  return op;
}

// ---------------------------------------------------------------------------
// Kernel fields
// ---------------------------------------------------------------------------

enum class KernelDirection { forward, adjoint };

/// Sampled fundamental solution. Forward kernels hold Gamma(t, x, s, y) for
/// fixed source (s, y) as a function of (t, x); adjoint kernels hold
/// Gamma(t, x, s, y) for fixed target (t, x) as a function of (s, y).
/// Slice times are stored in ascending order.
struct KernelField {
  Grid grid;
  KernelDirection direction = KernelDirection::forward;
  double anchor_time = 0;        // s (forward) or t (adjoint)
  std::size_t anchor_node = 0;   // y (forward) or x (adjoint)
  std::vector<double> times;
  std::vector<double> values;    // times.size() * grid.n_nodes()
  double cellvol = 0;
  bool monotone = true;          // every step operator used was monotone

  std::size_t n_slices() const noexcept { return times.size(); }
  Vec anchor_point() const { return grid.point(anchor_node); }

  std::span<const double> slice(std::size_t k) const {
    return {values.data() + k * grid.n_nodes(), grid.n_nodes()};
  }
  std::span<double> slice(std::size_t k) {
    return {values.data() + k * grid.n_nodes(), grid.n_nodes()};
  }

  std::optional<std::size_t> slice_index(double time) const {
    const double tol = 1e-6 * grid.dt;
    auto it = std::lower_bound(times.begin(), times.end(), time - tol);
    if (it == times.end() || std::abs(*it - time) > tol) return std::nullopt;
    return static_cast<std::size_t>(it - times.begin());
  }
  std::size_t require_slice(double time) const {
    auto k = slice_index(time);
    if (!k) fail(ErrorKind::argument, "OFF_TIME_GRID", fmt::format("no recorded slice at time {}", time));
    return *k;
  }

  double value_at(double time, std::size_t node) const { return slice(require_slice(time))[node]; }
  double value_at(double time, const Vec& x) const {
    return value_at(time, grid.require_node(x, "sample point"));
  }
};

struct SolveOptions {
  bool strict_monotone = false;
  bool check_truncation = true;
  int record_stride = 1;                       // keep every stride-th slice (and the last)
  std::optional<std::vector<double>> record_times;  // if set, keep only these (plus the anchor)
};

/// Weighted point masses used as initial data for mixtures of kernels.
struct PointMass {
  double time;
  std::size_t node;
  double weight;
};

namespace detail {

class Recorder {
 public:
  Recorder(const Grid& g, const SolveOptions& opt, long first, long last)
      : opt_(opt), first_(first), last_(last) {
    if (opt.record_times) {
      for (double t : *opt.record_times) {
        auto n = g.step_of(t);
        if (!n) fail(ErrorKind::argument, "OFF_TIME_GRID", fmt::format("record time {} not on grid", t));
        wanted_.push_back(*n);
      }
      std::sort(wanted_.begin(), wanted_.end());
    }
    require(opt.record_stride >= 1, ErrorKind::argument, "ARGUMENT", "record_stride must be >= 1");
  }
  bool keep(long n) const {
    if (n == first_) return true;
    if (opt_.record_times) return std::binary_search(wanted_.begin(), wanted_.end(), n);
    const long k = n > first_ ? n - first_ : first_ - n;
    return n == last_ || k % opt_.record_stride == 0;
  }

 private:
  const SolveOptions& opt_;
  long first_, last_;
  std::vector<long> wanted_;
};

class OperatorCache {
 public:
  OperatorCache(const CoefficientField& f, const Grid& g, bool strict) : f_(f), g_(g), strict_(strict) {}
  const StepOperator& at(long n) {
    if (!cached_ || (!f_.time_independent() && step_ != n)) {
      op_ = step_operator(f_, g_, g_.time(n));
      cached_ = true;
      step_ = n;
      if (!op_.monotone) {
        all_monotone_ = false;
        if (strict_)
          fail(ErrorKind::scheme, "NONMONOTONE_SCHEME",
               fmt::format("step operator at t={} is not monotone (min centre weight {}, min "
                           "off-centre weight {})",
                           g_.time(n), op_.min_centre_weight, op_.min_offcentre_weight));
      }
    }
    return op_;
  }
  bool all_monotone() const { return all_monotone_; }

 private:
  const CoefficientField& f_;
  const Grid& g_;
  bool strict_;
  StepOperator op_;
  bool cached_ = false;
  long step_ = -1;
  bool all_monotone_ = true;
};

}  // namespace detail

/// Forward solve from weighted point masses; each mass is injected (scaled
/// by 1/cellvol) when the march reaches its time. The kernel's anchor is the
/// earliest mass.
inline KernelField solve_forward_mixture(const CoefficientField& field, const Grid& g,
                                         std::vector<PointMass> masses,
                                         const SolveOptions& opt = {}) {
  require(field.dimension() == g.d, ErrorKind::argument, "ARGUMENT",
          "field dimension differs from grid dimension");
  require(!masses.empty(), ErrorKind::argument, "ARGUMENT", "no initial masses");
  std::vector<long> steps;
  for (const auto& m : masses) {
    const long n = g.require_step(m.time, "source time");
    require(n < g.n_steps, ErrorKind::argument, "ARGUMENT", "source time must be below t1");
    require(m.node < g.n_nodes(), ErrorKind::argument, "OFF_GRID", "source node out of range");
    steps.push_back(n);
  }
  std::vector<std::size_t> order(masses.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return steps[a] < steps[b]; });
  const long first = steps[order.front()];

  if (opt.check_truncation) {
    for (const auto& m : masses) {
      const double need = required_half_width(g.point(m.node), g.t1 - m.time, field.Lambda());
      require(g.L >= need * (1 - 1e-12), ErrorKind::geometry, "TRUNCATION",
              fmt::format("half-width {} below required {} for source at t={}", g.L, need, m.time));
    }
  }

  KernelField k;
  k.grid = g;
  k.direction = KernelDirection::forward;
  k.anchor_time = g.time(first);
  k.anchor_node = masses[order.front()].node;
  k.cellvol = g.cellvol();

  const std::size_t nn = g.n_nodes();
  std::vector<double> u(nn, 0.0), next(nn, 0.0);
  detail::Recorder rec(g, opt, first, g.n_steps);
  detail::OperatorCache ops(field, g, opt.strict_monotone);
  std::size_t mi = 0;
  auto inject = [&](long n) {
    while (mi < order.size() && steps[order[mi]] == n) {
      const auto& m = masses[order[mi]];
      u[m.node] += m.weight / k.cellvol;
      ++mi;
    }
  };
  inject(first);
  auto record = [&](long n) {
    k.times.push_back(g.time(n));
    k.values.insert(k.values.end(), u.begin(), u.end());
  };
  record(first);
  for (long n = first; n < g.n_steps; ++n) {
    ops.at(n).apply(g, u, next);
    std::swap(u, next);
    inject(n + 1);
    if (rec.keep(n + 1)) record(n + 1);
  }
  k.monotone = ops.all_monotone();
  return k;
}

/// Gamma(., ., s, y) from a discrete delta at node y, marched to t1.
inline KernelField solve_forward(const CoefficientField& field, const Grid& g, double s,
                                 const Vec& y, const SolveOptions& opt = {}) {
  const std::size_t node = g.require_node(y, "source point");
  require(g.step_of(s).has_value(), ErrorKind::argument, "OFF_TIME_GRID",
          fmt::format("source time {} is not a grid time", s));
  return solve_forward_mixture(field, g, {{s, node, 1.0}}, opt);
}

/// Backward solve with the transposed steps from weighted point masses at
/// (possibly different) target times; marched down to t0.
inline KernelField solve_adjoint_mixture(const CoefficientField& field, const Grid& g,
                                         std::vector<PointMass> masses,
                                         const SolveOptions& opt = {}) {
  require(field.dimension() == g.d, ErrorKind::argument, "ARGUMENT",
          "field dimension differs from grid dimension");
  require(!masses.empty(), ErrorKind::argument, "ARGUMENT", "no terminal masses");
  std::vector<long> steps;
  for (const auto& m : masses) {
    const long n = g.require_step(m.time, "target time");
    require(n > 0, ErrorKind::argument, "ARGUMENT", "target time must exceed t0");
    require(m.node < g.n_nodes(), ErrorKind::argument, "OFF_GRID", "target node out of range");
    steps.push_back(n);
  }
  std::vector<std::size_t> order(masses.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return steps[a] > steps[b]; });
  const long first = steps[order.front()];

  if (opt.check_truncation) {
    for (const auto& m : masses) {
      const double need = required_half_width(g.point(m.node), m.time - g.t0, field.Lambda());
      require(g.L >= need * (1 - 1e-12), ErrorKind::geometry, "TRUNCATION",
              fmt::format("half-width {} below required {} for target at t={}", g.L, need, m.time));
    }
  }

  KernelField k;
  k.grid = g;
  k.direction = KernelDirection::adjoint;
  k.anchor_time = g.time(first);
  k.anchor_node = masses[order.front()].node;
  k.cellvol = g.cellvol();

  const std::size_t nn = g.n_nodes();
  std::vector<double> v(nn, 0.0), next(nn, 0.0);
  detail::Recorder rec(g, opt, first, 0);
  detail::OperatorCache ops(field, g, opt.strict_monotone);
  std::size_t mi = 0;
  auto inject = [&](long n) {
    while (mi < order.size() && steps[order[mi]] == n) {
      const auto& m = masses[order[mi]];
      v[m.node] += m.weight / k.cellvol;
      ++mi;
    }
  };
  std::vector<double> times;
  std::vector<std::vector<double>> slices;
  inject(first);
  times.push_back(g.time(first));
  slices.push_back(v);
  for (long n = first; n > 0; --n) {
    // step n-1 -> n used the operator frozen at t_{n-1}
    ops.at(n - 1).apply_transpose(g, v, next);
    std::swap(v, next);
    inject(n - 1);
    if (rec.keep(n - 1)) {
      times.push_back(g.time(n - 1));
      slices.push_back(v);
    }
  }
  for (std::size_t i = times.size(); i-- > 0;) {
    k.times.push_back(times[i]);
    k.values.insert(k.values.end(), slices[i].begin(), slices[i].end());
  }
  k.monotone = ops.all_monotone();
  return k;
}

/// Gamma(t, x, ., .) as a function of (s, y) for s in [t0, t].
inline KernelField solve_adjoint(const CoefficientField& field, const Grid& g, double t,
                                 const Vec& x, const SolveOptions& opt = {}) {
  const std::size_t node = g.require_node(x, "target point");
  require(g.step_of(t).has_value(), ErrorKind::argument, "OFF_TIME_GRID",
          fmt::format("target time {} is not a grid time", t));
  return solve_adjoint_mixture(field, g, {{t, node, 1.0}}, opt);
}

/// Midpoint-rule integral of the slice at `time` over the discrete ball
/// {nodes : |x - centre| <= radius}. A radius of zero is the empty ball.
inline double ball_integral(const KernelField& k, double time, const Vec& centre, double radius) {
  const Grid& g = k.grid;
  require(centre.size() == g.d, ErrorKind::argument, "ARGUMENT", "centre dimension mismatch");
  require(radius >= 0, ErrorKind::argument, "ARGUMENT", "radius must be non-negative");
  for (int a = 0; a < g.d; ++a)
    require(centre(a) - radius >= -g.L - 1e-12 && centre(a) + radius <= g.L + 1e-12,
            ErrorKind::geometry, "GEOMETRY",
            fmt::format("ball of radius {} clipped by the grid boundary", radius));
  if (radius == 0) return 0.0;
  const auto slice = k.slice(k.require_slice(time));
  const double r2 = radius * radius * (1 + 1e-12);
  const int lo0 = std::max(0, static_cast<int>(std::floor((centre(0) - radius + g.L) / g.dx)));
  const int hi0 = std::min(g.nx - 1, static_cast<int>(std::ceil((centre(0) + radius + g.L) / g.dx)));
  int lo1 = 0, hi1 = 0;
  if (g.d == 2) {
    lo1 = std::max(0, static_cast<int>(std::floor((centre(1) - radius + g.L) / g.dx)));
    hi1 = std::min(g.nx - 1, static_cast<int>(std::ceil((centre(1) + radius + g.L) / g.dx)));
  }
  CompensatedSum s;
  for (int j = lo1; j <= hi1; ++j)
    for (int i = lo0; i <= hi0; ++i) {
      double dist2 = std::pow(g.coord(i) - centre(0), 2);
      if (g.d == 2) dist2 += std::pow(g.coord(j) - centre(1), 2);
      if (dist2 <= r2) s.add(slice[g.flat(i, j)]);
    }
  return s.value() * k.cellvol;
}

/// Sum over interior nodes of the slice, times cellvol.
inline double slice_mass(const KernelField& k, std::size_t slice_index) {
  CompensatedSum s;
  for (double v : k.slice(slice_index)) s.add(v);
  return s.value() * k.cellvol;
}

/// Max-norm discrepancy between Gamma(t,.,s,y) and the composition
/// sum_z Gamma(t,.,tau,z) Gamma(tau,z,s,y) cellvol. The left factor is
/// obtained from adjoint solves anchored at each checked target node, so the
/// two sides come from independent marches. Targets are every
/// `target_stride`-th interior node.
inline double chapman_kolmogorov_check(const CoefficientField& field, const Grid& g, double s,
                                       const Vec& y, double tau, double t, int target_stride = 1) {
  require(s < tau && tau < t, ErrorKind::argument, "ARGUMENT", "need s < tau < t");
  g.require_step(tau, "mid time");
  g.require_step(t, "end time");
  SolveOptions opt;
  opt.record_times = std::vector<double>{tau, t};
  const KernelField fwd = solve_forward(field, g, s, y, opt);
  const auto mid = fwd.slice(fwd.require_slice(tau));
  const auto end = fwd.slice(fwd.require_slice(t));
  const std::size_t nn = g.n_nodes();
  std::vector<std::size_t> targets;
  for (std::size_t x = 0; x < nn; x += static_cast<std::size_t>(target_stride))
    if (!g.is_boundary(x)) targets.push_back(x);
  std::vector<double> resid(targets.size(), 0.0);
  const Grid sub = time_window(g, tau, t);
  parallel_for(targets.size(), [&](std::size_t i) {
    SolveOptions aopt;
    aopt.check_truncation = false;
    aopt.record_times = std::vector<double>{sub.t0};
    const KernelField adj = solve_adjoint_mixture(field, sub, {{sub.t1, targets[i], 1.0}}, aopt);
    const auto left = adj.slice(adj.require_slice(sub.t0));
    CompensatedSum acc;
    for (std::size_t z = 0; z < nn; ++z) acc.add(left[z] * mid[z]);
    resid[i] = std::abs(end[targets[i]] - acc.value() * g.cellvol());
  });
  return resid.empty() ? 0.0 : *std::max_element(resid.begin(), resid.end());
}

}  // namespace pklab
