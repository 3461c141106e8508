#pragma once

#include "pklab/common.hpp"

#include <fmt/format.h>

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pklab {

/// Symmetric coefficient matrix field A(t, x) on R^d with a declared
/// ellipticity window [lambda, Lambda]. Immutable after construction.
class CoefficientField {
 public:
  using Eval = std::function<Mat(double, const Vec&)>;

  CoefficientField(int d, Eval eval, double lambda, double Lambda, std::string label,
                   bool time_independent = false)
      : d_(d),
        eval_(std::move(eval)),
        lambda_(lambda),
        Lambda_(Lambda),
        label_(std::move(label)),
        time_independent_(time_independent) {
    require(d >= 1 && d <= 3, ErrorKind::construction, "CONFIG_DIMENSION",
            fmt::format("dimension {} outside [1, 3]", d));
    require(std::isfinite(lambda) && std::isfinite(Lambda) && lambda > 0 && lambda <= Lambda,
            ErrorKind::construction, "CONFIG_ELLIPTICITY",
            fmt::format("ellipticity window must satisfy 0 < lambda <= Lambda < inf, got [{}, {}]",
                        lambda, Lambda));
    require(static_cast<bool>(eval_), ErrorKind::construction, "CONFIG_FIELD", "empty eval hook");
  }

  int dimension() const noexcept { return d_; }
  double lambda() const noexcept { return lambda_; }
  double Lambda() const noexcept { return Lambda_; }
  const std::string& label() const noexcept { return label_; }
  bool time_independent() const noexcept { return time_independent_; }

  /// Evaluates A(t,x). Throws an evaluation error when the hook returns a
  /// wrongly sized or asymmetric matrix.
  Mat operator()(double t, const Vec& x) const {
    Mat a = eval_(t, x);
    if (a.rows() != d_ || a.cols() != d_)
      fail(ErrorKind::evaluation, "EVAL_SHAPE",
           fmt::format("field '{}' returned {}x{} matrix, expected {}x{}", label_, a.rows(),
                       a.cols(), d_, d_));
    for (int i = 0; i < d_; ++i)
      for (int j = i + 1; j < d_; ++j)
        if (a(i, j) != a(j, i) && !(std::isnan(a(i, j)) && std::isnan(a(j, i))))
          fail(ErrorKind::evaluation, "EVAL_ASYMMETRIC",
               fmt::format("field '{}' returned asymmetric matrix at t={}", label_, t));
    return a;
  }

  /// Returns a copy whose values are multiplied by c; the window scales too.
  CoefficientField scaled(double c) const {
    require(c > 0, ErrorKind::argument, "ARGUMENT", "scale factor must be positive");
    auto inner = eval_;
    return CoefficientField(
        d_, [inner, c](double t, const Vec& x) -> Mat { return c * inner(t, x); }, c * lambda_,
        c * Lambda_, fmt::format("{}*{}", c, label_), time_independent_);
  }

 private:
  int d_;
  Eval eval_;
  double lambda_;
  double Lambda_;
  std::string label_;
  bool time_independent_;
};

// ---------------------------------------------------------------------------
// Parabolicity validation
// ---------------------------------------------------------------------------

struct SamplePoint {
  double t;
  Vec x;
};

/// Finite set of (t, x) points and unit directions xi.
struct SampleSpec {
  std::vector<SamplePoint> points;
  std::vector<Vec> directions;

  /// Tensor grid of n_space points per axis on [lo, hi]^d, n_times times on
  /// [t_lo, t_hi], and the coordinate axes plus n_dirs evenly spread
  /// directions (d = 2) as unit vectors.
  static SampleSpec tensor(int d, double lo, double hi, int n_space, double t_lo, double t_hi,
                           int n_times, int n_dirs = 8) {
    SampleSpec spec;
    const int total = static_cast<int>(std::pow(n_space, d));
    for (int k = 0; k < n_times; ++k) {
      const double t = n_times == 1 ? t_lo : t_lo + (t_hi - t_lo) * k / (n_times - 1);
      for (int flat = 0; flat < total; ++flat) {
        Vec x(d);
        int rem = flat;
        for (int a = 0; a < d; ++a) {
          const int i = rem % n_space;
          rem /= n_space;
          x(a) = n_space == 1 ? lo : lo + (hi - lo) * i / (n_space - 1);
        }
        spec.points.push_back({t, x});
      }
    }
    for (int a = 0; a < d; ++a) {
      Vec e = Vec::Zero(d);
      e(a) = 1.0;
      spec.directions.push_back(e);
    }
    if (d == 2) {
      for (int k = 0; k < n_dirs; ++k) {
        const double th = pi * (k + 0.5) / n_dirs;
        spec.directions.push_back(make_vec({std::cos(th), std::sin(th)}));
      }
    }
    if (d == 3) {
      const double s = 1.0 / std::sqrt(3.0);
      spec.directions.push_back(make_vec({s, s, s}));
      spec.directions.push_back(make_vec({s, -s, s}));
    }
    return spec;
  }
};

struct ParabolicityViolation {
  double t;
  Vec x;
  Vec xi;
  double form;   // xi^T A xi / |xi|^2
  bool below;    // true: form < lambda, false: form > Lambda
};

struct ValidationReport {
  double min_form = std::numeric_limits<double>::infinity();
  double max_form = -std::numeric_limits<double>::infinity();
  std::vector<ParabolicityViolation> violations;

  bool ok() const noexcept { return violations.empty(); }

  /// Violation with the largest excursion outside the window.
  std::optional<ParabolicityViolation> worst(double lambda, double Lambda) const {
    std::optional<ParabolicityViolation> best;
    double excess = -1;
    for (const auto& v : violations) {
      const double e = v.below ? lambda - v.form : v.form - Lambda;
      if (e > excess) {
        excess = e;
        best = v;
      }
    }
    return best;
  }
};

inline ValidationReport verify_parabolicity(const CoefficientField& field,
                                            const SampleSpec& samples) {
  ValidationReport rep;
  const double lam = field.lambda();
  const double Lam = field.Lambda();
  for (const auto& p : samples.points) {
    const Mat a = field(p.t, p.x);
    if (!a.allFinite()) {
      std::string where;
      for (Eigen::Index i = 0; i < p.x.size(); ++i) where += fmt::format("{}{:.17g}", i ? "," : "", p.x(i));
      fail(ErrorKind::evaluation, "EVAL_NONFINITE",
           fmt::format("field '{}' non-finite at t={:.17g}, x=({})", field.label(), p.t, where));
    }
    for (const auto& xi0 : samples.directions) {
      const double q = xi0.dot(a * xi0) / xi0.squaredNorm();
      rep.min_form = std::min(rep.min_form, q);
      rep.max_form = std::max(rep.max_form, q);
      // rounding of the quadratic form is not a violation
      if (q < lam * (1 - 1e-12)) rep.violations.push_back({p.t, p.x, xi0.normalized(), q, true});
      if (q > Lam * (1 + 1e-12)) rep.violations.push_back({p.t, p.x, xi0.normalized(), q, false});
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Field generators
// ---------------------------------------------------------------------------

enum class FieldKind { constant, time_only, smooth_spatial, oscillatory, checkerboard };

inline FieldKind parse_field_kind(const std::string& s) {
  if (s == "constant") return FieldKind::constant;
  if (s == "time_only") return FieldKind::time_only;
  if (s == "smooth_spatial") return FieldKind::smooth_spatial;
  if (s == "oscillatory") return FieldKind::oscillatory;
  if (s == "checkerboard") return FieldKind::checkerboard;
  fail(ErrorKind::config, "CONFIG_FIELD_KIND", "unknown field kind '" + s + "'");
}

inline std::string to_string(FieldKind k) {
  switch (k) {
    case FieldKind::constant: return "constant";
    case FieldKind::time_only: return "time_only";
    case FieldKind::smooth_spatial: return "smooth_spatial";
    case FieldKind::oscillatory: return "oscillatory";
    case FieldKind::checkerboard: return "checkerboard";
  }
  return "?";
}

/// Parameters for make_field. Which members matter depends on the kind:
///
///   constant        matrix
///   time_only       (base + amp*sin(freq*t)) * matrix
///   smooth_spatial  (base + amp*s(x)) * I + offdiag*(E12 + E21), with
///                   s(x) = mean_i sgn(sin(freq*x_i)) |sin(freq*x_i)|^alpha
///   oscillatory     same as smooth_spatial with alpha = 1, freq = n
///   checkerboard    low or high times I on cells of side `cell`, chosen by the
///                   parity of sum_i floor(x_i / cell)
struct FieldParams {
  int d = 1;
  double lambda = 1.0;
  double Lambda = 1.0;
  std::string label;
  Mat matrix;  // empty means identity
  double base = 1.0;
  double amp = 0.0;
  double freq = 1.0;
  double alpha = 1.0;
  double offdiag = 0.0;
  double cell = 0.25;
  double low = 0.5;
  double high = 1.5;
};

namespace detail {

inline void check_window(double lo, double hi, const FieldParams& p, const std::string& what) {
  constexpr double tol = 1e-12;
  if (lo < p.lambda * (1 - tol) || hi > p.Lambda * (1 + tol))
    fail(ErrorKind::construction, "CONFIG_ELLIPTICITY",
         fmt::format("{} spectrum [{}, {}] outside declared window [{}, {}]", what, lo, hi,
                     p.lambda, p.Lambda));
}

inline Mat identity(int d) { return Mat::Identity(d, d); }

}  // namespace detail

inline CoefficientField make_field(FieldKind kind, const FieldParams& p) {
  const int d = p.d;
  require(d >= 1 && d <= 3, ErrorKind::construction, "CONFIG_DIMENSION",
          fmt::format("dimension {} outside [1, 3]", d));
  require(p.lambda > 0 && p.lambda <= p.Lambda && std::isfinite(p.Lambda),
          ErrorKind::construction, "CONFIG_ELLIPTICITY",
          fmt::format("ellipticity window must satisfy 0 < lambda <= Lambda, got [{}, {}]",
                      p.lambda, p.Lambda));
  const Mat m = p.matrix.size() == 0 ? detail::identity(d) : p.matrix;
  std::string label = p.label.empty() ? to_string(kind) : p.label;

  auto spectrum = [](const Mat& a) {
    Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
    return std::pair{es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
  };

  switch (kind) {
    case FieldKind::constant: {
      require(m.rows() == d && m.cols() == d && m.isApprox(m.transpose(), 0.0),
              ErrorKind::construction, "CONFIG_FIELD", "constant matrix must be symmetric d x d");
      auto [lo, hi] = spectrum(m);
      detail::check_window(lo, hi, p, "constant matrix");
      return CoefficientField(
          d, [m](double, const Vec&) { return m; }, p.lambda, p.Lambda, label, true);
    }
    case FieldKind::time_only: {
      require(m.rows() == d && m.cols() == d && m.isApprox(m.transpose(), 0.0),
              ErrorKind::construction, "CONFIG_FIELD", "time_only matrix must be symmetric d x d");
      auto [lo, hi] = spectrum(m);
      const double cmin = p.base - std::abs(p.amp);
      const double cmax = p.base + std::abs(p.amp);
      require(cmin > 0, ErrorKind::construction, "CONFIG_ELLIPTICITY",
              "time_only factor base - |amp| must be positive");
      detail::check_window(cmin * lo, cmax * hi, p, "time_only field");
      const double base = p.base, amp = p.amp, freq = p.freq;
      return CoefficientField(
          d, [m, base, amp, freq](double t, const Vec&) -> Mat {
            return (base + amp * std::sin(freq * t)) * m;
          },
          p.lambda, p.Lambda, label, false);
    }
    case FieldKind::smooth_spatial:
    case FieldKind::oscillatory: {
      const double alpha = kind == FieldKind::oscillatory ? 1.0 : p.alpha;
      require(alpha > 0, ErrorKind::construction, "CONFIG_FIELD", "alpha must be positive");
      require(d >= 2 || p.offdiag == 0.0, ErrorKind::construction, "CONFIG_FIELD",
              "offdiag requires d >= 2");
      const double amin = p.base - std::abs(p.amp) - std::abs(p.offdiag);
      const double amax = p.base + std::abs(p.amp) + std::abs(p.offdiag);
      detail::check_window(amin, amax, p, to_string(kind) + " field");
      const double base = p.base, amp = p.amp, freq = p.freq, off = p.offdiag;
      return CoefficientField(
          d,
          [d, base, amp, freq, alpha, off](double, const Vec& x) -> Mat {
            double s = 0;
            for (int i = 0; i < d; ++i) {
              const double v = std::sin(freq * x(i));
              s += alpha == 1.0 ? v : std::copysign(std::pow(std::abs(v), alpha), v);
            }
            s /= d;
            Mat a = (base + amp * s) * Mat::Identity(d, d);
            if (d >= 2) {
              a(0, 1) = off;
              a(1, 0) = off;
            }
            return a;
          },
          p.lambda, p.Lambda, label, true);
    }
    case FieldKind::checkerboard: {
      require(p.cell > 0, ErrorKind::construction, "CONFIG_FIELD", "cell size must be positive");
      detail::check_window(std::min(p.low, p.high), std::max(p.low, p.high), p,
                           "checkerboard field");
      const double cell = p.cell, low = p.low, high = p.high;
      return CoefficientField(
          d,
          [d, cell, low, high](double, const Vec& x) -> Mat {
            long long parity = 0;
            for (int i = 0; i < d; ++i) parity += static_cast<long long>(std::floor(x(i) / cell));
            const double v = (parity % 2 == 0) ? high : low;
            return v * Mat::Identity(d, d);
          },
          p.lambda, p.Lambda, label, true);
    }
  }
  fail(ErrorKind::construction, "CONFIG_FIELD_KIND", "unhandled field kind");
}

// ---------------------------------------------------------------------------
// Dini mean oscillation
// ---------------------------------------------------------------------------

/// Space-time box [t_lo, t_hi] x prod_i [x_lo_i, x_hi_i].
struct SpaceTimeBox {
  double t_lo = 0;
  double t_hi = 1;
  Vec x_lo;
  Vec x_hi;
};

enum class DiniVerdict { dini, inconclusive };

struct DmoModulus {
  std::vector<double> radii;
  std::vector<double> omega;
  std::vector<double> cumulative;  // tail + integral from radii.front() to r_i
  double dini_integral = 0;        // integral of omega(r)/r over (0, 1]; inf if inconclusive
  double truncated_integral = 0;   // integral over [radii.front(), 1] only
  double tail = 0;                 // extrapolated part below radii.front()
  double power = 0;                // fitted exponent of omega ~ c r^p near 0
  double threshold = 0.05;         // minimum exponent accepted for extrapolation
  DiniVerdict verdict = DiniVerdict::inconclusive;
  bool is_dini = false;

  /// Running maximum of omega over increasing r.
  std::vector<double> envelope() const {
    std::vector<double> out(omega.size());
    double m = 0;
    for (std::size_t i = 0; i < omega.size(); ++i) out[i] = m = std::max(m, omega[i]);
    return out;
  }
};

struct DmoOptions {
  int quad_points = 16;           // midpoint nodes per axis and in time, >= 8
  std::uint64_t seed = 0x5eed;
  double zero_tolerance = 1e-12;  // relative to sup|A|: below this omega counts as zero
  double power_threshold = 0.05;
};

namespace detail {

/// Mean over C_r(X0) = (t0, t0 + r^2) x B_r(x0) of |A - avg_{B_r} A(t)|_F,
/// both integrals by the midpoint rule on a q-point tensor grid.
inline double cylinder_mean_oscillation(const CoefficientField& f, double t0, const Vec& x0,
                                        double r, int q) {
  const int d = f.dimension();
  std::vector<Vec> pts;
  const int total = static_cast<int>(std::pow(q, d));
  for (int flat = 0; flat < total; ++flat) {
    Vec off(d);
    int rem = flat;
    for (int a = 0; a < d; ++a) {
      const int i = rem % q;
      rem /= q;
      off(a) = -r + (2.0 * r) * (i + 0.5) / q;
    }
    if (off.squaredNorm() <= r * r) pts.push_back(x0 + off);
  }
  CompensatedSum outer;
  std::vector<Mat> vals(pts.size());
  for (int k = 0; k < q; ++k) {
    const double t = t0 + r * r * (k + 0.5) / q;
    Mat avg = Mat::Zero(d, d);
    for (std::size_t n = 0; n < pts.size(); ++n) vals[n] = f(t, pts[n]);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        CompensatedSum s;
        for (const auto& v : vals) s.add(v(i, j));
        avg(i, j) = s.value() / static_cast<double>(vals.size());
      }
    CompensatedSum inner;
    for (const auto& v : vals) inner.add((v - avg).norm());
    outer.add(inner.value() / static_cast<double>(vals.size()));
  }
  return outer.value() / q;
}

}  // namespace detail

/// Sampled Dini-mean-oscillation modulus of `field` in x.
///
/// The supremum over all cylinders of radius r is approximated over the
/// deterministic centre and corner cylinders of the admissible centre box
/// plus `samples_per_radius` Latin-hypercube cylinders. The Dini integral
/// is the log-trapezoid integral of omega over [radii.front(), 1] plus a
/// power-law tail omega ~ c r^p below the smallest radius.
inline DmoModulus dmo_modulus(const CoefficientField& field, const std::vector<double>& radii,
                              const SpaceTimeBox& box, int samples_per_radius,
                              const DmoOptions& opt = {}) {
  const int d = field.dimension();
  require(samples_per_radius >= 1, ErrorKind::argument, "ARGUMENT",
          "samples_per_radius must be at least 1");
  require(!radii.empty(), ErrorKind::argument, "ARGUMENT", "radii must be non-empty");
  require(opt.quad_points >= 8, ErrorKind::argument, "ARGUMENT",
          "quadrature needs at least 8 points per axis");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    require(radii[i] > 0 && (i == 0 || radii[i] > radii[i - 1]), ErrorKind::argument, "ARGUMENT",
            "radii must be positive and strictly ascending");
  }
  require(box.x_lo.size() == d && box.x_hi.size() == d, ErrorKind::argument, "ARGUMENT",
          "box dimension mismatch");
  const double rmax = radii.back();
  bool fits = box.t_hi - box.t_lo >= rmax * rmax;
  for (int a = 0; a < d; ++a) fits = fits && (box.x_hi(a) - box.x_lo(a) >= 2 * rmax);
  require(fits, ErrorKind::geometry, "GEOMETRY",
          fmt::format("box cannot contain a cylinder of radius {}", rmax));

  DmoModulus out;
  out.radii = radii;
  out.threshold = opt.power_threshold;
  out.omega.assign(radii.size(), 0.0);

  parallel_for(radii.size(), [&](std::size_t ri) {
    const double r = radii[ri];
    // admissible centre ranges; dimension 0 is time
    std::vector<double> lo(d + 1), hi(d + 1);
    lo[0] = box.t_lo;
    hi[0] = box.t_hi - r * r;
    for (int a = 0; a < d; ++a) {
      lo[a + 1] = box.x_lo(a) + r;
      hi[a + 1] = box.x_hi(a) - r;
    }
    std::vector<std::vector<double>> centres;
    {
      std::vector<double> c(d + 1);
      for (int a = 0; a <= d; ++a) c[a] = 0.5 * (lo[a] + hi[a]);
      centres.push_back(c);
      for (int mask = 0; mask < (1 << (d + 1)); ++mask) {
        for (int a = 0; a <= d; ++a) c[a] = (mask >> a) & 1 ? hi[a] : lo[a];
        centres.push_back(c);
      }
    }
    auto rng = substream(opt.seed, ri);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int n = samples_per_radius;
    std::vector<std::vector<int>> strata(d + 1);
    for (int a = 0; a <= d; ++a) {
      strata[a].resize(n);
      for (int i = 0; i < n; ++i) strata[a][i] = i;
      std::shuffle(strata[a].begin(), strata[a].end(), rng);
    }
    for (int i = 0; i < n; ++i) {
      std::vector<double> c(d + 1);
      for (int a = 0; a <= d; ++a) c[a] = lo[a] + (hi[a] - lo[a]) * (strata[a][i] + u01(rng)) / n;
      centres.push_back(c);
    }
    double best = 0;
    for (const auto& c : centres) {
      Vec x0(d);
      for (int a = 0; a < d; ++a) x0(a) = c[a + 1];
      best = std::max(best, detail::cylinder_mean_oscillation(field, c[0], x0, r, opt.quad_points));
    }
    out.omega[ri] = best;
  });

  // Dini integral over [rmin, 1] in log-r, constant extension of the running
  // max beyond the largest radius when it is below 1.
  const double omax = *std::max_element(out.omega.begin(), out.omega.end());
  double sup_a = 0;  // scale for the zero test
  {
    Vec mid(d);
    for (int a = 0; a < d; ++a) mid(a) = 0.5 * (box.x_lo(a) + box.x_hi(a));
    sup_a = field(0.5 * (box.t_lo + box.t_hi), mid).norm();
  }
  const bool zero = omax <= opt.zero_tolerance * std::max(1.0, sup_a);

  const std::size_t n = radii.size();
  out.cumulative.assign(n, 0.0);
  std::vector<double> part(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double a = radii[i - 1], b = std::min(radii[i], 1.0);
    double seg = 0;
    if (a < 1.0) {
      // linear interpolation of omega in log r when truncating at 1
      const double wb = radii[i] <= 1.0
                            ? out.omega[i]
                            : out.omega[i - 1] + (out.omega[i] - out.omega[i - 1]) *
                                                     std::log(b / a) / std::log(radii[i] / a);
      seg = 0.5 * (out.omega[i - 1] + wb) * std::log(b / a);
    }
    part[i] = part[i - 1] + seg;
  }
  double body = part[n - 1];
  if (radii.back() < 1.0) {
    const auto env = out.envelope();
    body += env.back() * std::log(1.0 / radii.back());
  }

  if (zero) {
    out.power = 0;
    out.tail = 0;
    out.verdict = DiniVerdict::dini;
  } else {
    // fit on the lower half of the radii with positive omega
    std::vector<double> lx, ly;
    const std::size_t m = std::max<std::size_t>(2, (n + 1) / 2);
    for (std::size_t i = 0; i < std::min(m, n); ++i)
      if (out.omega[i] > 0) {
        lx.push_back(std::log(radii[i]));
        ly.push_back(std::log(out.omega[i]));
      }
    out.power = lx.size() >= 2 ? ls_slope(lx, ly) : 0.0;
    if (out.power >= opt.power_threshold && out.omega[0] > 0) {
      out.tail = out.omega[0] / out.power;
      out.verdict = DiniVerdict::dini;
    } else {
      out.tail = std::numeric_limits<double>::infinity();
      out.verdict = DiniVerdict::inconclusive;
    }
  }
  out.is_dini = out.verdict == DiniVerdict::dini;
  out.truncated_integral = body;
  const double tail_for_cum = out.is_dini ? out.tail : 0.0;
  for (std::size_t i = 0; i < n; ++i) out.cumulative[i] = tail_for_cum + part[i];
  out.dini_integral = out.is_dini ? out.tail + body : std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace pklab
