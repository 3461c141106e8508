#pragma once

// Run configuration and subcommands of the pklab executable. The config
// grammar is documented in README.md; every mapping rejects unknown keys.

#include "pklab/diffusion.hpp"
#include "pklab/envelope.hpp"

#include <Eigen/Core>
#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace pklab::cli {

inline constexpr const char* version = "0.1.0";

enum class Exit : int { ok = 0, config = 2, numerical = 3, check_failed = 4 };

inline Exit exit_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::argument:
    case ErrorKind::construction:
    case ErrorKind::io:
      return Exit::config;
    default:
      return Exit::numerical;
  }
}

// ---------------------------------------------------------------------------
// YAML access
// ---------------------------------------------------------------------------

namespace yaml {

inline void check_keys(const YAML::Node& n, const std::string& path,
                       const std::set<std::string>& allowed) {
  if (!n) return;
  if (!n.IsMap()) fail(ErrorKind::config, "CONFIG_TYPE", fmt::format("'{}' must be a mapping", path));
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key))
      fail(ErrorKind::config, "CONFIG_UNKNOWN_KEY",
           fmt::format("unknown key '{}{}{}'", path, path.empty() ? "" : ".", key));
  }
}

template <class T>
T as(const YAML::Node& n, const std::string& path) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    fail(ErrorKind::config, "CONFIG_TYPE", fmt::format("'{}' has the wrong type", path));
  }
}

template <class T>
T get(const YAML::Node& parent, const std::string& path, const std::string& key, T fallback) {
  if (!parent || !parent[key]) return fallback;
  return as<T>(parent[key], path.empty() ? key : path + "." + key);
}

template <class T>
T need(const YAML::Node& parent, const std::string& path, const std::string& key) {
  const std::string full = path.empty() ? key : path + "." + key;
  if (!parent || !parent[key]) fail(ErrorKind::config, "CONFIG_MISSING", fmt::format("'{}' is required", full));
  return as<T>(parent[key], full);
}

inline Vec vec(const YAML::Node& parent, const std::string& path, const std::string& key, const Vec& fallback) {
  if (!parent || !parent[key]) return fallback;
  return from_std(as<std::vector<double>>(parent[key], path + "." + key));
}

}  // namespace yaml

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

struct GridSpec {
  int d = 1;
  double L = 4;
  int nx = 401;
  double t0 = 0;
  double t1 = 0.1;
  double safety = 0.5;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output = "pklab_out";
  unsigned threads = 0;
  bool strict_monotone = false;
  FieldKind kind = FieldKind::constant;
  FieldParams field;
  GridSpec grid;
  YAML::Node root;
  std::string source_text;

  YAML::Node section(const std::string& name) const { return root[name]; }
  double T() const { return grid.t1 - grid.t0; }
  double R0() const { return std::sqrt(T()); }
};

inline const std::set<std::string> top_keys{"seed",  "output", "threads", "strict_monotone", "field",
                                            "grid",  "kernel", "verify",  "envelope",        "chain",
                                            "dmo",   "mc"};

inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  c.source_text = text;
  try {
    c.root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::config, "CONFIG_PARSE", fmt::format("config is not valid YAML: {}", e.what()));
  }
  if (!c.root || c.root.IsNull()) c.root = YAML::Node(YAML::NodeType::Map);
  yaml::check_keys(c.root, "", top_keys);
  c.seed = yaml::get<std::uint64_t>(c.root, "", "seed", 1);
  c.output = yaml::get<std::string>(c.root, "", "output", "pklab_out");
  c.threads = yaml::get<unsigned>(c.root, "", "threads", 0);
  c.strict_monotone = yaml::get<bool>(c.root, "", "strict_monotone", false);

  const YAML::Node g = c.root["grid"];
  yaml::check_keys(g, "grid", {"d", "L", "nx", "t0", "t1", "safety"});
  c.grid.d = yaml::get<int>(g, "grid", "d", 1);
  c.grid.L = yaml::get<double>(g, "grid", "L", 4.0);
  c.grid.nx = yaml::get<int>(g, "grid", "nx", 401);
  c.grid.t0 = yaml::get<double>(g, "grid", "t0", 0.0);
  c.grid.t1 = yaml::get<double>(g, "grid", "t1", 0.1);
  c.grid.safety = yaml::get<double>(g, "grid", "safety", 0.5);

  const YAML::Node f = c.root["field"];
  yaml::check_keys(f, "field", {"kind", "lambda", "Lambda", "label", "matrix", "base", "amp", "freq",
                                "alpha", "offdiag", "cell", "low", "high"});
  FieldParams& p = c.field;
  c.kind = parse_field_kind(yaml::get<std::string>(f, "field", "kind", "constant"));
  p.d = c.grid.d;
  p.lambda = yaml::get<double>(f, "field", "lambda", 1.0);
  p.Lambda = yaml::get<double>(f, "field", "Lambda", 1.0);
  p.label = yaml::get<std::string>(f, "field", "label", "");
  if (f && f["matrix"]) {
    const auto rows = yaml::as<std::vector<std::vector<double>>>(f["matrix"], "field.matrix");
    p.matrix = Mat::Zero(static_cast<Eigen::Index>(rows.size()),
                         rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == rows.size(), ErrorKind::config, "CONFIG_FIELD", "field.matrix must be square");
      for (std::size_t j = 0; j < rows.size(); ++j) p.matrix(i, j) = rows[i][j];
    }
  }
  p.base = yaml::get<double>(f, "field", "base", 1.0);
  p.amp = yaml::get<double>(f, "field", "amp", 0.0);
  p.freq = yaml::get<double>(f, "field", "freq", 1.0);
  p.alpha = yaml::get<double>(f, "field", "alpha", 1.0);
  p.offdiag = yaml::get<double>(f, "field", "offdiag", 0.0);
  p.cell = yaml::get<double>(f, "field", "cell", 0.25);
  p.low = yaml::get<double>(f, "field", "low", 0.5);
  p.high = yaml::get<double>(f, "field", "high", 1.5);

  // preconditions of the field and grid, checked before any compute
  if (!(p.lambda > 0 && p.lambda <= p.Lambda && std::isfinite(p.Lambda)))
    fail(ErrorKind::config, "CONFIG_ELLIPTICITY",
         fmt::format("field needs 0 < lambda <= Lambda, got lambda={} Lambda={}", p.lambda, p.Lambda));
  if (c.grid.d != 1 && c.grid.d != 2)
    fail(ErrorKind::config, "CONFIG_DIMENSION", fmt::format("grid.d = {} must be 1 or 2", c.grid.d));
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::config, "CONFIG_READ", fmt::format("cannot read config '{}'", path));
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

inline CoefficientField build_field(const RunConfig& c) { return make_field(c.kind, c.field); }

inline Grid build_run_grid(const RunConfig& c) {
  return build_grid(c.grid.d, c.grid.L, c.grid.nx, c.grid.t0, c.grid.t1, c.grid.safety,
                    c.field.Lambda);
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

class Outputs {
 public:
  explicit Outputs(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) fail(ErrorKind::io, "IO", fmt::format("cannot create output directory '{}'", dir_));
  }
  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }
  std::ofstream open(const std::string& name) {
    files_.push_back(name);
    return open_output(path(name));
  }
  const std::vector<std::string>& files() const { return files_; }

 private:
  std::string dir_;
  std::vector<std::string> files_;
};

/// Config echo, versions and seed. The only file carrying a timestamp.
inline void write_manifest(Outputs& out, const std::string& command, const RunConfig& c) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  auto os = open_output(out.path("manifest.txt"));
  os << "command=" << command << '\n'
     << "pklab_version=" << version << '\n'
     << "eigen_version=" << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.'
     << EIGEN_MINOR_VERSION << '\n'
     << "fmt_version=" << FMT_VERSION << '\n'
     << "compiler=" << __VERSION__ << '\n'
     << "seed=" << c.seed << '\n'
     << "threads=" << c.threads << '\n'
     << "strict_monotone=" << (c.strict_monotone ? "true" : "false") << '\n'
     << "timestamp=" << stamp << '\n'
     << "outputs=";
  for (std::size_t i = 0; i < out.files().size(); ++i) os << (i ? "," : "") << out.files()[i];
  os << '\n' << "--- config ---\n" << c.source_text;
  if (!c.source_text.empty() && c.source_text.back() != '\n') os << '\n';
}

struct CommandResult {
  std::string summary;
  Exit code = Exit::ok;
};

namespace detail {

inline SolveOptions solve_options(const RunConfig& c) {
  SolveOptions o;
  o.strict_monotone = c.strict_monotone;
  return o;
}

/// Largest divisor of n not above target, so equally spaced slices end at n.
inline int divisor_stride(long n, long target) {
  for (long k = std::max(1L, std::min(n, target)); k > 1; --k)
    if (n % k == 0) return static_cast<int>(k);
  return 1;
}

inline double snap_to_slice(const KernelField& k, double t) {
  auto it = std::min_element(k.times.begin(), k.times.end(),
                             [t](double a, double b) { return std::abs(a - t) < std::abs(b - t); });
  return *it;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

inline CommandResult cmd_kernel(const RunConfig& c, Outputs& out) {
  const YAML::Node n = c.section("kernel");
  yaml::check_keys(n, "kernel", {"s", "y", "slices", "csv_times", "ondiag_times"});
  const auto field = build_field(c);
  const Grid g = build_run_grid(c);
  const double s = yaml::get<double>(n, "kernel", "s", g.t0);
  const Vec y = yaml::vec(n, "kernel", "y", Vec::Zero(g.d));
  const long first = g.require_step(s, "kernel.s");
  const long span = g.n_steps - first;
  require(span >= 1, ErrorKind::config, "CONFIG_KERNEL", "kernel.s must lie before grid.t1");
  const long slices = yaml::get<long>(n, "kernel", "slices", 100);
  require(slices >= 1, ErrorKind::config, "CONFIG_KERNEL", "kernel.slices must be >= 1");
  SolveOptions opt = detail::solve_options(c);
  opt.record_stride = detail::divisor_stride(span, std::max(1L, span / slices));
  const KernelField k = solve_forward(field, g, s, y, opt);

  std::vector<double> csv_times;
  for (double t : yaml::get<std::vector<double>>(n, "kernel", "csv_times", {g.t1}))
    csv_times.push_back(detail::snap_to_slice(k, t));
  std::vector<double> ondiag;
  if (n && n["ondiag_times"]) {
    for (double t : yaml::as<std::vector<double>>(n["ondiag_times"], "kernel.ondiag_times"))
      ondiag.push_back(detail::snap_to_slice(k, t));
  } else {
    for (std::size_t i = 1; i < k.n_slices(); ++i) ondiag.push_back(k.times[i]);
  }
  std::sort(ondiag.begin(), ondiag.end());
  ondiag.erase(std::unique(ondiag.begin(), ondiag.end()), ondiag.end());
  ondiag.erase(std::remove_if(ondiag.begin(), ondiag.end(), [&](double t) { return t <= s; }), ondiag.end());

  {
    auto os = out.open("kernel.slab");
    write_kernel_slab(os, k);
  }
  {
    auto os = out.open("kernel.csv");
    write_kernel_csv(os, k, csv_times);
  }
  double peak = 0;
  for (double v : k.slice(k.require_slice(csv_times.back()))) peak = std::max(peak, v);
  {
    auto os = out.open("ondiag.csv");
    CsvWriter w(os, {"t", "dt", "gamma"});
    for (double t : ondiag) w.row({t, t - s, k.value_at(t, k.anchor_node)});
  }
  std::string slope = "na";
  if (ondiag.size() >= 4) {
    std::vector<double> dts, vals;
    for (double t : ondiag) {
      dts.push_back(t - s);
      vals.push_back(k.value_at(t, k.anchor_node));
    }
    slope = fmt17(loglog_slope(dts, vals));
  }
  return {fmt::format("kernel peak={} t={} slices={} ondiag_slope={} monotone={}", fmt17(peak),
                      fmt17(csv_times.back()), k.n_slices(), slope, k.monotone ? "true" : "false")};
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct CheckLine {
  std::string name;
  bool pass;
  double margin;  // >= 0 when the check passes
};

inline std::vector<CheckLine> run_verify(const RunConfig& c) {
  const YAML::Node n = c.section("verify");
  yaml::check_keys(n, "verify", {"s", "y", "t", "tau", "points", "radii", "elapsed", "rho",
                                 "barrier_trials", "ck_stride", "tolerance"});
  const auto field = build_field(c);
  const Grid g = build_run_grid(c);
  const int d = g.d;
  const double lam = field.lambda(), Lam = field.Lambda();
  const double s = yaml::get<double>(n, "verify", "s", g.t0);
  const double t = yaml::get<double>(n, "verify", "t", g.t1);
  const Vec y = yaml::vec(n, "verify", "y", Vec::Zero(d));
  const double tol = yaml::get<double>(n, "verify", "tolerance", 0.03);
  std::vector<CheckLine> lines;

  {  // coefficient window on a tensor sample of the grid box
    const auto rep = verify_parabolicity(field, SampleSpec::tensor(d, -g.L, g.L, d == 1 ? 101 : 21,
                                                                   g.t0, g.t1, 5));
    lines.push_back({"parabolicity", rep.ok(),
                     std::min(rep.min_form - lam * (1 - 1e-12), Lam * (1 + 1e-12) - rep.max_form)});
  }
  {  // barrier residual for random admissible matrices
    const int trials = yaml::get<int>(n, "verify", "barrier_trials", 1000);
    auto rng = substream(c.seed, 0);
    std::uniform_real_distribution<double> u(0, 1);
    std::normal_distribution<double> nd(0, 1);
    double worst = std::numeric_limits<double>::infinity();
    for (int i = 0; i < trials; ++i) {
      Mat q(d, d);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) q(a, b) = nd(rng);
      Eigen::HouseholderQR<Mat> qr(q);
      const Mat Q = qr.householderQ();
      Vec ev(d);
      for (int a = 0; a < d; ++a) ev(a) = lam + (Lam - lam) * u(rng);
      const Mat A = Q * ev.asDiagonal() * Q.transpose();
      Vec v(d);
      for (int a = 0; a < d; ++a) v(a) = 6 * u(rng) - 3;
      worst = std::min(worst, barrier_residual(A, v, 0.1 + 9.9 * u(rng), d, lam, Lam));
    }
    lines.push_back({"barrier_residual", worst >= -1e-12, worst + 1e-12});
  }
  SolveOptions base = detail::solve_options(c);
  {  // ball integrals of Gamma(t, x, tau, .) against the barrier bound
    std::vector<Vec> points;
    if (n && n["points"]) {
      for (const auto& pnt : yaml::as<std::vector<std::vector<double>>>(n["points"], "verify.points"))
        points.push_back(pklab::detail::snap_to_grid(g, y + from_std(pnt)));
    } else {
      points.push_back(y);
      Vec e = Vec::Zero(d);
      e(0) = 0.3;
      points.push_back(pklab::detail::snap_to_grid(g, y + e));
      e(0) = 0.8;
      points.push_back(pklab::detail::snap_to_grid(g, y + e));
    }
    const auto radii = yaml::get<std::vector<double>>(n, "verify", "radii", {0.1, 0.2});
    std::vector<double> elapsed =
        yaml::get<std::vector<double>>(n, "verify", "elapsed", {0.025, 0.05, 0.1, 0.2, 0.4});
    elapsed.erase(std::remove_if(elapsed.begin(), elapsed.end(), [&](double e) { return e > t - s + 1e-12; }),
                  elapsed.end());
    double ball = std::numeric_limits<double>::infinity();
    double quarter = std::numeric_limits<double>::infinity();
    for (const Vec& x : points) {
      SolveOptions o = base;
      std::vector<double> rec;
      for (double e : elapsed) rec.push_back(g.time(std::lround((t - e - g.t0) / g.dt)));
      const double r = std::sqrt(t - s) / 2;
      std::vector<double> taus;
      for (int i = 0; i < 8; ++i) {
        const double tau = s + (t - s) / 4 * (i + 0.5) / 8;
        taus.push_back(g.time(std::lround((tau - g.t0) / g.dt)));
      }
      for (double tau : taus) rec.push_back(tau);
      o.record_times = rec;
      const KernelField adj = solve_adjoint(field, g, t, x, o);
      const double dist = (x - y).norm();
      for (double e : elapsed) {
        const double tau = g.time(std::lround((t - e - g.t0) / g.dt));
        for (double rr : radii) {
          const double bound = lemma21_bound(rr, t - tau, dist, d, lam, Lam);
          ball = std::min(ball, 1 - ball_integral(adj, tau, y, rr) / (bound * (1 + tol)));
        }
      }
      CompensatedSum acc;
      for (double tau : taus) acc.add(ball_integral(adj, tau, y, r));
      const double bound = quarter_window_bound(t - s, dist, d, lam, Lam);
      quarter = std::min(quarter, 1 - acc.value() / 8 / (bound * (1 + tol)));
    }
    lines.push_back({"ball_integral_bound", ball >= 0, ball});
    lines.push_back({"quarter_window_average", quarter >= 0, quarter});
  }
  {  // Safonov-Yuan mass floor
    const double rho = yaml::get<double>(n, "verify", "rho", 0.2);
    const Grid gs = build_grid(d, g.L, g.nx, g.t0, g.t0 + rho * rho, c.grid.safety, Lam);
    const auto probes = sy_probe_lattice(gs, rho, g.t0, y, 3, d == 1 ? 5 : 3);
    const auto r = sy_mass_check(field, gs, rho, g.t0, y, probes);
    lines.push_back({"sy_mass_floor", std::isfinite(r.empirical_N1) && r.min_integral() > 0, r.min_integral()});
  }
  {  // Chapman-Kolmogorov on the discrete semigroup
    const double tau = yaml::get<double>(n, "verify", "tau", g.time(std::lround(((s + t) / 2 - g.t0) / g.dt)));
    const int stride = yaml::get<int>(n, "verify", "ck_stride", d == 1 ? 5 : 20);
    Grid gc = g;
    const double res = chapman_kolmogorov_check(field, gc, s, y, tau, t, stride);
    lines.push_back({"chapman_kolmogorov", res <= 1e-10, 1e-10 - res});
  }
  {  // forward/adjoint duality at a pair of nodes
    Vec x = y;
    x(0) += 0.3 * std::sqrt(t - s);
    x = pklab::detail::snap_to_grid(g, x);
    SolveOptions o = base;
    o.record_times = std::vector<double>{t};
    const auto fwd = solve_forward(field, g, s, y, o);
    o.record_times = std::vector<double>{s};
    const auto adj = solve_adjoint(field, g, t, x, o);
    const double a = fwd.value_at(t, x), b = adj.value_at(s, y);
    const double rel = std::abs(a - b) / std::max(1.0, std::abs(a));
    lines.push_back({"duality", rel <= 1e-12, 1e-12 - rel});
  }
  {  // interior rows of the step operator reproduce constants
    double worst = 0;
    for (double tt : {g.t0, 0.5 * (g.t0 + g.t1), g.t1}) {
      const auto op = step_operator(field, g, tt);
      std::vector<double> ones(g.n_nodes(), 1.0), img(g.n_nodes());
      op.apply(g, ones, img);
      for (std::size_t i = 0; i < g.n_nodes(); ++i)
        if (g.boundary_distance(i) >= 2) worst = std::max(worst, std::abs(img[i] - 1));
    }
    lines.push_back({"row_sum", worst <= 1e-10, 1e-10 - worst});
  }
  {  // monotone scheme on the run grid
    double wc = std::numeric_limits<double>::infinity(), wo = std::numeric_limits<double>::infinity();
    for (double tt : {g.t0, 0.5 * (g.t0 + g.t1), g.t1}) {
      const auto op = step_operator(field, g, tt);
      wc = std::min(wc, op.min_centre_weight);
      wo = std::min(wo, op.min_offcentre_weight);
    }
    const double m = std::min(wc, wo);
    if (c.strict_monotone && m < 0)
      fail(ErrorKind::scheme, "NONMONOTONE_SCHEME",
           fmt::format("step operator is not monotone (min centre weight {}, min off-centre weight {})", wc, wo));
    lines.push_back({"monotone_scheme", m >= 0, m});
  }
  return lines;
}

inline CommandResult cmd_verify(const RunConfig& c, Outputs& out) {
  const auto lines = run_verify(c);
  auto os = out.open("verify_report.txt");
  int failed = 0;
  for (const auto& l : lines) {
    os << "name=" << l.name << ", status=" << (l.pass ? "pass" : "fail") << ", margin=" << fmt17(l.margin) << '\n';
    failed += !l.pass;
  }
  CommandResult r;
  r.summary = fmt::format("verify checks={} failed={}", lines.size(), failed);
  if (failed) r.code = Exit::check_failed;
  return r;
}

// ---------------------------------------------------------------------------
// envelope
// ---------------------------------------------------------------------------

inline CommandResult cmd_envelope(const RunConfig& c, Outputs& out) {
  const YAML::Node n = c.section("envelope");
  yaml::check_keys(n, "envelope", {"s", "sources", "offset_step", "offset_count", "elapsed",
                                   "kappa_upper", "kappa_lower", "constants", "measure"});
  const auto field = build_field(c);
  const Grid g = build_run_grid(c);
  const int d = g.d;
  const double s = yaml::get<double>(n, "envelope", "s", g.t0);
  std::vector<Vec> sources;
  if (n && n["sources"]) {
    for (const auto& v : yaml::as<std::vector<std::vector<double>>>(n["sources"], "envelope.sources"))
      sources.push_back(from_std(v));
  } else {
    sources.push_back(Vec::Zero(d));
  }
  // default step: the whole number of cells nearest 0.1
  const double step =
      yaml::get<double>(n, "envelope", "offset_step", g.dx * std::max(1L, std::lround(0.1 / g.dx)));
  const int count = yaml::get<int>(n, "envelope", "offset_count", 10);
  std::vector<double> elapsed = yaml::get<std::vector<double>>(n, "envelope", "elapsed", {});
  if (elapsed.empty())
    for (double t : geometric_times(g, s, (g.t1 - s) / 8, g.t1 - s, 6)) elapsed.push_back(t - s);
  for (double& e : elapsed) e = g.time(std::lround((s + e - g.t0) / g.dt)) - s;

  KernelSampleSpec spec;
  spec.elapsed = elapsed;
  if (d == 1) {
    for (int i = -count; i <= count; ++i) spec.offsets.push_back(make_vec({i * step}));
  } else {
    for (int i = -count; i <= count; ++i)
      for (int j = -count; j <= count; ++j) spec.offsets.push_back(make_vec({i * step, j * step}));
  }
  std::vector<KernelField> kernels;
  std::vector<double> rec;
  for (double e : elapsed) rec.push_back(s + e);
  for (const Vec& y : sources) {
    SolveOptions o = detail::solve_options(c);
    o.record_times = rec;
    kernels.push_back(solve_forward(field, g, s, y, o));
  }
  std::vector<const KernelField*> ptrs;
  for (const auto& k : kernels) ptrs.push_back(&k);
  const auto samples = sample_kernel(ptrs, spec, std::vector<std::string>(sources.size(), field.label()));

  const auto ku = yaml::get<std::vector<double>>(n, "envelope", "kappa_upper", {1, 2, 3, 4, 5, 6, 8});
  const auto kl = yaml::get<std::vector<double>>(n, "envelope", "kappa_lower", {0.125, 0.25, 0.5, 1, 2, 4});
  const auto up = fit_upper(samples, ku);
  const auto lo = fit_lower(samples, kl);
  {
    auto os = out.open("frontier_upper.csv");
    write_frontier_csv(os, up, EnvelopeSide::upper);
  }
  {
    auto os = out.open("frontier_lower.csv");
    write_frontier_csv(os, lo, EnvelopeSide::lower);
  }

  HarnackConstants hc;
  const YAML::Node cn = n ? n["constants"] : YAML::Node();
  if (cn) {
    yaml::check_keys(cn, "envelope.constants", {"N0_lb", "N0_wh", "N1_sy", "N2", "N_ks"});
    hc.N0_lb = yaml::need<double>(cn, "envelope.constants", "N0_lb");
    hc.N0_wh = yaml::need<double>(cn, "envelope.constants", "N0_wh");
    hc.N1_sy = yaml::need<double>(cn, "envelope.constants", "N1_sy");
    hc.N2 = yaml::need<double>(cn, "envelope.constants", "N2");
    hc.N_ks = yaml::need<double>(cn, "envelope.constants", "N_ks");
    hc.R0 = c.R0();
  } else {
    const YAML::Node mn = n ? n["measure"] : YAML::Node();
    yaml::check_keys(mn, "envelope.measure", {"L", "nx", "scales", "trials", "rho", "L_sy", "nx_sy"});
    MeasureOptions mo;
    mo.L = yaml::get<double>(mn, "envelope.measure", "L", mo.L);
    mo.nx = yaml::get<int>(mn, "envelope.measure", "nx", d == 1 ? 401 : 81);
    mo.scales = yaml::get<std::vector<double>>(mn, "envelope.measure", "scales", mo.scales);
    mo.trials = yaml::get<int>(mn, "envelope.measure", "trials", mo.trials);
    mo.rho_sy = yaml::get<double>(mn, "envelope.measure", "rho", mo.rho_sy);
    mo.L_sy = yaml::get<double>(mn, "envelope.measure", "L_sy", mo.L_sy);
    mo.nx_sy = yaml::get<int>(mn, "envelope.measure", "nx_sy", d == 1 ? 801 : 81);
    if (d == 2) mo.sy_nx = 3;
    mo.R0 = c.R0();
    mo.seed = c.seed;
    hc = measure_constants(field, mo);
  }
  const auto upper = upper_envelope(d, field.lambda(), field.Lambda(), hc.N0(), c.T());
  const auto lower = lower_envelope(d, hc);
  const auto rep = sandwich_check(samples, upper, lower, 0.0);
  {
    auto os = out.open("violations.csv");
    write_violation_csv(os, rep);
  }
  {
    auto os = out.open("constants.txt");
    write_constants_report(os, hc);
    write_envelope_report(os, "upper", upper);
    write_envelope_report(os, "lower", lower);
  }
  return {fmt::format("envelope samples={} violations={} N0={} N2={} N_ks={} N1_sy={}", samples.size(),
                      rep.violations.size(), fmt17(hc.N0()), fmt17(hc.N2), fmt17(hc.N_ks), fmt17(hc.N1_sy))};
}

// ---------------------------------------------------------------------------
// chain
// ---------------------------------------------------------------------------

inline CommandResult cmd_chain(const RunConfig& c, Outputs& out) {
  const YAML::Node n = c.section("chain");
  yaml::check_keys(n, "chain", {"x", "y", "t", "s", "sigma", "N2", "N_ks"});
  const int d = c.grid.d;
  const Vec x = yaml::vec(n, "chain", "x", Vec::Zero(d));
  const Vec y = yaml::vec(n, "chain", "y", Vec::Zero(d));
  const double t = yaml::need<double>(n, "chain", "t");
  const double s = yaml::need<double>(n, "chain", "s");
  const double sigma = yaml::get<double>(n, "chain", "sigma", s + (t - s) / 2);
  const ChainPlan p = chain_plan(x, y, t, s, sigma);
  {
    auto os = out.open("chain.csv");
    write_chain_csv(os, p);
  }
  std::string factor;
  if (p.case_tag == ChainCase::chain) {
    const auto f = chain_lower_factor(p, yaml::get<double>(n, "chain", "N2", 2.0));
    factor = fmt::format("factor={} closed_form={}", fmt17(f.factor), fmt17(f.closed_form));
  } else {
    factor = fmt::format("factor={}", fmt17(direct_lower_factor(p, yaml::get<double>(n, "chain", "N_ks", 2.0))));
  }
  return {fmt::format("chain case={} k={} epsilon={} {}", p.case_tag == ChainCase::chain ? "chain" : "direct",
                      p.k, fmt17(p.epsilon), factor)};
}

// ---------------------------------------------------------------------------
// dmo
// ---------------------------------------------------------------------------

inline CommandResult cmd_dmo(const RunConfig& c, Outputs& out) {
  const YAML::Node n = c.section("dmo");
  yaml::check_keys(n, "dmo", {"radii", "samples", "quad_points", "t_lo", "t_hi", "x_lo", "x_hi"});
  const auto field = build_field(c);
  const int d = c.grid.d;
  SpaceTimeBox box;
  box.t_lo = yaml::get<double>(n, "dmo", "t_lo", c.grid.t0);
  box.t_hi = yaml::get<double>(n, "dmo", "t_hi", c.grid.t1);
  box.x_lo = yaml::vec(n, "dmo", "x_lo", Vec::Constant(d, -1.0));
  box.x_hi = yaml::vec(n, "dmo", "x_hi", Vec::Constant(d, 1.0));
  std::vector<double> radii = yaml::get<std::vector<double>>(n, "dmo", "radii", {});
  if (radii.empty()) {
    // default ladder, cut at the largest cylinder the box holds
    double room = std::sqrt(std::max(0.0, box.t_hi - box.t_lo));
    for (int a = 0; a < d; ++a) room = std::min(room, (box.x_hi(a) - box.x_lo(a)) / 2);
    for (int i = 0; i < 7; ++i)
      if (0.005 * std::pow(2.0, i) <= room) radii.push_back(0.005 * std::pow(2.0, i));
  }
  DmoOptions o;
  o.seed = c.seed;
  o.quad_points = yaml::get<int>(n, "dmo", "quad_points", o.quad_points);
  const auto m = dmo_modulus(field, radii, box, yaml::get<int>(n, "dmo", "samples", 16), o);
  {
    auto os = out.open("dmo.csv");
    CsvWriter w(os, {"r", "omega", "envelope", "cumulative"});
    const auto env = m.envelope();
    for (std::size_t i = 0; i < m.radii.size(); ++i) w.row({m.radii[i], m.omega[i], env[i], m.cumulative[i]});
  }
  return {fmt::format("dmo radii={} dini_integral={} power={} is_dini={}", m.radii.size(),
                      fmt17(m.dini_integral), fmt17(m.power), m.is_dini ? "true" : "false")};
}

// ---------------------------------------------------------------------------
// mc
// ---------------------------------------------------------------------------

inline CommandResult cmd_mc(const RunConfig& c, Outputs& out) {
  const YAML::Node n = c.section("mc");
  yaml::check_keys(n, "mc", {"s", "y", "n_paths", "n_steps", "bins"});
  const auto field = build_field(c);
  const Grid g = build_run_grid(c);
  const double s = yaml::get<double>(n, "mc", "s", g.t0);
  const Vec y = yaml::vec(n, "mc", "y", Vec::Zero(g.d));
  const auto n_paths = yaml::get<std::size_t>(n, "mc", "n_paths", 100000);
  const auto n_steps = yaml::get<long>(n, "mc", "n_steps", 200);
  const int bins = yaml::get<int>(n, "mc", "bins", g.d == 1 ? 100 : 40);
  SolveOptions o = detail::solve_options(c);
  o.record_times = std::vector<double>{s};
  const auto k = solve_adjoint(field, g, g.t1, y, o);
  const auto ens = simulate(field, s, y, g.t1, n_paths, n_steps, c.seed);
  const auto cmp = density_compare(ens, k, bins, field.Lambda());
  {
    auto os = out.open("histogram.csv");
    write_histogram_csv(os, cmp);
  }
  return {fmt::format("mc tv={} sup_rel_err_on_core={} n_paths={} n_steps={} bins={}", fmt17(cmp.tv),
                      fmt17(cmp.sup_rel_err_on_core), n_paths, n_steps, bins)};
}

inline CommandResult dispatch(const std::string& command, const RunConfig& c, Outputs& out) {
  if (command != "chain") {
    build_field(c);
    build_run_grid(c);
  }
  if (command == "kernel") return cmd_kernel(c, out);
  if (command == "verify") return cmd_verify(c, out);
  if (command == "envelope") return cmd_envelope(c, out);
  if (command == "chain") return cmd_chain(c, out);
  if (command == "dmo") return cmd_dmo(c, out);
  if (command == "mc") return cmd_mc(c, out);
  fail(ErrorKind::config, "CONFIG_COMMAND", fmt::format("unknown subcommand '{}'", command));
}

}  // namespace pklab::cli
