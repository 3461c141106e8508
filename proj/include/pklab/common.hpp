#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pklab {

// Small fixed-capacity dense types: spatial dimension never exceeds 3, so no
// heap allocation happens in inner loops.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 3, 3>;

inline constexpr double pi = 3.14159265358979323846;

enum class ErrorKind {
  argument,
  geometry,
  evaluation,
  scheme,
  resolution,
  config,
  construction,
  precondition,
  decomposition,
  simulation,
  estimation,
  io,
};

/// Base for every failure raised by the library. The tag is a short
/// machine-readable identifier (e.g. "NONMONOTONE_SCHEME") that the CLI
/// prints verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string tag, const std::string& what)
      : std::runtime_error(what), kind_(kind), tag_(std::move(tag)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& tag() const noexcept { return tag_; }

 private:
  ErrorKind kind_;
  std::string tag_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string tag, const std::string& what) {
  throw Error(kind, std::move(tag), what);
}

inline void require(bool ok, ErrorKind kind, const char* tag, const std::string& what) {
  if (!ok) fail(kind, tag, what);
}

/// Neumaier compensated summation. Results do not depend on the order in
/// which parallel partial sums are merged beyond the last ulp.
class CompensatedSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  void merge(const CompensatedSum& o) noexcept {
    add(o.sum_);
    add(o.comp_);
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline std::atomic<unsigned>& max_threads_slot() {
  static std::atomic<unsigned> slot{0};
  return slot;
}

/// Caps worker threads used by parallel_for. 0 means hardware concurrency.
inline void set_max_threads(unsigned n) { max_threads_slot().store(n); }

inline unsigned worker_count(std::size_t work_items) {
  unsigned n = max_threads_slot().load();
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(1, work_items)));
}

/// Runs fn(i) for i in [0, n). Work is statically partitioned; callers
/// write results into per-index slots so output never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned workers = worker_count(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Independent random stream for work item `index` derived from `seed`.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x9e3779b9u};
  return std::mt19937_64(seq);
}

inline Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

inline Vec from_std(const std::vector<double>& xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) v(static_cast<Eigen::Index>(i)) = xs[i];
  return v;
}

/// Least-squares slope of ys against xs.
inline double ls_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace pklab
