#pragma once

#include "pklab/pde.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace pklab {

/// Round-trip formatting: 17 significant digits.
inline std::string fmt17(double v) { return fmt::format("{:.17g}", v); }

/// Comma-separated rows with a header, LF line endings.
class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os) { row_text(header); }

  void row(const std::vector<double>& values) {
    std::string line;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) line += ',';
      line += fmt17(values[i]);
    }
    line += '\n';
    os_ << line;
  }
  void row_text(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += cells[i];
    }
    line += '\n';
    os_ << line;
  }

 private:
  std::ostream& os_;
};

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::io, "IO", "cannot open '" + path + "' for writing");
  return os;
}

/// Kernel slices as CSV: t, x (or x1, x2), gamma. Writes the slices at
/// `times` (all slices when empty).
inline void write_kernel_csv(std::ostream& os, const KernelField& k,
                             const std::vector<double>& times = {}) {
  const Grid& g = k.grid;
  std::vector<std::string> header{"t"};
  if (g.d == 1) {
    header.push_back("x");
  } else {
    header.push_back("x1");
    header.push_back("x2");
  }
  header.push_back("gamma");
  CsvWriter w(os, header);
  std::vector<std::size_t> idx;
  if (times.empty()) {
    for (std::size_t i = 0; i < k.n_slices(); ++i) idx.push_back(i);
  } else {
    for (double t : times) idx.push_back(k.require_slice(t));
  }
  for (std::size_t si : idx) {
    const auto s = k.slice(si);
    for (std::size_t n = 0; n < g.n_nodes(); ++n) {
      const auto ij = g.index(n);
      if (g.d == 1)
        w.row({k.times[si], g.coord(ij[0]), s[n]});
      else
        w.row({k.times[si], g.coord(ij[0]), g.coord(ij[1]), s[n]});
    }
  }
}

// ---------------------------------------------------------------------------
// Binary slab: little-endian.
//   magic "PKRN" | version u32 | d u32 | nx u32 | nt u32 |
//   s f64 | y f64[d] | t0 f64 | dt f64 | dx f64 | values f64[nt * nx^d]
// t0 is the time of the first stored slice and dt the slice spacing, so
// slice k sits at t0 + k dt. Only forward kernels with equally spaced slices
// are representable.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t slab_version = 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_f64(std::string& buf, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class ByteReader {
 public:
  explicit ByteReader(std::istream& is) : is_(is) {}
  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
  }
  void read(unsigned char* p, std::size_t n) {
    is_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      fail(ErrorKind::io, "SLAB_TRUNCATED", "kernel slab ended early");
  }

 private:
  std::istream& is_;
};

}  // namespace detail

inline void write_kernel_slab(std::ostream& os, const KernelField& k) {
  require(k.direction == KernelDirection::forward, ErrorKind::argument, "ARGUMENT",
          "only forward kernels can be written as slabs");
  require(k.n_slices() >= 1, ErrorKind::argument, "ARGUMENT", "empty kernel");
  const double spacing = k.n_slices() > 1 ? k.times[1] - k.times[0] : k.grid.dt;
  for (std::size_t i = 1; i < k.n_slices(); ++i)
    require(std::abs(k.times[i] - k.times[0] - spacing * static_cast<double>(i)) <= 1e-6 * k.grid.dt,
            ErrorKind::argument, "ARGUMENT", "slab format needs equally spaced slices");
  const Grid& g = k.grid;
  std::string buf = "PKRN";
  detail::put_u32(buf, slab_version);
  detail::put_u32(buf, static_cast<std::uint32_t>(g.d));
  detail::put_u32(buf, static_cast<std::uint32_t>(g.nx));
  detail::put_u32(buf, static_cast<std::uint32_t>(k.n_slices()));
  detail::put_f64(buf, k.anchor_time);
  const Vec y = k.anchor_point();
  for (int a = 0; a < g.d; ++a) detail::put_f64(buf, y(a));
  detail::put_f64(buf, k.times.front());
  detail::put_f64(buf, spacing);
  detail::put_f64(buf, g.dx);
  buf.reserve(buf.size() + k.values.size() * 8);
  for (double v : k.values) detail::put_f64(buf, v);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) fail(ErrorKind::io, "IO", "failed writing kernel slab");
}

/// Reloads a slab. The grid's dt is the slice spacing, t0 the first slice
/// time and t1 the last, so times and nodes index exactly as written.
inline KernelField read_kernel_slab(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "PKRN", 4) != 0)
    fail(ErrorKind::io, "SLAB_MAGIC", "not a kernel slab (bad magic)");
  detail::ByteReader r(is);
  const auto version = r.u32();
  if (version != slab_version)
    fail(ErrorKind::io, "SLAB_VERSION", fmt::format("unsupported slab version {}", version));
  KernelField k;
  Grid& g = k.grid;
  g.d = static_cast<int>(r.u32());
  g.nx = static_cast<int>(r.u32());
  const auto nt = r.u32();
  if ((g.d != 1 && g.d != 2) || g.nx < 2 || nt < 1)
    fail(ErrorKind::io, "SLAB_HEADER", "corrupt slab header");
  k.anchor_time = r.f64();
  Vec y(g.d);
  for (int a = 0; a < g.d; ++a) y(a) = r.f64();
  g.t0 = r.f64();
  g.dt = r.f64();
  g.dx = r.f64();
  g.L = 0.5 * g.dx * (g.nx - 1);
  g.n_steps = static_cast<long>(nt) - 1;
  g.t1 = g.time(g.n_steps);
  k.direction = KernelDirection::forward;
  k.cellvol = g.cellvol();
  k.anchor_node = g.require_node(y, "slab source");
  k.times.resize(nt);
  for (std::uint32_t i = 0; i < nt; ++i) k.times[i] = g.time(i);
  k.values.resize(static_cast<std::size_t>(nt) * g.n_nodes());
  for (auto& v : k.values) v = r.f64();
  return k;
}

}  // namespace pklab
