#include "qflow/io.hpp"

#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qflow/error.hpp"
#include "qflow/sphharm.hpp"

namespace qflow::io {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "QFLOW1";
constexpr const char* kMomentumMagic = "QFLOWM1";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad(const fs::path& path, const std::string& what) {
  throw Error(ErrorKind::Format, path.string() + ": " + what);
}

double parse_double(const std::string& tok, const fs::path& path) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE) bad(path, "bad number '" + tok + "'");
  return v;
}

long parse_int(const std::string& tok, const fs::path& path) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE) bad(path, "bad integer '" + tok + "'");
  return v;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Input, "cannot open " + path.string());
  return in;
}

std::vector<std::string> expect(std::istream& in, const fs::path& path, const std::string& key, size_t n) {
  std::string line;
  if (!std::getline(in, line)) bad(path, "truncated header, expected '" + key + "'");
  auto t = tokens(line);
  if (t.empty() || t[0] != key || t.size() != n + 1) bad(path, "expected '" + key + "' with " + std::to_string(n) + " values");
  t.erase(t.begin());
  return t;
}

void write_doubles(std::ostream& out, const double* v, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (size_t i = 0; i < n; ++i) {
      const auto u = __builtin_bswap64(std::bit_cast<std::uint64_t>(v[i]));
      out.write(reinterpret_cast<const char*>(&u), sizeof u);
    }
  }
}

void read_doubles(std::istream& in, double* v, size_t n, const fs::path& path) {
  in.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<size_t>(in.gcount()) != n * sizeof(double)) bad(path, "payload is truncated");
  if constexpr (std::endian::native != std::endian::little) {
    for (size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(__builtin_bswap64(std::bit_cast<std::uint64_t>(v[i])));
  }
}

void expect_eof(std::istream& in, const fs::path& path) {
  if (in.peek() != std::char_traits<char>::eof()) bad(path, "trailing bytes after payload");
}

template <class Body>
void write_atomic(const fs::path& path, Body&& body) {
  fs::path tmp = path;
  tmp += ".part";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Input, "cannot write " + path.string());
    try {
      body(out);
      out.flush();
      if (!out) throw Error(ErrorKind::Input, "write failed for " + path.string());
    } catch (...) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw;
    }
  }
  fs::rename(tmp, path);
}

}  // namespace

Volume read_volume(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) bad(path, "missing QFLOW1 magic");

  Volume v;
  const auto d = expect(in, path, "dims", 3);
  const auto h = expect(in, path, "spacing", 3);
  const auto o = expect(in, path, "origin", 3);
  std::array<int, 3> dims{};
  Vec3 spacing, origin;
  for (int a = 0; a < 3; ++a) {
    const long n = parse_int(d[static_cast<size_t>(a)], path);
    if (n < 1 || n > (1 << 16)) bad(path, "dimension out of range");
    dims[static_cast<size_t>(a)] = static_cast<int>(n);
    spacing[a] = parse_double(h[static_cast<size_t>(a)], path);
    origin[a] = parse_double(o[static_cast<size_t>(a)], path);
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]) || !std::isfinite(origin[a])) bad(path, "bad spacing or origin");
  }
  v.grid = field::Grid(dims, spacing, origin);

  if (!std::getline(in, line)) bad(path, "missing channel descriptor");
  const auto ch = tokens(line);
  if (ch.size() < 2 || ch[0] != "channels") bad(path, "missing channel descriptor");
  if (ch[1] == "scalar" && ch.size() == 2) {
    v.kind = ChannelKind::Scalar;
    v.channels = 1;
  } else if (ch[1] == "vec3" && ch.size() == 2) {
    v.kind = ChannelKind::Vec3;
    v.channels = 3;
  } else if (ch[1] == "samples" && ch.size() == 3) {
    v.kind = ChannelKind::Samples;
    const long k = parse_int(ch[2], path);
    if (k < 1 || k > 100000) bad(path, "sample count out of range");
    v.channels = static_cast<int>(k);
  } else if (ch[1] == "bfor" && ch.size() == 5) {
    v.kind = ChannelKind::Bfor;
    const long L = parse_int(ch[2], path), Nb = parse_int(ch[3], path);
    const double tau = parse_double(ch[4], path);
    if (L < 0 || L > 32 || Nb < 1 || Nb > 64) bad(path, "basis order out of range");
    try {
      v.spec = bfor::BasisSpec(static_cast<int>(L), static_cast<int>(Nb), tau);
    } catch (const Error& e) {
      bad(path, e.what());
    }
    v.channels = v.spec->size();
    for (int n = 1; n <= v.spec->radial_order(); ++n) {
      for (int j = 0; j < v.spec->sh_terms(); ++j) {
        const auto row = expect(in, path, "c", 3);
        const sh::ShIndex idx = sh::index_of(j);
        if (parse_int(row[0], path) != n || parse_int(row[1], path) != idx.l || parse_int(row[2], path) != idx.m) {
          bad(path, "channel table does not match the basis");
        }
      }
    }
    const auto b = expect(in, path, "boundary", static_cast<size_t>(v.channels));
    for (const auto& t : b) v.boundary.push_back(parse_double(t, path));
  } else {
    bad(path, "unknown channel descriptor '" + line + "'");
  }
  if (!std::getline(in, line) || line != "end") bad(path, "missing header terminator");

  v.data.resize(v.grid.count() * static_cast<size_t>(v.channels));
  read_doubles(in, v.data.data(), v.data.size(), path);
  expect_eof(in, path);
  return v;
}

void write_volume(const fs::path& path, const Volume& v) {
  if (v.data.size() != v.grid.count() * static_cast<size_t>(v.channels)) {
    throw Error(ErrorKind::Dimension, "volume payload size mismatch");
  }
  std::ostringstream hdr;
  hdr << kMagic << '\n';
  hdr << "dims " << v.grid.dims[0] << ' ' << v.grid.dims[1] << ' ' << v.grid.dims[2] << '\n';
  hdr << "spacing " << fmt(v.grid.spacing.x()) << ' ' << fmt(v.grid.spacing.y()) << ' ' << fmt(v.grid.spacing.z()) << '\n';
  hdr << "origin " << fmt(v.grid.origin.x()) << ' ' << fmt(v.grid.origin.y()) << ' ' << fmt(v.grid.origin.z()) << '\n';
  switch (v.kind) {
    case ChannelKind::Scalar: hdr << "channels scalar\n"; break;
    case ChannelKind::Vec3: hdr << "channels vec3\n"; break;
    case ChannelKind::Samples: hdr << "channels samples " << v.channels << '\n'; break;
    case ChannelKind::Bfor: {
      if (!v.spec || v.spec->size() != v.channels || v.boundary.size() != static_cast<size_t>(v.channels)) {
        throw Error(ErrorKind::Dimension, "bfor volume needs a matching basis and boundary");
      }
      const auto& s = *v.spec;
      hdr << "channels bfor " << s.order() << ' ' << s.radial_order() << ' ' << fmt(s.tau()) << '\n';
      for (int n = 1; n <= s.radial_order(); ++n) {
        for (int j = 0; j < s.sh_terms(); ++j) {
          const sh::ShIndex idx = sh::index_of(j);
          hdr << "c " << n << ' ' << idx.l << ' ' << idx.m << '\n';
        }
      }
      hdr << "boundary";
      for (double b : v.boundary) hdr << ' ' << fmt(b);
      hdr << '\n';
      break;
    }
  }
  hdr << "end\n";
  write_atomic(path, [&](std::ostream& out) {
    out << hdr.str();
    write_doubles(out, v.data.data(), v.data.size());
  });
}

Volume to_volume(const field::CoefficientField& f) {
  Volume v;
  v.grid = f.grid();
  v.kind = ChannelKind::Bfor;
  v.channels = f.channels();
  v.spec = f.spec();
  v.boundary = f.boundary();
  v.data = f.data();
  return v;
}

Volume to_volume(const field::ScalarField& f) {
  Volume v;
  v.grid = f.grid;
  v.data = f.values;
  return v;
}

Volume to_volume(const field::DeformationField& phi) {
  Volume v;
  v.grid = phi.grid();
  v.kind = ChannelKind::Vec3;
  v.channels = 3;
  v.data.resize(phi.grid().count() * 3);
  for (size_t i = 0; i < phi.grid().count(); ++i) {
    const Vec3 u = phi.displacement(i);
    for (int a = 0; a < 3; ++a) v.data[3 * i + static_cast<size_t>(a)] = u[a];
  }
  return v;
}

Volume samples_volume(const field::Grid& grid, int samples, std::vector<double> data) {
  if (samples < 1 || data.size() != grid.count() * static_cast<size_t>(samples)) {
    throw Error(ErrorKind::Dimension, "sample volume size mismatch");
  }
  Volume v;
  v.grid = grid;
  v.kind = ChannelKind::Samples;
  v.channels = samples;
  v.data = std::move(data);
  return v;
}

field::CoefficientField coefficient_field(const Volume& v) {
  if (v.kind != ChannelKind::Bfor || !v.spec) throw Error(ErrorKind::Input, "volume does not hold BFOR coefficients");
  field::CoefficientField f(v.grid, *v.spec);
  f.data() = v.data;
  f.set_boundary(v.boundary);
  return f;
}

field::ScalarField scalar_field(const Volume& v) {
  if (v.kind != ChannelKind::Scalar) throw Error(ErrorKind::Input, "volume is not scalar");
  field::ScalarField f(v.grid);
  f.values = v.data;
  return f;
}

field::DeformationField deformation_field(const Volume& v) {
  if (v.kind != ChannelKind::Vec3) throw Error(ErrorKind::Input, "volume is not a vec3 deformation");
  std::vector<Vec3> map(v.grid.count());
  for (size_t i = 0; i < map.size(); ++i) {
    map[i] = v.grid.point(i) + Vec3(v.data[3 * i], v.data[3 * i + 1], v.data[3 * i + 2]);
  }
  return field::DeformationField(v.grid, std::move(map));
}

void write_momentum(const fs::path& path, const lddmm::MomentumTrajectory& m) {
  if (m.alpha.size() != static_cast<size_t>(m.steps)) throw Error(ErrorKind::Dimension, "momentum step count mismatch");
  write_atomic(path, [&](std::ostream& out) {
    out << kMomentumMagic << '\n'
        << "steps " << m.steps << '\n'
        << "sigma " << fmt(m.sigma) << '\n'
        << "stride " << m.stride << '\n'
        << "points " << m.points() << '\n'
        << "end\n";
    for (const Vec3& c : m.control) write_doubles(out, c.data(), 3);
    for (const auto& step : m.alpha) {
      if (step.size() != m.points()) throw Error(ErrorKind::Dimension, "momentum point count mismatch");
      for (const Vec3& a : step) write_doubles(out, a.data(), 3);
    }
  });
}

lddmm::MomentumTrajectory read_momentum(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != kMomentumMagic) bad(path, "missing QFLOWM1 magic");
  lddmm::MomentumTrajectory m;
  const long steps = parse_int(expect(in, path, "steps", 1)[0], path);
  m.sigma = parse_double(expect(in, path, "sigma", 1)[0], path);
  const long stride = parse_int(expect(in, path, "stride", 1)[0], path);
  const long points = parse_int(expect(in, path, "points", 1)[0], path);
  if (steps < 1 || steps > 10000 || stride < 1 || points < 0 || points > (1L << 26) || !(m.sigma > 0.0)) {
    bad(path, "momentum header out of range");
  }
  if (!std::getline(in, line) || line != "end") bad(path, "missing header terminator");
  m.steps = static_cast<int>(steps);
  m.stride = static_cast<int>(stride);
  m.control.resize(static_cast<size_t>(points));
  for (Vec3& c : m.control) read_doubles(in, c.data(), 3, path);
  m.alpha.assign(static_cast<size_t>(steps), std::vector<Vec3>(static_cast<size_t>(points)));
  for (auto& step : m.alpha) {
    for (Vec3& a : step) read_doubles(in, a.data(), 3, path);
  }
  expect_eof(in, path);
  return m;
}

void write_scheme(const fs::path& path, const phantom::EncodingScheme& s) {
  const auto q = s.qvectors();
  const auto b = s.bvalues();
  write_atomic(path, [&](std::ostream& out) {
    out << "# qx qy qz (mm^-1) b (s/mm^2)\n";
    for (size_t i = 0; i < q.size(); ++i) {
      out << fmt(q[i].x()) << ' ' << fmt(q[i].y()) << ' ' << fmt(q[i].z()) << ' ' << fmt(b[i]) << '\n';
    }
  });
}

phantom::EncodingScheme read_scheme(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::vector<Vec3> q;
  std::vector<double> b;
  for (std::string line; std::getline(in, line);) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto t = tokens(line);
    if (t.empty()) continue;
    if (t.size() != 4) bad(path, "scheme rows need 4 columns");
    q.emplace_back(parse_double(t[0], path), parse_double(t[1], path), parse_double(t[2], path));
    b.push_back(parse_double(t[3], path));
    if (b.back() < 0.0 || !q.back().allFinite()) bad(path, "invalid scheme row");
  }
  if (q.empty()) bad(path, "scheme has no rows");
  return phantom::scheme_from_rows(q, b);
}

std::map<std::string, std::string> read_config(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::map<std::string, std::string> out;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) bad(path, "line " + std::to_string(lineno) + " is not key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) bad(path, "line " + std::to_string(lineno) + " has an empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace qflow::io
