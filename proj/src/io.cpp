#include "ssmuse/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ssmuse {

namespace fs = std::filesystem;

namespace {

constexpr char magic[4] = {'S', 'S', 'M', 'A'};

template <class T>
void put_le(std::ostream& os, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(bytes, sizeof(T));
}

template <class T>
T get_le(std::istream& is, const fs::path& path) {
  char bytes[sizeof(T)];
  if (!is.read(bytes, sizeof(T))) throw IoError("read_array: truncated file " + path.string());
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

std::size_t product(const std::vector<std::uint64_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

void write_header(std::ostream& os, Dtype dtype, const std::vector<std::uint64_t>& shape) {
  if (shape.size() > 255) throw IoError("write_array: too many dimensions");
  os.write(magic, 4);
  put_le<std::uint16_t>(os, ssma_version);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
  for (auto s : shape) put_le<std::uint64_t>(os, s);
}

void finish(std::ofstream& os, const fs::path& path) {
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

const Array& expect(const Array& a, Dtype dtype, std::size_t ndim, const fs::path& path) {
  if (a.dtype != dtype || a.shape.size() != ndim)
    throw IoError(path.string() + ": expected " + std::to_string(ndim) + "-d " +
                  (dtype == Dtype::f64 ? "float64" : "complex128") + " array");
  return a;
}

Dims3 dims_from(const std::vector<std::uint64_t>& s, std::size_t offset) {
  return {static_cast<std::size_t>(s[offset]), static_cast<std::size_t>(s[offset + 1]),
          static_cast<std::size_t>(s[offset + 2])};
}

}  // namespace

std::size_t Array::elements() const { return product(shape); }

void write_array(const fs::path& path, const std::vector<std::uint64_t>& shape, std::span<const double> data) {
  if (product(shape) != data.size()) throw IoError("write_array: shape does not match data size");
  auto os = open_out(path);
  write_header(os, Dtype::f64, shape);
  for (double v : data) put_le<double>(os, v);
  finish(os, path);
}

void write_array(const fs::path& path, const std::vector<std::uint64_t>& shape, std::span<const cplx> data) {
  if (product(shape) != data.size()) throw IoError("write_array: shape does not match data size");
  auto os = open_out(path);
  write_header(os, Dtype::c128, shape);
  for (const cplx& v : data) {
    put_le<double>(os, v.real());
    put_le<double>(os, v.imag());
  }
  finish(os, path);
}

Array read_array(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char m[4];
  if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0) throw IoError(path.string() + ": not an SSMA file");
  const auto version = get_le<std::uint16_t>(is, path);
  if (version != ssma_version) throw IoError(path.string() + ": unsupported SSMA version " + std::to_string(version));
  const auto code = get_le<std::uint8_t>(is, path);
  if (code > 1) throw IoError(path.string() + ": unknown dtype code " + std::to_string(code));
  Array a;
  a.dtype = static_cast<Dtype>(code);
  const auto ndim = get_le<std::uint8_t>(is, path);
  for (std::size_t i = 0; i < ndim; ++i) a.shape.push_back(get_le<std::uint64_t>(is, path));
  const std::size_t n = product(a.shape);
  if (a.dtype == Dtype::f64) {
    a.real.resize(n);
    for (auto& v : a.real) v = get_le<double>(is, path);
  } else {
    a.complex.resize(n);
    for (auto& v : a.complex) {
      const double re = get_le<double>(is, path);
      v = {re, get_le<double>(is, path)};
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes after data");
  return a;
}

// ---------------------------------------------------------------------------

void save_factor(const fs::path& path, const SpatialFactor& u) {
  write_array(path, {u.count, u.dims.nx, u.dims.ny, u.dims.nz}, std::span<const cplx>(u.data));
}

SpatialFactor load_factor(const fs::path& path) {
  Array a = read_array(path);
  expect(a, Dtype::c128, 4, path);
  SpatialFactor u(dims_from(a.shape, 1), static_cast<std::size_t>(a.shape[0]));
  u.data = std::move(a.complex);
  return u;
}

void save_volume(const fs::path& path, const RealVolume& v) {
  write_array(path, {v.dims.nx, v.dims.ny, v.dims.nz}, std::span<const double>(v.data));
}

RealVolume load_volume(const fs::path& path) {
  Array a = read_array(path);
  expect(a, Dtype::f64, 3, path);
  RealVolume v(dims_from(a.shape, 0));
  v.data = std::move(a.real);
  return v;
}

void save_volume(const fs::path& path, const ComplexVolume& v) {
  write_array(path, {v.dims.nx, v.dims.ny, v.dims.nz}, std::span<const cplx>(v.data));
}

ComplexVolume load_complex_volume(const fs::path& path) {
  Array a = read_array(path);
  expect(a, Dtype::c128, 3, path);
  ComplexVolume v(dims_from(a.shape, 0));
  v.data = std::move(a.complex);
  return v;
}

void save_mask(const fs::path& path, const Mask& m) {
  std::vector<double> d(m.data.begin(), m.data.end());
  write_array(path, {m.dims.nx, m.dims.ny, m.dims.nz}, std::span<const double>(d));
}

Mask load_mask(const fs::path& path) {
  const RealVolume v = load_volume(path);
  Mask m(v.dims);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] != 0.0 && v.data[i] != 1.0) throw IoError(path.string() + ": mask values must be 0 or 1");
    m.data[i] = v.data[i] != 0.0;
  }
  return m;
}

void save_trajectory(const fs::path& path, const Trajectory& t) {
  std::vector<double> d;
  d.reserve(t.n_frames() * t.samples_per_frame() * 3);
  for (const auto& f : t.frames) {
    if (f.size() != t.samples_per_frame()) throw IoError("save_trajectory: inconsistent frame size");
    for (const auto& k : f) d.insert(d.end(), k.begin(), k.end());
  }
  write_array(path, {t.n_frames(), t.spokes_per_frame, t.samples_per_spoke, 3}, std::span<const double>(d));
}

Trajectory load_trajectory(const fs::path& path, std::size_t grid_size) {
  const Array a = read_array(path);
  expect(a, Dtype::f64, 4, path);
  if (a.shape[3] != 3) throw IoError(path.string() + ": last trajectory dimension must be 3");
  Trajectory t;
  t.spokes_per_frame = static_cast<std::size_t>(a.shape[1]);
  t.samples_per_spoke = static_cast<std::size_t>(a.shape[2]);
  t.grid_size = grid_size;
  t.frames.resize(static_cast<std::size_t>(a.shape[0]));
  std::size_t i = 0;
  for (auto& f : t.frames) {
    f.resize(t.samples_per_frame());
    for (auto& k : f) {
      k = {a.real[i], a.real[i + 1], a.real[i + 2]};
      i += 3;
    }
  }
  return t;
}

void save_kspace(const fs::path& path, const KSpaceData& k) {
  write_array(path, {k.frames, k.samples, k.coils}, std::span<const cplx>(k.data));
}

KSpaceData load_kspace(const fs::path& path) {
  Array a = read_array(path);
  expect(a, Dtype::c128, 3, path);
  KSpaceData k;
  k.frames = static_cast<std::size_t>(a.shape[0]);
  k.samples = static_cast<std::size_t>(a.shape[1]);
  k.coils = static_cast<std::size_t>(a.shape[2]);
  k.data = std::move(a.complex);
  return k;
}

void save_matrix(const fs::path& path, const Eigen::MatrixXd& m) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  write_array(path, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
              std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
}

Eigen::MatrixXd load_matrix(const fs::path& path) {
  const Array a = read_array(path);
  expect(a, Dtype::f64, 2, path);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a.real[i++];
  return m;
}

void save_basis(const fs::path& path, const TemporalBasis& b) { save_matrix(path, b.v); }

TemporalBasis load_basis(const fs::path& path) {
  TemporalBasis b;
  b.v = load_matrix(path);
  return b;
}

// ---------------------------------------------------------------------------

std::string arch_to_text(const NetworkArch& arch, std::uint64_t seed) {
  std::ostringstream os;
  os << "# ssmuse energy network\nversion = 1\nchannels =";
  if (!arch.layers.empty()) os << ' ' << arch.layers.front().in_channels;
  for (const auto& l : arch.layers) os << ' ' << l.out_channels;
  os << "\nkernels =";
  for (const auto& l : arch.layers) os << ' ' << l.kernel;
  os << "\nactivation = " << to_string(arch.activation) << "\nresidual = " << (arch.residual ? "true" : "false")
     << "\nseed = " << seed << '\n';
  return os.str();
}

NetworkArch arch_from_text(const std::string& text, std::uint64_t* seed) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::size_t> channels, kernels;
  NetworkArch arch;
  while (std::getline(is, line)) {
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) throw IoError("arch: malformed line '" + line + "'");
      continue;
    }
    std::istringstream key_s(line.substr(0, eq)), val_s(line.substr(eq + 1));
    std::string key, word;
    key_s >> key;
    if (key == "channels" || key == "kernels") {
      auto& dst = key == "channels" ? channels : kernels;
      std::size_t v;
      while (val_s >> v) dst.push_back(v);
    } else if (key == "activation") {
      val_s >> word;
      arch.activation = activation_from_string(word);
    } else if (key == "residual") {
      val_s >> word;
      if (word != "true" && word != "false") throw IoError("arch: residual must be true or false");
      arch.residual = word == "true";
    } else if (key == "version") {
      int version = 0;
      val_s >> version;
      if (version != 1) throw IoError("arch: unsupported descriptor version");
    } else if (key == "seed") {
      std::uint64_t s = 0;
      val_s >> s;
      if (seed) *seed = s;
    } else {
      throw IoError("arch: unknown key '" + key + "'");
    }
  }
  if (channels.size() < 2 || kernels.size() != channels.size() - 1)
    throw IoError("arch: need channels c0 .. cL and one kernel per layer");
  for (std::size_t i = 0; i + 1 < channels.size(); ++i) arch.layers.push_back({channels[i], channels[i + 1], kernels[i]});
  arch.validate();
  return arch;
}

void save_model(const fs::path& stem, const EnergyModelParams& p) {
  write_text(fs::path(stem.string() + ".arch"), arch_to_text(p.arch, p.seed));
  write_array(fs::path(stem.string() + ".weights.ssma"), {p.weights.size()}, std::span<const double>(p.weights));
}

EnergyModelParams load_model(const fs::path& stem) {
  EnergyModelParams p;
  p.arch = arch_from_text(read_text(fs::path(stem.string() + ".arch")), &p.seed);
  Array a = read_array(fs::path(stem.string() + ".weights.ssma"));
  if (a.dtype != Dtype::f64 || a.shape.size() != 1 || a.elements() != p.arch.weight_count())
    throw IoError("load_model: weight file does not match architecture");
  p.weights = std::move(a.real);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  finish(os, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace ssmuse
