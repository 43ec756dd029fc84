#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssmuse {

using cplx = std::complex<double>;

/// Thrown when an operation's preconditions are violated (bad shapes, ranks,
/// out-of-range parameters).
class DomainError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure inside an iterative solver.
class SolverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Dims3 {
  std::size_t nx = 0, ny = 0, nz = 0;

  std::size_t voxels() const { return nx * ny * nz; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (x * ny + y) * nz + z;
  }
  bool operator==(const Dims3&) const = default;
};

std::string to_string(const Dims3& d);

/// A single 3D volume, x slowest and z fastest.
template <class T>
struct Volume {
  Dims3 dims;
  std::vector<T> data;

  Volume() = default;
  explicit Volume(Dims3 d, T fill = T{}) : dims(d), data(d.voxels(), fill) {}

  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data[dims.index(x, y, z)]; }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z) const {
    return data[dims.index(x, y, z)];
  }
};

/// A stack of same-shaped 3D volumes stored volume-major. Used for the
/// spatial factor (one volume per basis coefficient) and for coil maps (one
/// volume per receiver).
template <class T>
struct VolumeStack {
  Dims3 dims;
  std::size_t count = 0;
  std::vector<T> data;

  VolumeStack() = default;
  VolumeStack(Dims3 d, std::size_t n, T fill = T{}) : dims(d), count(n), data(d.voxels() * n, fill) {}

  std::span<T> volume(std::size_t i) { return {data.data() + i * dims.voxels(), dims.voxels()}; }
  std::span<const T> volume(std::size_t i) const {
    return {data.data() + i * dims.voxels(), dims.voxels()};
  }
  T& at(std::size_t i, std::size_t x, std::size_t y, std::size_t z) {
    return data[i * dims.voxels() + dims.index(x, y, z)];
  }
  const T& at(std::size_t i, std::size_t x, std::size_t y, std::size_t z) const {
    return data[i * dims.voxels() + dims.index(x, y, z)];
  }
  bool same_shape(const VolumeStack& o) const { return dims == o.dims && count == o.count; }
};

using SpatialFactor = VolumeStack<cplx>;

/// Row-major complex 2D slice (rows x cols).
struct Slice2D {
  std::size_t rows = 0, cols = 0;
  std::vector<cplx> data;

  Slice2D() = default;
  Slice2D(std::size_t r, std::size_t c, cplx fill = {}) : rows(r), cols(c), data(r * c, fill) {}
  cplx& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const cplx& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// Elementwise helpers over flat complex storage.
double norm2(std::span<const cplx> a);  // squared L2 norm
cplx inner(std::span<const cplx> a, std::span<const cplx> b);  // sum conj(a) * b
double real_inner(std::span<const cplx> a, std::span<const cplx> b);  // Re<a, b>
void axpy(cplx alpha, std::span<const cplx> x, std::span<cplx> y);  // y += alpha x
bool all_finite(std::span<const cplx> a);

}  // namespace ssmuse

namespace ssmuse {

/// Keeps freed large blocks in the heap instead of returning them to the OS
/// (the conv layers allocate and free many medium-sized matrices). No-op
/// outside glibc. Call once at program start.
void configure_allocator();

}  // namespace ssmuse
