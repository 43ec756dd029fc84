#include "ssmuse/energy.hpp"

#include <cmath>

namespace ssmuse {

namespace {

void require_finite(const Slice2D& s, const char* where) {
  if (s.data.size() != s.rows * s.cols || s.rows == 0 || s.cols == 0)
    throw DomainError(std::string(where) + ": malformed slice");
  if (!all_finite(s.data)) throw DomainError(std::string(where) + ": non-finite slice values");
}

nn::Shape2 shape_of(const Slice2D& s) { return {s.rows, s.cols}; }

}  // namespace

nn::Tensor to_channels(const Slice2D& slice) {
  nn::Tensor t(2, static_cast<Eigen::Index>(slice.data.size()));
  for (std::size_t p = 0; p < slice.data.size(); ++p) {
    t(0, static_cast<Eigen::Index>(p)) = slice.data[p].real();
    t(1, static_cast<Eigen::Index>(p)) = slice.data[p].imag();
  }
  return t;
}

Slice2D from_channels(const nn::Tensor& t, std::size_t rows, std::size_t cols) {
  Slice2D s(rows, cols);
  for (std::size_t p = 0; p < s.data.size(); ++p)
    s.data[p] = {t(0, static_cast<Eigen::Index>(p)), t(1, static_cast<Eigen::Index>(p))};
  return s;
}

Slice2D psi_apply(const EnergyModelParams& params, const Slice2D& slice) {
  require_finite(slice, "psi_apply");
  const nn::Network net(params);
  return from_channels(net.forward(to_channels(slice), shape_of(slice)), slice.rows, slice.cols);
}

double energy_2d(const EnergyModelParams& params, const Slice2D& slice) {
  require_finite(slice, "energy_2d");
  const nn::Network net(params);
  return net.energy(to_channels(slice), shape_of(slice));
}

Slice2D score_2d(const EnergyModelParams& params, const Slice2D& slice) {
  require_finite(slice, "score_2d");
  const nn::Network net(params);
  return from_channels(net.score(to_channels(slice), shape_of(slice)), slice.rows, slice.cols);
}

// ---------------------------------------------------------------------------

std::size_t slice_count(Dims3 dims, Orientation o) {
  switch (o) {
    case Orientation::x: return dims.nx;
    case Orientation::y: return dims.ny;
    case Orientation::z: return dims.nz;
  }
  return 0;
}

namespace {

// Maps slice coordinates (i, j) to a voxel for the given orientation/index.
struct SliceGeometry {
  std::size_t rows, cols;
  Dims3 d;
  Orientation o;
  std::size_t index;

  SliceGeometry(Dims3 dims, Orientation orient, std::size_t idx) : d(dims), o(orient), index(idx) {
    switch (o) {
      case Orientation::x: rows = d.ny, cols = d.nz; break;
      case Orientation::y: rows = d.nx, cols = d.nz; break;
      default: rows = d.nx, cols = d.ny; break;
    }
  }
  std::size_t voxel(std::size_t i, std::size_t j) const {
    switch (o) {
      case Orientation::x: return d.index(index, i, j);
      case Orientation::y: return d.index(i, index, j);
      default: return d.index(i, j, index);
    }
  }
};

void check_slice_args(const SpatialFactor& u, std::size_t basis, Orientation o, std::size_t index) {
  if (basis >= u.count) throw DomainError("slice: basis index out of range");
  if (index >= slice_count(u.dims, o)) throw DomainError("slice: slice index out of range");
}

}  // namespace

Slice2D extract_slice(const SpatialFactor& u, std::size_t basis, Orientation o, std::size_t index) {
  check_slice_args(u, basis, o, index);
  const SliceGeometry geo(u.dims, o, index);
  Slice2D s(geo.rows, geo.cols);
  const auto vol = u.volume(basis);
  for (std::size_t i = 0; i < geo.rows; ++i)
    for (std::size_t j = 0; j < geo.cols; ++j) s(i, j) = vol[geo.voxel(i, j)];
  return s;
}

void insert_slice(SpatialFactor& u, std::size_t basis, Orientation o, std::size_t index, const Slice2D& s) {
  check_slice_args(u, basis, o, index);
  const SliceGeometry geo(u.dims, o, index);
  if (s.rows != geo.rows || s.cols != geo.cols) throw DomainError("insert_slice: slice shape mismatch");
  auto vol = u.volume(basis);
  for (std::size_t i = 0; i < geo.rows; ++i)
    for (std::size_t j = 0; j < geo.cols; ++j) vol[geo.voxel(i, j)] = s(i, j);
}

double energy_orientation(const EnergyModelParams& params, const SpatialFactor& u, Orientation o) {
  if (!all_finite(u.data)) throw DomainError("energy_orientation: non-finite spatial factor");
  const nn::Network net(params);
  double total = 0.0;
  for (std::size_t r = 0; r < u.count; ++r)
    for (std::size_t m = 0; m < slice_count(u.dims, o); ++m) {
      const Slice2D s = extract_slice(u, r, o, m);
      total += net.energy(to_channels(s), shape_of(s));
    }
  return total;
}

SpatialFactor score_orientation(const EnergyModelParams& params, const SpatialFactor& u, Orientation o,
                                double* energy_out) {
  if (!all_finite(u.data)) throw DomainError("score_orientation: non-finite spatial factor");
  const nn::Network net(params);
  SpatialFactor g(u.dims, u.count);
  double total = 0.0;
  for (std::size_t r = 0; r < u.count; ++r)
    for (std::size_t m = 0; m < slice_count(u.dims, o); ++m) {
      const Slice2D s = extract_slice(u, r, o, m);
      double e = 0.0;
      insert_slice(g, r, o, m, from_channels(net.score(to_channels(s), shape_of(s), &e), s.rows, s.cols));
      total += e;
    }
  if (energy_out) *energy_out = total;
  return g;
}

double energy_4d(const EnergyModelParams& params, const SpatialFactor& u) {
  return 0.5 * (energy_orientation(params, u, Orientation::x) + energy_orientation(params, u, Orientation::y));
}

SpatialFactor score_4d(const EnergyModelParams& params, const SpatialFactor& u) {
  SpatialFactor g = score_orientation(params, u, Orientation::x);
  const SpatialFactor gy = score_orientation(params, u, Orientation::y);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = 0.5 * (g.data[i] + gy.data[i]);
  return g;
}

}  // namespace ssmuse
