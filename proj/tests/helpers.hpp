#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "ssmuse/array.hpp"
#include "ssmuse/forward.hpp"
#include "ssmuse/network.hpp"
#include "ssmuse/seqsim.hpp"

namespace testutil {

using ssmuse::cplx;

inline std::vector<cplx> random_complex(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<cplx> v(n);
  for (auto& x : v) x = {g(rng), g(rng)};
  return v;
}

inline ssmuse::SpatialFactor random_factor(ssmuse::Dims3 d, std::size_t r, std::mt19937_64& rng,
                                           double scale = 1.0) {
  ssmuse::SpatialFactor u(d, r);
  u.data = random_complex(u.data.size(), rng, scale);
  return u;
}

inline ssmuse::Slice2D random_slice(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 0.5) {
  ssmuse::Slice2D s(rows, cols);
  s.data = random_complex(s.data.size(), rng, scale);
  return s;
}

inline double rel_diff(std::span<const cplx> a, std::span<const cplx> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - b[i]);
    den += std::norm(b[i]);
  }
  return std::sqrt(num / den);
}

/// Random coil maps (no structure), for operator identities.
inline ssmuse::CoilMaps random_coils(ssmuse::Dims3 d, std::size_t c, std::mt19937_64& rng) {
  ssmuse::CoilMaps m(d, c);
  m.data = random_complex(m.data.size(), rng);
  return m;
}

/// Trajectory with uniformly random k-space points (kz on the integer grid).
inline ssmuse::Trajectory random_trajectory(std::size_t frames, std::size_t samples, ssmuse::Dims3 d,
                                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(-double(d.nx) / 2, double(d.nx) / 2);
  std::uniform_real_distribution<double> uy(-double(d.ny) / 2, double(d.ny) / 2);
  std::uniform_int_distribution<int> uz(-int(d.nz / 2), int(d.nz) - int(d.nz / 2) - 1);
  ssmuse::Trajectory t;
  t.spokes_per_frame = 1;
  t.samples_per_spoke = samples;
  t.grid_size = d.nx;
  t.frames.resize(frames);
  for (auto& f : t.frames)
    for (std::size_t s = 0; s < samples; ++s) f.push_back({ux(rng), uy(rng), double(uz(rng))});
  return t;
}

/// Every frame samples the full Cartesian grid, so the operator is invertible.
inline ssmuse::Trajectory cartesian_trajectory(std::size_t frames, ssmuse::Dims3 d) {
  ssmuse::Trajectory t;
  t.spokes_per_frame = 1;
  t.samples_per_spoke = d.voxels();
  t.grid_size = d.nx;
  t.frames.resize(frames);
  for (auto& f : t.frames)
    for (std::size_t x = 0; x < d.nx; ++x)
      for (std::size_t y = 0; y < d.ny; ++y)
        for (std::size_t z = 0; z < d.nz; ++z)
          f.push_back({double(x) - double(d.nx / 2), double(y) - double(d.ny / 2), double(z) - double(d.nz / 2)});
  return t;
}

/// Random orthonormal R x T basis.
inline ssmuse::TemporalBasis random_basis(std::size_t r, std::size_t t, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(t, r);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  ssmuse::TemporalBasis b;
  b.v = (qr.householderQ() * Eigen::MatrixXd::Identity(t, r)).transpose();
  return b;
}

/// Short sequence for fast unit tests.
inline ssmuse::SequenceParams short_sequence(std::size_t echoes = 16) {
  return ssmuse::SequenceParams::desk_scale(echoes);
}

/// Small network for derivative checks.
inline ssmuse::NetworkArch small_arch(bool residual = true,
                                      ssmuse::Activation act = ssmuse::Activation::silu) {
  ssmuse::NetworkArch a;
  a.layers = {{2, 6, 3}, {6, 6, 3}, {6, 2, 3}};
  a.activation = act;
  a.residual = residual;
  return a;
}

/// Weights with random biases as well (init_network leaves them at zero).
inline ssmuse::EnergyModelParams random_params(const ssmuse::NetworkArch& arch, std::uint64_t seed,
                                               double scale = 0.3) {
  ssmuse::EnergyModelParams p;
  p.arch = arch;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  p.weights.resize(arch.weight_count());
  for (auto& w : p.weights) w = g(rng);
  return p;
}

/// Exact multicoil DFT matrix entry: coil * exp(-2 pi i k . r).
inline cplx dft_entry(const ssmuse::KPoint& k, ssmuse::Dims3 d, std::size_t x, std::size_t y, std::size_t z) {
  const double ph = -2.0 * std::numbers::pi *
                    (k[0] * ssmuse::voxel_position(x, d.nx) + k[1] * ssmuse::voxel_position(y, d.ny) +
                     k[2] * ssmuse::voxel_position(z, d.nz));
  return std::polar(1.0, ph);
}

}  // namespace testutil
