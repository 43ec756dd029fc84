#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ssmuse/array.hpp"
#include "ssmuse/seqsim.hpp"

namespace ssmuse {

/// k-space location in cycles/FOV.
using KPoint = std::array<double, 3>;

/// Per-frame (per-TI) sample sets. Samples inside a frame are grouped as
/// `spokes_per_frame` spokes of `samples_per_spoke` consecutive samples.
struct Trajectory {
  std::vector<std::vector<KPoint>> frames;
  std::size_t spokes_per_frame = 0;
  std::size_t samples_per_spoke = 0;
  std::size_t grid_size = 0;
  std::vector<double> angles;  // frame-major, one per spoke

  std::size_t n_frames() const { return frames.size(); }
  std::size_t samples_per_frame() const { return spokes_per_frame * samples_per_spoke; }
};

using CoilMaps = VolumeStack<cplx>;

/// Multicoil samples laid out frames x samples x coils (coil fastest).
struct KSpaceData {
  std::size_t frames = 0, samples = 0, coils = 0;
  std::vector<cplx> data;
  double noise_sigma = 0.0;

  KSpaceData() = default;
  KSpaceData(std::size_t f, std::size_t s, std::size_t c) : frames(f), samples(s), coils(c), data(f * s * c) {}

  cplx& at(std::size_t f, std::size_t s, std::size_t c) { return data[(f * samples + s) * coils + c]; }
  const cplx& at(std::size_t f, std::size_t s, std::size_t c) const { return data[(f * samples + s) * coils + c]; }
  std::span<cplx> frame(std::size_t f) { return {data.data() + f * samples * coils, samples * coils}; }
  std::span<const cplx> frame(std::size_t f) const { return {data.data() + f * samples * coils, samples * coils}; }
};

/// 2D golden-angle radial spokes (kz = 0). Spoke j overall has angle
/// offset + j * golden angle (mod pi); the offset is drawn from `ordering_seed`.
Trajectory make_radial_trajectory(std::size_t n_frames, std::size_t spokes_per_frame, std::size_t readout_len,
                                  std::size_t grid_size, std::uint64_t ordering_seed);

/// Replicates each 2D spoke over the Cartesian kz planes -nz/2 .. nz/2-1.
Trajectory stack_of_stars(const Trajectory& radial, std::size_t nz);

/// Keeps the first `keep` spokes of every frame.
Trajectory subsample_spokes(const Trajectory& traj, std::size_t keep);
KSpaceData subsample_spokes(const KSpaceData& data, const Trajectory& traj, std::size_t keep);

/// Smooth complex Gaussian sensitivities with linear phase ramps.
CoilMaps make_coil_maps(Dims3 dims, std::size_t n_coils = 4);

/// Voxel coordinate along an axis of length n, normalised to [-1/2, 1/2).
inline double voxel_position(std::size_t i, std::size_t n) {
  return (static_cast<double>(i) - static_cast<double>(n / 2)) / static_cast<double>(n);
}

/// Exact multicoil type-2 NUDFT of one frame: out[s * C + c].
std::vector<cplx> nudft_forward(const Volume<cplx>& image, std::span<const KPoint> frame, const CoilMaps& coils);

/// Conjugate transpose of nudft_forward.
Volume<cplx> nudft_adjoint(std::span<const cplx> samples, std::span<const KPoint> frame, const CoilMaps& coils,
                           Dims3 dims);

/// Frame tau receives nudft_forward(sum_r u_r v[r, tau]).
KSpaceData subspace_forward(const SpatialFactor& u, const TemporalBasis& basis, const Trajectory& traj,
                            const CoilMaps& coils);

/// A^H(b) V^H arranged per basis coefficient.
SpatialFactor subspace_adjoint(const KSpaceData& b, const TemporalBasis& basis, const Trajectory& traj,
                               const CoilMaps& coils);

/// Gradient of 1/2 ||A(UV) - b||^2 with respect to u (d/dRe + i d/dIm).
SpatialFactor subspace_gradient(const SpatialFactor& u, const TemporalBasis& basis, const Trajectory& traj,
                                const CoilMaps& coils, const KSpaceData& b);

/// Subspace normal operator u -> A^H A (U V) V^H, evaluated exactly through
/// per-kz-plane Toeplitz embedding (2x zero-padded FFT convolutions with
/// kernels built directly from the trajectory). Agrees with
/// subspace_gradient(u, b = 0) to rounding error.
class NormalOperator {
public:
  NormalOperator(const Trajectory& traj, const CoilMaps& coils, const TemporalBasis& basis);
  ~NormalOperator();
  NormalOperator(NormalOperator&&) noexcept;
  NormalOperator& operator=(NormalOperator&&) noexcept;

  SpatialFactor apply(const SpatialFactor& u) const;
  Dims3 dims() const;
  std::size_t rank() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Bundles the operators for one acquisition so solvers can share the
/// precomputed normal operator.
struct SubspaceModel {
  Trajectory traj;
  CoilMaps coils;
  TemporalBasis basis;
  NormalOperator normal;

  SubspaceModel(Trajectory t, CoilMaps c, TemporalBasis b);

  Dims3 dims() const { return coils.dims; }
  std::size_t rank() const { return basis.rank(); }
  KSpaceData forward(const SpatialFactor& u) const { return subspace_forward(u, basis, traj, coils); }
  SpatialFactor adjoint(const KSpaceData& b) const { return subspace_adjoint(b, basis, traj, coils); }
};

}  // namespace ssmuse
