#pragma once

#include <cstddef>
#include <cstdint>

#include "ssmuse/array.hpp"
#include "ssmuse/seqsim.hpp"

namespace ssmuse {

using RealVolume = Volume<double>;
using ComplexVolume = Volume<cplx>;
using Mask = Volume<std::uint8_t>;

/// Reported in place of +inf when the estimate matches the reference exactly.
inline constexpr double psnr_cap_db = 300.0;

struct T1Map {
  RealVolume t1;            // seconds; 0 outside the mask
  ComplexVolume amplitude;  // per-voxel scale of the matched atom
  RealVolume match_residual;  // ||u - a c|| / ||u|| of the best match
};

/// Image at frame tau: sum_r u_r v[r, tau].
ComplexVolume synthesize_contrast(const SpatialFactor& u, const TemporalBasis& basis, std::size_t tau);

/// Per masked voxel, picks the atom maximizing |<u, c_i>| / (||u|| ||c_i||)
/// with c_i the subspace coefficients of atom i. Ties go to the smaller T1
/// index. Zero voxels get the grid minimum, amplitude 0 and residual 0.
T1Map fit_t1_dictionary(const SpatialFactor& u, const TemporalBasis& basis, const SignalDictionary& dict,
                        const Mask& mask);

/// 20 log10(peak / rmse) over the mask, peak = max |reference| on the mask.
/// Capped at psnr_cap_db.
double psnr(const RealVolume& estimate, const RealVolume& reference, const Mask& mask);

/// |estimate - reference| inside the mask, 0 elsewhere.
RealVolume error_map(const RealVolume& estimate, const RealVolume& reference, const Mask& mask);

RealVolume magnitude(const ComplexVolume& v);
std::size_t mask_count(const Mask& mask);

}  // namespace ssmuse
