#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "ssmuse/experiment.hpp"

namespace ssmuse {

Phantom make_phantom(Dims3 dims, const std::vector<Tissue>& tissues) {
  if (dims.nx < 8 || dims.ny < 8 || dims.nz < 8) throw DomainError("make_phantom: size must be >= 8 per axis");
  if (tissues.empty()) throw DomainError("make_phantom: no tissues");
  Phantom ph{RealVolume(dims), RealVolume(dims), Mask(dims)};
  for (std::size_t t = 0; t < tissues.size(); ++t) {
    const Tissue& ts = tissues[t];
    if (!(ts.t1 > 0.0) || !(ts.pd >= 0.0)) throw DomainError("make_phantom: tissue needs T1 > 0 and PD >= 0");
    for (double r : ts.radii)
      if (!(r > 0.0)) throw DomainError("make_phantom: degenerate ellipsoid (radius <= 0)");
    std::size_t hits = 0;
    for (std::size_t x = 0; x < dims.nx; ++x)
      for (std::size_t y = 0; y < dims.ny; ++y)
        for (std::size_t z = 0; z < dims.nz; ++z) {
          const double dx = (voxel_position(x, dims.nx) - ts.center[0]) / ts.radii[0];
          const double dy = (voxel_position(y, dims.ny) - ts.center[1]) / ts.radii[1];
          const double dz = (voxel_position(z, dims.nz) - ts.center[2]) / ts.radii[2];
          if (dx * dx + dy * dy + dz * dz > 1.0) continue;
          ++hits;
          const std::size_t i = dims.index(x, y, z);
          ph.t1_map.data[i] = ts.t1;
          ph.proton_density.data[i] = ts.pd;
          ph.support_mask.data[i] = 1;
        }
    if (hits == 0)
      throw DomainError("make_phantom: tissue " + std::to_string(t) + " covers no voxel at " + to_string(dims));
  }
  return ph;
}

std::vector<Tissue> jitter_tissues(const std::vector<Tissue>& tissues, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Tissue> out = tissues;
  for (std::size_t t = 0; t < out.size(); ++t) {
    auto& ts = out[t];
    ts.t1 *= std::exp(0.25 * unit(rng));
    ts.pd *= 1.0 + 0.1 * unit(rng);
    for (std::size_t a = 0; a < 3; ++a) {
      // The first tissue is the outer shell: keep it inside the field of view.
      ts.radii[a] *= t == 0 ? 1.0 - 0.1 * std::abs(unit(rng)) : 1.0 + 0.15 * unit(rng);
      ts.center[a] += t == 0 ? 0.0 : 0.03 * unit(rng);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ComplexVolume GroundTruth::frame(std::size_t tau) const {
  if (tau >= static_cast<std::size_t>(signals.cols())) throw DomainError("GroundTruth::frame: index out of range");
  ComplexVolume out(pd_volumes.dims);
  for (std::size_t g = 0; g < pd_volumes.count; ++g) {
    const double s = signals(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(tau));
    const auto vol = pd_volumes.volume(g);
    for (std::size_t i = 0; i < vol.size(); ++i) out.data[i] += s * vol[i];
  }
  return out;
}

SpatialFactor GroundTruth::factor(const TemporalBasis& basis) const {
  if (basis.frames() != static_cast<std::size_t>(signals.cols()))
    throw DomainError("GroundTruth::factor: basis frame count does not match");
  const Eigen::MatrixXd w = signals * basis.v.transpose();  // groups x R
  SpatialFactor u(pd_volumes.dims, basis.rank());
  for (std::size_t r = 0; r < u.count; ++r) {
    auto dst = u.volume(r);
    for (std::size_t g = 0; g < pd_volumes.count; ++g) {
      const double c = w(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(r));
      const auto src = pd_volumes.volume(g);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c * src[i];
    }
  }
  return u;
}

GroundTruth ground_truth(const Phantom& ph, const SequenceParams& seq) {
  std::map<double, std::size_t> groups;
  for (std::size_t i = 0; i < ph.t1_map.data.size(); ++i)
    if (ph.support_mask.data[i]) groups.emplace(ph.t1_map.data[i], 0);
  GroundTruth gt;
  for (auto& [t1, idx] : groups) {
    idx = gt.t1_values.size();
    gt.t1_values.push_back(t1);
  }
  const Dims3 dims = ph.t1_map.dims;
  gt.pd_volumes = SpatialFactor(dims, gt.t1_values.size());
  for (std::size_t i = 0; i < ph.t1_map.data.size(); ++i)
    if (ph.support_mask.data[i])
      gt.pd_volumes.data[groups.at(ph.t1_map.data[i]) * dims.voxels() + i] = ph.proton_density.data[i];
  gt.signals.resize(static_cast<Eigen::Index>(gt.t1_values.size()),
                    static_cast<Eigen::Index>(seq.n_echoes_per_block));
  for (std::size_t g = 0; g < gt.t1_values.size(); ++g)
    gt.signals.row(static_cast<Eigen::Index>(g)) = simulate_ir_signal(gt.t1_values[g], seq).transpose();
  return gt;
}

Synthesis synthesize_kspace(const Phantom& ph, const SequenceParams& seq, const Trajectory& traj,
                            const CoilMaps& coils, double noise_sigma, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0)) throw DomainError("synthesize_kspace: noise_sigma must be >= 0");
  if (traj.n_frames() != seq.n_echoes_per_block)
    throw DomainError("synthesize_kspace: trajectory frame count does not match the sequence");
  Synthesis out;
  out.truth = ground_truth(ph, seq);
  if (out.truth.t1_values.empty()) {
    out.clean = KSpaceData(traj.n_frames(), traj.samples_per_frame(), coils.count);
  } else {
    // The series is sum_g pd_g(r) s_g(tau), so the subspace operator with the
    // signal curves as "basis" evaluates it exactly.
    TemporalBasis curves;
    curves.v = out.truth.signals;
    out.clean = subspace_forward(out.truth.pd_volumes, curves, traj, coils);
  }
  out.data = out.clean;
  out.data.noise_sigma = noise_sigma;
  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, noise_sigma / std::sqrt(2.0));
    for (auto& v : out.data.data) {
      const double re = normal(rng);
      v += cplx{re, normal(rng)};
    }
  }
  return out;
}

TrainingSlices extract_training_slices(const std::vector<SpatialFactor>& factors, double snr_floor) {
  if (factors.empty()) throw DomainError("extract_training_slices: no factors");
  if (!(snr_floor >= 0.0)) throw DomainError("extract_training_slices: snr_floor must be >= 0");
  TrainingSlices out;
  for (const auto& u : factors) {
    for (std::size_t r = 0; r < u.count; ++r) {
      std::vector<Slice2D> slices;
      std::vector<double> norms;
      for (Orientation o : {Orientation::x, Orientation::y, Orientation::z})
        for (std::size_t m = 0; m < slice_count(u.dims, o); ++m) {
          slices.push_back(extract_slice(u, r, o, m));
          norms.push_back(std::sqrt(norm2(slices.back().data)));
        }
      const double max_norm = *std::max_element(norms.begin(), norms.end());
      for (std::size_t k = 0; k < slices.size(); ++k) {
        if (norms[k] < snr_floor * max_norm) continue;
        Slice2D s = std::move(slices[k]);
        double peak = 0.0;
        for (const auto& v : s.data) peak = std::max(peak, std::abs(v));
        const double scale = peak > 0.0 ? peak : 1.0;
        for (auto& v : s.data) v /= scale;
        out.slices.push_back(std::move(s));
        out.scales.push_back(scale);
      }
    }
  }
  if (out.slices.empty()) throw DomainError("extract_training_slices: every slice was filtered out");
  return out;
}

}  // namespace ssmuse
