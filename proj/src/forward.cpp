#include "ssmuse/forward.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace ssmuse {

namespace {

using RowMatC = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
constexpr double two_pi = 2.0 * std::numbers::pi;

// Samples of every frame bucketed by their (exactly shared) kz value. A
// stack-of-stars trajectory has one bucket per Cartesian kz plane.
struct KzLayout {
  struct Group {
    std::size_t g = 0;
    std::vector<std::size_t> samples;
  };
  std::vector<double> kz;
  std::vector<std::vector<Group>> frames;
};

KzLayout group_by_kz(std::span<const std::vector<KPoint>> frames) {
  std::map<double, std::size_t> distinct;
  for (const auto& f : frames)
    for (const auto& k : f) distinct.emplace(k[2], 0);
  KzLayout layout;
  for (auto& [value, idx] : distinct) {
    idx = layout.kz.size();
    layout.kz.push_back(value);
  }
  layout.frames.resize(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    std::map<std::size_t, std::size_t> slot;
    auto& groups = layout.frames[f];
    for (std::size_t s = 0; s < frames[f].size(); ++s) {
      const std::size_t g = distinct.at(frames[f][s][2]);
      auto [it, inserted] = slot.emplace(g, groups.size());
      if (inserted) groups.push_back({g, {}});
      groups[it->second].samples.push_back(s);
    }
  }
  return layout;
}

// E(z, g) = exp(sign * 2 pi i kz_g r_z)
Eigen::MatrixXcd kz_phase(const std::vector<double>& kz, std::size_t nz, double sign) {
  Eigen::MatrixXcd e(static_cast<Eigen::Index>(nz), static_cast<Eigen::Index>(kz.size()));
  for (std::size_t g = 0; g < kz.size(); ++g)
    for (std::size_t z = 0; z < nz; ++z)
      e(static_cast<Eigen::Index>(z), static_cast<Eigen::Index>(g)) =
          std::polar(1.0, sign * two_pi * kz[g] * voxel_position(z, nz));
  return e;
}

// out(s, i) = exp(sign * 2 pi i k_s[axis] r_i) for the listed samples.
Eigen::MatrixXcd axis_phase(std::span<const KPoint> frame, const std::vector<std::size_t>& samples,
                            std::size_t axis, std::size_t n, double sign) {
  Eigen::MatrixXcd out(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const double k = frame[samples[s]][axis];
    for (std::size_t i = 0; i < n; ++i)
      out(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) =
          std::polar(1.0, sign * two_pi * k * voxel_position(i, n));
  }
  return out;
}

void check_coils(Dims3 dims, const CoilMaps& coils, const char* where) {
  if (coils.dims != dims || coils.count == 0)
    throw DomainError(std::string(where) + ": coil maps " + to_string(coils.dims) + " do not match image " +
                      to_string(dims));
}

// Per-(volume, coil) kz-plane transforms: W(xy, g) = sum_z s_c u (xy, z) exp(-2 pi i kz_g r_z).
std::vector<Eigen::MatrixXcd> kz_transform(const cplx* vols, std::size_t n_vols, const CoilMaps& coils,
                                           const Eigen::MatrixXcd& ez) {
  const Dims3 d = coils.dims;
  const auto nxy = static_cast<Eigen::Index>(d.nx * d.ny);
  const auto nz = static_cast<Eigen::Index>(d.nz);
  std::vector<Eigen::MatrixXcd> w(n_vols * coils.count);
  RowMatC weighted(nxy, nz);
  for (std::size_t r = 0; r < n_vols; ++r) {
    Eigen::Map<const RowMatC> u(vols + r * d.voxels(), nxy, nz);
    for (std::size_t c = 0; c < coils.count; ++c) {
      Eigen::Map<const RowMatC> s(coils.volume(c).data(), nxy, nz);
      weighted = s.cwiseProduct(u);
      w[r * coils.count + c] = weighted * ez;
    }
  }
  return w;
}

// out[f] (samples x coils) = A_f (sum_r weights(r, f) vol_r)
void forward_core(const cplx* vols, const Eigen::MatrixXd& weights, std::span<const std::vector<KPoint>> frames,
                  const CoilMaps& coils, cplx* out, std::size_t samples_per_frame) {
  const Dims3 d = coils.dims;
  const std::size_t n_vols = static_cast<std::size_t>(weights.rows());
  const std::size_t nc = coils.count;
  const KzLayout layout = group_by_kz(frames);
  const Eigen::MatrixXcd ez = kz_phase(layout.kz, d.nz, -1.0);
  const auto w = kz_transform(vols, n_vols, coils, ez);

  Eigen::MatrixXcd comb(static_cast<Eigen::Index>(d.nx * d.ny), static_cast<Eigen::Index>(layout.kz.size()));
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& groups = layout.frames[f];
    std::vector<Eigen::MatrixXcd> ex(groups.size()), ey(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      ex[gi] = axis_phase(frames[f], groups[gi].samples, 0, d.nx, -1.0);
      ey[gi] = axis_phase(frames[f], groups[gi].samples, 1, d.ny, -1.0);
    }
    cplx* out_f = out + f * samples_per_frame * nc;
    for (std::size_t c = 0; c < nc; ++c) {
      comb.setZero();
      for (std::size_t r = 0; r < n_vols; ++r) {
        const double wr = weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
        if (wr != 0.0) comb.noalias() += wr * w[r * nc + c];
      }
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& grp = groups[gi];
        // plane^T as (ny x nx): element (y, x) sits at x * ny + y.
        Eigen::Map<const Eigen::MatrixXcd> plane_t(comb.col(static_cast<Eigen::Index>(grp.g)).data(),
                                                   static_cast<Eigen::Index>(d.ny),
                                                   static_cast<Eigen::Index>(d.nx));
        const Eigen::MatrixXcd q = ey[gi] * plane_t;
        const Eigen::VectorXcd vals = q.cwiseProduct(ex[gi]).rowwise().sum();
        for (std::size_t s = 0; s < grp.samples.size(); ++s)
          out_f[grp.samples[s] * nc + c] = vals[static_cast<Eigen::Index>(s)];
      }
    }
  }
}

// vols_r += sum_f weights(r, f) A_f^H b_f
void adjoint_core(const cplx* samples, const Eigen::MatrixXd& weights, std::span<const std::vector<KPoint>> frames,
                  const CoilMaps& coils, cplx* vols, std::size_t samples_per_frame) {
  const Dims3 d = coils.dims;
  const std::size_t n_vols = static_cast<std::size_t>(weights.rows());
  const std::size_t nc = coils.count;
  const auto nxy = static_cast<Eigen::Index>(d.nx * d.ny);
  const auto nz = static_cast<Eigen::Index>(d.nz);
  const KzLayout layout = group_by_kz(frames);
  const auto ng = static_cast<Eigen::Index>(layout.kz.size());
  const Eigen::MatrixXcd ez = kz_phase(layout.kz, d.nz, -1.0);

  std::vector<Eigen::MatrixXcd> wadj(n_vols * nc, Eigen::MatrixXcd::Zero(nxy, ng));
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const cplx* b_f = samples + f * samples_per_frame * nc;
    for (const auto& grp : layout.frames[f]) {
      const Eigen::MatrixXcd ex = axis_phase(frames[f], grp.samples, 0, d.nx, -1.0);
      const Eigen::MatrixXcd ey = axis_phase(frames[f], grp.samples, 1, d.ny, -1.0);
      Eigen::MatrixXcd qa(ex.rows(), ex.cols());
      for (std::size_t c = 0; c < nc; ++c) {
        for (std::size_t s = 0; s < grp.samples.size(); ++s)
          qa.row(static_cast<Eigen::Index>(s)) =
              b_f[grp.samples[s] * nc + c] * ex.row(static_cast<Eigen::Index>(s)).conjugate();
        const Eigen::MatrixXcd plane_t = ey.adjoint() * qa;  // (ny x nx)
        Eigen::Map<const Eigen::VectorXcd> flat(plane_t.data(), nxy);
        for (std::size_t r = 0; r < n_vols; ++r) {
          const double wr = weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
          if (wr != 0.0) wadj[r * nc + c].col(static_cast<Eigen::Index>(grp.g)) += wr * flat;
        }
      }
    }
  }
  RowMatC tmp(nxy, nz);
  for (std::size_t r = 0; r < n_vols; ++r) {
    Eigen::Map<RowMatC> out(vols + r * d.voxels(), nxy, nz);
    for (std::size_t c = 0; c < nc; ++c) {
      Eigen::Map<const RowMatC> s(coils.volume(c).data(), nxy, nz);
      tmp.noalias() = wadj[r * nc + c] * ez.adjoint();
      out += s.conjugate().cwiseProduct(tmp);
    }
  }
}

void check_factor(const SpatialFactor& u, const TemporalBasis& basis, const Trajectory& traj,
                  const CoilMaps& coils, const char* where) {
  check_coils(u.dims, coils, where);
  if (u.count != basis.rank())
    throw DomainError(std::string(where) + ": spatial factor rank does not match basis");
  if (traj.n_frames() != basis.frames())
    throw DomainError(std::string(where) + ": trajectory frame count does not match basis");
  for (const auto& f : traj.frames)
    if (f.size() != traj.samples_per_frame())
      throw DomainError(std::string(where) + ": trajectory frame size inconsistent");
}

// RAII helpers around FFTW.
struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

FftwBuffer fftw_buffer(std::size_t n) {
  return FftwBuffer(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
using FftwPlan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

}  // namespace

// ---------------------------------------------------------------------------
// Trajectories and coils

Trajectory make_radial_trajectory(std::size_t n_frames, std::size_t spokes_per_frame, std::size_t readout_len,
                                  std::size_t grid_size, std::uint64_t ordering_seed) {
  if (n_frames < 1 || spokes_per_frame < 1 || readout_len < 1 || grid_size < 1)
    throw DomainError("make_radial_trajectory: all counts must be >= 1");
  const double golden = std::numbers::pi * (std::sqrt(5.0) - 1.0) / 2.0;
  std::mt19937_64 rng(ordering_seed);
  const double offset = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
  const double k = static_cast<double>(grid_size);

  Trajectory traj;
  traj.spokes_per_frame = spokes_per_frame;
  traj.samples_per_spoke = readout_len;
  traj.grid_size = grid_size;
  traj.frames.resize(n_frames);
  std::size_t j = 0;
  for (auto& frame : traj.frames) {
    frame.reserve(spokes_per_frame * readout_len);
    for (std::size_t s = 0; s < spokes_per_frame; ++s, ++j) {
      const double angle = std::fmod(offset + static_cast<double>(j) * golden, std::numbers::pi);
      traj.angles.push_back(angle);
      const double cx = std::cos(angle), cy = std::sin(angle);
      for (std::size_t i = 0; i < readout_len; ++i) {
        const double t = -k / 2.0 + k * static_cast<double>(i) / static_cast<double>(readout_len);
        frame.push_back({t * cx, t * cy, 0.0});
      }
    }
  }
  return traj;
}

Trajectory stack_of_stars(const Trajectory& radial, std::size_t nz) {
  if (nz < 1) throw DomainError("stack_of_stars: nz must be >= 1");
  Trajectory out;
  out.spokes_per_frame = radial.spokes_per_frame;
  out.samples_per_spoke = radial.samples_per_spoke * nz;
  out.grid_size = radial.grid_size;
  out.angles = radial.angles;
  out.frames.resize(radial.frames.size());
  const long half = static_cast<long>(nz / 2);
  for (std::size_t f = 0; f < radial.frames.size(); ++f) {
    auto& dst = out.frames[f];
    dst.reserve(radial.frames[f].size() * nz);
    for (std::size_t s = 0; s < radial.spokes_per_frame; ++s)
      for (std::size_t iz = 0; iz < nz; ++iz)
        for (std::size_t i = 0; i < radial.samples_per_spoke; ++i) {
          KPoint p = radial.frames[f][s * radial.samples_per_spoke + i];
          p[2] = static_cast<double>(static_cast<long>(iz) - half);
          dst.push_back(p);
        }
  }
  return out;
}

Trajectory subsample_spokes(const Trajectory& traj, std::size_t keep) {
  if (keep < 1 || keep > traj.spokes_per_frame)
    throw DomainError("subsample_spokes: keep must lie in [1, spokes_per_frame]");
  Trajectory out = traj;
  out.spokes_per_frame = keep;
  out.angles.clear();
  for (std::size_t f = 0; f < traj.frames.size(); ++f) {
    out.frames[f].resize(keep * traj.samples_per_spoke);
    for (std::size_t s = 0; s < keep; ++s) out.angles.push_back(traj.angles[f * traj.spokes_per_frame + s]);
  }
  return out;
}

KSpaceData subsample_spokes(const KSpaceData& data, const Trajectory& traj, std::size_t keep) {
  if (data.frames != traj.n_frames() || data.samples != traj.samples_per_frame())
    throw DomainError("subsample_spokes: data does not match trajectory");
  if (keep < 1 || keep > traj.spokes_per_frame)
    throw DomainError("subsample_spokes: keep must lie in [1, spokes_per_frame]");
  KSpaceData out(data.frames, keep * traj.samples_per_spoke, data.coils);
  out.noise_sigma = data.noise_sigma;
  for (std::size_t f = 0; f < data.frames; ++f)
    for (std::size_t s = 0; s < out.samples; ++s)
      for (std::size_t c = 0; c < data.coils; ++c) out.at(f, s, c) = data.at(f, s, c);
  return out;
}

CoilMaps make_coil_maps(Dims3 dims, std::size_t n_coils) {
  if (dims.voxels() == 0 || n_coils == 0) throw DomainError("make_coil_maps: empty shape");
  CoilMaps maps(dims, n_coils);
  const double width = 0.45;
  for (std::size_t c = 0; c < n_coils; ++c) {
    const double phi = two_pi * static_cast<double>(c) / static_cast<double>(n_coils);
    const double cx = 0.5 * std::cos(phi), cy = 0.5 * std::sin(phi);
    for (std::size_t x = 0; x < dims.nx; ++x)
      for (std::size_t y = 0; y < dims.ny; ++y)
        for (std::size_t z = 0; z < dims.nz; ++z) {
          const double rx = voxel_position(x, dims.nx), ry = voxel_position(y, dims.ny),
                       rz = voxel_position(z, dims.nz);
          const double d2 = (rx - cx) * (rx - cx) + (ry - cy) * (ry - cy) + 0.5 * rz * rz;
          const double mag = std::exp(-d2 / (2.0 * width * width));
          const double phase = phi + std::numbers::pi * (cx * rx + cy * ry);
          maps.at(c, x, y, z) = std::polar(mag, phase);
        }
  }
  return maps;
}

// ---------------------------------------------------------------------------
// Direct operators

std::vector<cplx> nudft_forward(const Volume<cplx>& image, std::span<const KPoint> frame, const CoilMaps& coils) {
  check_coils(image.dims, coils, "nudft_forward");
  if (image.data.size() != image.dims.voxels()) throw DomainError("nudft_forward: malformed image");
  std::vector<std::vector<KPoint>> frames{std::vector<KPoint>(frame.begin(), frame.end())};
  std::vector<cplx> out(frame.size() * coils.count);
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  forward_core(image.data.data(), one, frames, coils, out.data(), frame.size());
  return out;
}

Volume<cplx> nudft_adjoint(std::span<const cplx> samples, std::span<const KPoint> frame, const CoilMaps& coils,
                           Dims3 dims) {
  check_coils(dims, coils, "nudft_adjoint");
  if (samples.size() != frame.size() * coils.count)
    throw DomainError("nudft_adjoint: sample count does not match frame and coils");
  std::vector<std::vector<KPoint>> frames{std::vector<KPoint>(frame.begin(), frame.end())};
  Volume<cplx> out(dims);
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  adjoint_core(samples.data(), one, frames, coils, out.data.data(), frame.size());
  return out;
}

KSpaceData subspace_forward(const SpatialFactor& u, const TemporalBasis& basis, const Trajectory& traj,
                            const CoilMaps& coils) {
  check_factor(u, basis, traj, coils, "subspace_forward");
  KSpaceData out(traj.n_frames(), traj.samples_per_frame(), coils.count);
  forward_core(u.data.data(), basis.v, traj.frames, coils, out.data.data(), out.samples);
  return out;
}

SpatialFactor subspace_adjoint(const KSpaceData& b, const TemporalBasis& basis, const Trajectory& traj,
                               const CoilMaps& coils) {
  if (b.frames != traj.n_frames() || b.samples != traj.samples_per_frame() || b.coils != coils.count)
    throw DomainError("subspace_adjoint: k-space shape does not match trajectory and coils");
  if (traj.n_frames() != basis.frames())
    throw DomainError("subspace_adjoint: trajectory frame count does not match basis");
  SpatialFactor out(coils.dims, basis.rank());
  adjoint_core(b.data.data(), basis.v, traj.frames, coils, out.data.data(), b.samples);
  return out;
}

SpatialFactor subspace_gradient(const SpatialFactor& u, const TemporalBasis& basis, const Trajectory& traj,
                                const CoilMaps& coils, const KSpaceData& b) {
  KSpaceData residual = subspace_forward(u, basis, traj, coils);
  if (b.frames != residual.frames || b.samples != residual.samples || b.coils != residual.coils)
    throw DomainError("subspace_gradient: k-space shape mismatch");
  for (std::size_t i = 0; i < residual.data.size(); ++i) residual.data[i] -= b.data[i];
  return subspace_adjoint(residual, basis, traj, coils);
}

// ---------------------------------------------------------------------------
// Toeplitz normal operator

struct NormalOperator::Impl {
  Dims3 dims;
  std::size_t rank = 0, ncoils = 0, ngroups = 0;
  std::size_t n0 = 0, n1 = 0;  // padded grid: n0 = 2 ny rows, n1 = 2 nx columns
  Eigen::MatrixXcd ez;          // (nz x G), exp(-2 pi i kz r_z)
  CoilMaps coils;
  std::vector<std::vector<cplx>> kernel_hat;  // [(g * R + r) * R + r'], pre-scaled by 1 / (n0 n1)
  FftwPlan fwd, bwd;

  std::size_t padded() const { return n0 * n1; }
  std::vector<cplx>& kernel(std::size_t g, std::size_t r, std::size_t rp) {
    return kernel_hat[(g * rank + r) * rank + rp];
  }
  const std::vector<cplx>& kernel(std::size_t g, std::size_t r, std::size_t rp) const {
    return kernel_hat[(g * rank + r) * rank + rp];
  }
};

NormalOperator::NormalOperator(const Trajectory& traj, const CoilMaps& coils, const TemporalBasis& basis)
    : impl_(std::make_unique<Impl>()) {
  if (traj.n_frames() != basis.frames())
    throw DomainError("NormalOperator: trajectory frame count does not match basis");
  auto& im = *impl_;
  im.dims = coils.dims;
  im.rank = basis.rank();
  im.ncoils = coils.count;
  im.coils = coils;
  im.n0 = 2 * im.dims.ny;
  im.n1 = 2 * im.dims.nx;
  const KzLayout layout = group_by_kz(traj.frames);
  im.ngroups = layout.kz.size();
  im.ez = kz_phase(layout.kz, im.dims.nz, -1.0);

  const std::size_t np = im.padded();
  im.kernel_hat.assign(im.ngroups * im.rank * im.rank, std::vector<cplx>(np, cplx{}));

  // Differences dx in [-nx, nx) live at circular index (dx mod 2 nx).
  auto lag = [](std::size_t i, std::size_t n) {
    return static_cast<double>(static_cast<long>(i) - (i >= n ? 2 * static_cast<long>(n) : 0)) /
           static_cast<double>(n);
  };
  const auto sz = [](std::size_t n) { return static_cast<Eigen::Index>(n); };

  for (std::size_t f = 0; f < traj.n_frames(); ++f) {
    const auto& frame = traj.frames[f];
    const auto& groups = layout.frames[f];
    Eigen::MatrixXcd psf;  // (n0 x n1) row-major contents via transpose below
    const std::vector<std::size_t>* last = nullptr;
    for (const auto& grp : groups) {
      bool reuse = last != nullptr && last->size() == grp.samples.size();
      if (reuse)
        for (std::size_t s = 0; s < grp.samples.size() && reuse; ++s) {
          const auto& a = frame[(*last)[s]];
          const auto& b = frame[grp.samples[s]];
          reuse = a[0] == b[0] && a[1] == b[1];
        }
      if (!reuse) {
        Eigen::MatrixXcd ex(sz(grp.samples.size()), sz(im.n1)), ey(sz(grp.samples.size()), sz(im.n0));
        for (std::size_t s = 0; s < grp.samples.size(); ++s) {
          const auto& k = frame[grp.samples[s]];
          for (std::size_t i = 0; i < im.n1; ++i)
            ex(sz(s), sz(i)) = std::polar(1.0, two_pi * k[0] * lag(i, im.dims.nx));
          for (std::size_t i = 0; i < im.n0; ++i)
            ey(sz(s), sz(i)) = std::polar(1.0, two_pi * k[1] * lag(i, im.dims.ny));
        }
        psf = ex.transpose() * ey;  // (n1 x n0) column-major == (n0 x n1) row-major
        last = &grp.samples;
      }
      for (std::size_t r = 0; r < im.rank; ++r)
        for (std::size_t rp = r; rp < im.rank; ++rp) {
          const double w = basis.v(sz(r), sz(f)) * basis.v(sz(rp), sz(f));
          if (w == 0.0) continue;
          auto& k = im.kernel(grp.g, r, rp);
          const cplx* p = psf.data();
          for (std::size_t i = 0; i < np; ++i) k[i] += w * p[i];
        }
    }
  }

  auto in = fftw_buffer(np), out = fftw_buffer(np);
  const int n0 = static_cast<int>(im.n0), n1 = static_cast<int>(im.n1);
  im.fwd.reset(fftw_plan_dft_2d(n0, n1, in.get(), out.get(), FFTW_FORWARD, FFTW_ESTIMATE));
  im.bwd.reset(fftw_plan_dft_2d(n0, n1, in.get(), out.get(), FFTW_BACKWARD, FFTW_ESTIMATE));
  const double scale = 1.0 / static_cast<double>(np);
  for (std::size_t g = 0; g < im.ngroups; ++g)
    for (std::size_t r = 0; r < im.rank; ++r)
      for (std::size_t rp = r; rp < im.rank; ++rp) {
        auto& k = im.kernel(g, r, rp);
        std::copy(k.begin(), k.end(), reinterpret_cast<cplx*>(in.get()));
        fftw_execute_dft(im.fwd.get(), in.get(), out.get());
        const cplx* o = reinterpret_cast<const cplx*>(out.get());
        for (std::size_t i = 0; i < np; ++i) k[i] = o[i] * scale;
        if (rp != r) im.kernel(g, rp, r) = k;
      }
}

NormalOperator::~NormalOperator() = default;
NormalOperator::NormalOperator(NormalOperator&&) noexcept = default;
NormalOperator& NormalOperator::operator=(NormalOperator&&) noexcept = default;

Dims3 NormalOperator::dims() const { return impl_->dims; }
std::size_t NormalOperator::rank() const { return impl_->rank; }

SpatialFactor NormalOperator::apply(const SpatialFactor& u) const {
  const auto& im = *impl_;
  if (u.dims != im.dims || u.count != im.rank) throw DomainError("NormalOperator::apply: shape mismatch");
  const Dims3 d = im.dims;
  const auto nxy = static_cast<Eigen::Index>(d.nx * d.ny);
  const auto nz = static_cast<Eigen::Index>(d.nz);
  const std::size_t np = im.padded();
  const std::size_t R = im.rank;

  SpatialFactor out(d, R);
  auto in_buf = fftw_buffer(np), out_buf = fftw_buffer(np);
  auto* in_c = reinterpret_cast<cplx*>(in_buf.get());
  auto* out_c = reinterpret_cast<cplx*>(out_buf.get());
  std::vector<std::vector<cplx>> spectra(R, std::vector<cplx>(np));
  std::vector<Eigen::MatrixXcd> wout(R, Eigen::MatrixXcd(nxy, static_cast<Eigen::Index>(im.ngroups)));
  RowMatC tmp(nxy, nz);

  for (std::size_t c = 0; c < im.ncoils; ++c) {
    CoilMaps one(d, 1);
    std::copy(im.coils.volume(c).begin(), im.coils.volume(c).end(), one.data.begin());
    const auto w = kz_transform(u.data.data(), R, one, im.ez);
    for (std::size_t g = 0; g < im.ngroups; ++g) {
      const auto gi = static_cast<Eigen::Index>(g);
      for (std::size_t r = 0; r < R; ++r) {
        std::fill(in_c, in_c + np, cplx{});
        for (std::size_t x = 0; x < d.nx; ++x)
          for (std::size_t y = 0; y < d.ny; ++y)
            in_c[y * im.n1 + x] = w[r](static_cast<Eigen::Index>(x * d.ny + y), gi);
        fftw_execute_dft(im.fwd.get(), in_buf.get(), out_buf.get());
        std::copy(out_c, out_c + np, spectra[r].begin());
      }
      for (std::size_t r = 0; r < R; ++r) {
        std::fill(in_c, in_c + np, cplx{});
        for (std::size_t rp = 0; rp < R; ++rp) {
          const auto& k = im.kernel(g, r, rp);
          const auto& sp = spectra[rp];
          for (std::size_t i = 0; i < np; ++i) in_c[i] += k[i] * sp[i];
        }
        fftw_execute_dft(im.bwd.get(), in_buf.get(), out_buf.get());
        for (std::size_t x = 0; x < d.nx; ++x)
          for (std::size_t y = 0; y < d.ny; ++y)
            wout[r](static_cast<Eigen::Index>(x * d.ny + y), gi) = out_c[y * im.n1 + x];
      }
    }
    Eigen::Map<const RowMatC> s(im.coils.volume(c).data(), nxy, nz);
    for (std::size_t r = 0; r < R; ++r) {
      Eigen::Map<RowMatC> o(out.volume(r).data(), nxy, nz);
      tmp.noalias() = wout[r] * im.ez.adjoint();
      o += s.conjugate().cwiseProduct(tmp);
    }
  }
  return out;
}

SubspaceModel::SubspaceModel(Trajectory t, CoilMaps c, TemporalBasis b)
    : traj(std::move(t)), coils(std::move(c)), basis(std::move(b)), normal(traj, coils, basis) {}

}  // namespace ssmuse
