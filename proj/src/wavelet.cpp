#include <cmath>
#include <string>

#include "ssmuse/solver.hpp"

namespace ssmuse {

namespace {

constexpr double inv_sqrt2 = 0.70710678118654752440;

// One Haar level along a strided line of length n: averages to the first
// half, details to the second half.
void haar_line(cplx* p, std::size_t n, std::size_t stride, std::vector<cplx>& tmp, bool inverse) {
  const std::size_t h = n / 2;
  tmp.resize(n);
  if (!inverse) {
    for (std::size_t i = 0; i < h; ++i) {
      const cplx a = p[2 * i * stride], b = p[(2 * i + 1) * stride];
      tmp[i] = (a + b) * inv_sqrt2;
      tmp[h + i] = (a - b) * inv_sqrt2;
    }
  } else {
    for (std::size_t i = 0; i < h; ++i) {
      const cplx s = p[i * stride], d = p[(h + i) * stride];
      tmp[2 * i] = (s + d) * inv_sqrt2;
      tmp[2 * i + 1] = (s - d) * inv_sqrt2;
    }
  }
  for (std::size_t i = 0; i < n; ++i) p[i * stride] = tmp[i];
}

void haar_axis(std::span<cplx> vol, Dims3 d, int axis, bool inverse) {
  std::vector<cplx> tmp;
  const std::size_t sx = d.ny * d.nz, sy = d.nz;
  switch (axis) {
    case 0:
      for (std::size_t y = 0; y < d.ny; ++y)
        for (std::size_t z = 0; z < d.nz; ++z) haar_line(vol.data() + d.index(0, y, z), d.nx, sx, tmp, inverse);
      break;
    case 1:
      for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t z = 0; z < d.nz; ++z) haar_line(vol.data() + d.index(x, 0, z), d.ny, sy, tmp, inverse);
      break;
    default:
      for (std::size_t x = 0; x < d.nx; ++x)
        for (std::size_t y = 0; y < d.ny; ++y) haar_line(vol.data() + d.index(x, y, 0), d.nz, 1, tmp, inverse);
      break;
  }
}

void check_haar(std::span<cplx> vol, Dims3 d) {
  if (vol.size() != d.voxels()) throw DomainError("haar3d: volume size does not match dims");
  if (d.nx % 2 || d.ny % 2 || d.nz % 2) throw DomainError("haar3d: all dimensions must be even, got " + to_string(d));
}

}  // namespace

void haar3d_forward(std::span<cplx> vol, Dims3 dims) {
  check_haar(vol, dims);
  for (int a = 0; a < 3; ++a) haar_axis(vol, dims, a, false);
}

void haar3d_inverse(std::span<cplx> vol, Dims3 dims) {
  check_haar(vol, dims);
  for (int a = 2; a >= 0; --a) haar_axis(vol, dims, a, true);
}

cplx soft_threshold(cplx c, double t) {
  const double m = std::abs(c);
  if (m <= t) return {0.0, 0.0};
  return c * (1.0 - t / m);
}

WaveletResult baseline_wavelet(const SubspaceModel& model, const KSpaceData& b, double gamma_w, std::size_t iters,
                               const ReconConfig& cfg, bool momentum) {
  if (!(gamma_w >= 0.0)) throw DomainError("baseline_wavelet: gamma_w must be >= 0");
  PreparedProblem prob = prepare_problem(model, b, cfg);
  const DataTerm& dt = prob.data_term;
  const Dims3 dims = prob.initial.dims;

  WaveletResult res;
  res.scaling = prob.scaling;
  res.lipschitz = 1.05 * estimate_normal_norm(dt, cfg.power_iters);
  const double step = 1.0 / res.lipschitz;
  const double thresh = gamma_w * step;
  const double half_b2 = 0.5 * norm2(dt.data().data);

  auto l1 = [&](const SpatialFactor& u) {
    SpatialFactor w = u;
    double s = 0.0;
    for (std::size_t r = 0; r < w.count; ++r) {
      haar3d_forward(w.volume(r), dims);
      for (const auto& c : w.volume(r)) s += std::abs(c);
    }
    return s;
  };
  // 1/2 ||A x - b||^2 = 1/2 <x, G x> - Re<x, A^H b> + 1/2 ||b||^2
  auto objective = [&](const SpatialFactor& u, const SpatialFactor& gu) {
    return 0.5 * real_inner(u.data, gu.data) - real_inner(u.data, dt.rhs().data) + half_b2 + gamma_w * l1(u);
  };

  SpatialFactor u = std::move(prob.initial);
  SpatialFactor y = u;
  SpatialFactor gy = dt.normal(y);
  res.objective.push_back(objective(u, gy));
  double t = 1.0;
  for (std::size_t k = 0; k < iters; ++k) {
    SpatialFactor next = y;
    for (std::size_t i = 0; i < next.data.size(); ++i) next.data[i] -= step * (gy.data[i] - dt.rhs().data[i]);
    for (std::size_t r = 0; r < next.count; ++r) {
      auto vol = next.volume(r);
      haar3d_forward(vol, dims);
      for (auto& c : vol) c = soft_threshold(c, thresh);
      haar3d_inverse(vol, dims);
    }
    if (!all_finite(next.data)) throw SolverError("baseline_wavelet: non-finite iterate at iteration " + std::to_string(k));
    if (momentum) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = next;
      for (std::size_t i = 0; i < y.data.size(); ++i)
        y.data[i] += ((t - 1.0) / t_next) * (next.data[i] - u.data[i]);
      t = t_next;
      u = std::move(next);
      res.objective.push_back(objective(u, dt.normal(u)));
      gy = dt.normal(y);
    } else {
      u = std::move(next);
      y = u;
      gy = dt.normal(y);
      res.objective.push_back(objective(u, gy));
    }
  }
  for (auto& v : u.data) v /= prob.scaling.data_scale;
  res.u = std::move(u);
  return res;
}

}  // namespace ssmuse
