#include "ssmuse/quant.hpp"

#include <cmath>
#include <string>

namespace ssmuse {

ComplexVolume synthesize_contrast(const SpatialFactor& u, const TemporalBasis& basis, std::size_t tau) {
  if (tau >= basis.frames()) throw DomainError("synthesize_contrast: frame index " + std::to_string(tau) + " out of range");
  if (u.count != basis.rank()) throw DomainError("synthesize_contrast: spatial factor rank does not match basis");
  ComplexVolume out(u.dims);
  for (std::size_t r = 0; r < u.count; ++r) {
    const double w = basis.v(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(tau));
    const auto vol = u.volume(r);
    for (std::size_t i = 0; i < vol.size(); ++i) out.data[i] += w * vol[i];
  }
  return out;
}

T1Map fit_t1_dictionary(const SpatialFactor& u, const TemporalBasis& basis, const SignalDictionary& dict,
                        const Mask& mask) {
  if (u.count != basis.rank()) throw DomainError("fit_t1_dictionary: spatial factor rank does not match basis");
  if (mask.dims != u.dims) throw DomainError("fit_t1_dictionary: mask shape does not match spatial factor");
  if (static_cast<std::size_t>(dict.signals.cols()) != basis.frames() || dict.t1_grid.empty())
    throw DomainError("fit_t1_dictionary: dictionary does not match basis");
  if (mask_count(mask) == 0) throw DomainError("fit_t1_dictionary: empty mask");

  const Eigen::Index R = static_cast<Eigen::Index>(u.count);
  // Subspace coefficients of each atom, one per row, and their norms.
  const Eigen::MatrixXd coef = dict.signals * basis.v.transpose();
  const Eigen::VectorXd norms = coef.rowwise().norm();
  const double t1_min = dict.t1_grid.front();

  T1Map map{RealVolume(u.dims), ComplexVolume(u.dims), RealVolume(u.dims)};
  Eigen::VectorXcd uv(R);
  const std::size_t nvox = u.dims.voxels();
  for (std::size_t i = 0; i < nvox; ++i) {
    if (!mask.data[i]) continue;
    for (Eigen::Index r = 0; r < R; ++r) uv(r) = u.data[static_cast<std::size_t>(r) * nvox + i];
    const double un = uv.norm();
    if (un == 0.0) {
      map.t1.data[i] = t1_min;
      continue;
    }
    Eigen::Index best = 0;
    double best_corr = -1.0;
    cplx best_ip{};
    for (Eigen::Index a = 0; a < coef.rows(); ++a) {
      if (norms(a) == 0.0) continue;
      cplx ip{};
      for (Eigen::Index r = 0; r < R; ++r) ip += uv(r) * coef(a, r);
      const double corr = std::abs(ip) / norms(a);
      if (corr > best_corr) {
        best_corr = corr;
        best = a;
        best_ip = ip;
      }
    }
    map.t1.data[i] = dict.t1_grid[static_cast<std::size_t>(best)];
    map.amplitude.data[i] = best_ip / (norms(best) * norms(best));
    const double rel = best_corr / un;
    map.match_residual.data[i] = std::sqrt(std::max(0.0, 1.0 - rel * rel));
  }
  return map;
}

namespace {

void check_pair(const RealVolume& a, const RealVolume& b, const Mask& mask, const char* where) {
  if (a.dims != b.dims || mask.dims != a.dims) throw DomainError(std::string(where) + ": shape mismatch");
}

}  // namespace

double psnr(const RealVolume& estimate, const RealVolume& reference, const Mask& mask) {
  check_pair(estimate, reference, mask, "psnr");
  double peak = 0.0, se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (!mask.data[i]) continue;
    peak = std::max(peak, std::abs(reference.data[i]));
    const double d = estimate.data[i] - reference.data[i];
    se += d * d;
    ++n;
  }
  if (n == 0) throw DomainError("psnr: empty mask");
  if (peak == 0.0) throw DomainError("psnr: reference is zero on the mask");
  const double rmse = std::sqrt(se / static_cast<double>(n));
  if (rmse == 0.0) return psnr_cap_db;
  return std::min(psnr_cap_db, 20.0 * std::log10(peak / rmse));
}

RealVolume error_map(const RealVolume& estimate, const RealVolume& reference, const Mask& mask) {
  check_pair(estimate, reference, mask, "error_map");
  RealVolume out(estimate.dims);
  for (std::size_t i = 0; i < mask.data.size(); ++i)
    if (mask.data[i]) out.data[i] = std::abs(estimate.data[i] - reference.data[i]);
  return out;
}

RealVolume magnitude(const ComplexVolume& v) {
  RealVolume out(v.dims);
  for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = std::abs(v.data[i]);
  return out;
}

std::size_t mask_count(const Mask& mask) {
  std::size_t n = 0;
  for (auto m : mask.data) n += m != 0;
  return n;
}

}  // namespace ssmuse
