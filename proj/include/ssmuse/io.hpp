#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmuse/energy.hpp"
#include "ssmuse/forward.hpp"
#include "ssmuse/quant.hpp"
#include "ssmuse/seqsim.hpp"

namespace ssmuse {

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// SSMA binary arrays: "SSMA", u16 version, u8 dtype (0 f64, 1 c128), u8 ndim,
// u64 shape per dim, then row-major data. Everything little-endian.

enum class Dtype : std::uint8_t { f64 = 0, c128 = 1 };
inline constexpr std::uint16_t ssma_version = 1;

struct Array {
  Dtype dtype = Dtype::f64;
  std::vector<std::uint64_t> shape;
  std::vector<double> real;   // dtype f64
  std::vector<cplx> complex;  // dtype c128

  std::size_t elements() const;
};

void write_array(const std::filesystem::path& path, const std::vector<std::uint64_t>& shape,
                 std::span<const double> data);
void write_array(const std::filesystem::path& path, const std::vector<std::uint64_t>& shape,
                 std::span<const cplx> data);
Array read_array(const std::filesystem::path& path);

// Typed wrappers. Spatial factors and coil maps are (count, nx, ny, nz),
// volumes (nx, ny, nz), trajectories (frames, spokes, samples per spoke, 3),
// k-space (frames, samples, coils), the temporal basis (R, T).
void save_factor(const std::filesystem::path& path, const SpatialFactor& u);
SpatialFactor load_factor(const std::filesystem::path& path);
void save_volume(const std::filesystem::path& path, const RealVolume& v);
RealVolume load_volume(const std::filesystem::path& path);
void save_volume(const std::filesystem::path& path, const ComplexVolume& v);
ComplexVolume load_complex_volume(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const Mask& m);
Mask load_mask(const std::filesystem::path& path);
void save_trajectory(const std::filesystem::path& path, const Trajectory& t);
/// Angles are not stored; `grid_size` is supplied by the caller.
Trajectory load_trajectory(const std::filesystem::path& path, std::size_t grid_size = 0);
void save_kspace(const std::filesystem::path& path, const KSpaceData& k);
KSpaceData load_kspace(const std::filesystem::path& path);
void save_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_matrix(const std::filesystem::path& path);
void save_basis(const std::filesystem::path& path, const TemporalBasis& b);
TemporalBasis load_basis(const std::filesystem::path& path);

/// Checkpoint: `<stem>.weights.ssma` plus the plain-text `<stem>.arch`.
void save_model(const std::filesystem::path& stem, const EnergyModelParams& p);
EnergyModelParams load_model(const std::filesystem::path& stem);
std::string arch_to_text(const NetworkArch& arch, std::uint64_t seed);
NetworkArch arch_from_text(const std::string& text, std::uint64_t* seed = nullptr);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ssmuse
