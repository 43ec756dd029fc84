#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmuse/config.hpp"
#include "ssmuse/energy.hpp"
#include "ssmuse/forward.hpp"
#include "ssmuse/quant.hpp"
#include "ssmuse/seqsim.hpp"
#include "ssmuse/solver.hpp"

namespace ssmuse {

// ---------------------------------------------------------------------------
// Phantoms and data synthesis

struct Phantom {
  RealVolume t1_map;
  RealVolume proton_density;
  Mask support_mask;
};

/// Nested ellipsoids; later tissues overwrite earlier ones.
Phantom make_phantom(Dims3 dims, const std::vector<Tissue>& tissues);

/// `tissues` with jittered centres, radii, T1 and PD. Used for training data.
std::vector<Tissue> jitter_tissues(const std::vector<Tissue>& tissues, std::uint64_t seed);

/// Noiseless image series x_tau = PD * signal(T1)[tau] stored compactly: one
/// PD-weighted indicator volume per distinct T1 and its signal curve.
struct GroundTruth {
  std::vector<double> t1_values;
  SpatialFactor pd_volumes;  // one volume per entry of t1_values
  Eigen::MatrixXd signals;   // t1_values.size() x T

  ComplexVolume frame(std::size_t tau) const;
  /// Projection of the series onto the basis: U* = X V^T.
  SpatialFactor factor(const TemporalBasis& basis) const;
};

GroundTruth ground_truth(const Phantom& ph, const SequenceParams& seq);

struct Synthesis {
  KSpaceData data;
  KSpaceData clean;
  GroundTruth truth;
};

/// b_tau = A_tau x_tau + n_tau with complex Gaussian noise, E|n|^2 = noise_sigma^2.
Synthesis synthesize_kspace(const Phantom& ph, const SequenceParams& seq, const Trajectory& traj,
                            const CoilMaps& coils, double noise_sigma, std::uint64_t seed);

struct TrainingSlices {
  std::vector<Slice2D> slices;
  std::vector<double> scales;  // divisor applied to each retained slice
};

/// All orientations and basis indices; drops slices whose norm is below
/// snr_floor times the largest slice norm of the same basis volume, then
/// scales each slice to unit peak magnitude.
TrainingSlices extract_training_slices(const std::vector<SpatialFactor>& factors, double snr_floor);

// ---------------------------------------------------------------------------
// Pipeline

struct Acquisition {
  SequenceParams seq;
  SignalDictionary dict;
  TemporalBasis basis;
  Trajectory reference_traj;
  Trajectory accelerated_traj;
  CoilMaps coils;
};

Acquisition build_acquisition(const ExperimentConfig& cfg);

/// Trains on phantoms jittered from the configured tissues (their
/// ground-truth spatial factors).
TrainResult train_model(const ExperimentConfig& cfg, const Acquisition& acq,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

struct ReconOutcome {
  SpatialFactor u;
  SolverTrace trace;
  double wall_seconds = 0.0;
};

ReconOutcome reconstruct(Method method, const SubspaceModel& model, const KSpaceData& b, const ExperimentConfig& cfg,
                         const EnergyModelParams* params);

struct MetricsRow {
  std::string method;
  double psnr_t1_db = 0.0;
  double mean_abs_t1_err_s = 0.0;
  std::vector<double> psnr_contrast_db;
  double wall_seconds = 0.0;
};

/// Compares a reconstruction (T1 map and contrasts) with reference maps.
MetricsRow compare(const std::string& name, const RealVolume& t1, const std::vector<ComplexVolume>& contrasts,
                   const RealVolume& ref_t1, const std::vector<ComplexVolume>& ref_contrasts, const Mask& mask,
                   double wall_seconds);

std::string metrics_csv(const std::vector<MetricsRow>& rows, const std::vector<std::size_t>& frames);
std::string trace_csv(const SolverTrace& trace, bool with_wall_time);
std::string training_log_csv(const std::vector<EpochLog>& log, bool with_wall_time);

struct StageTime {
  std::string stage;
  double seconds = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;
  Phantom phantom;
  SpatialFactor truth_factor;
  SpatialFactor u;
  SpatialFactor reference_u;
  T1Map t1;
  T1Map reference_t1;
  std::vector<ComplexVolume> contrasts;
  std::vector<ComplexVolume> reference_contrasts;
  std::vector<ComplexVolume> truth_contrasts;
  RealVolume t1_error;
  std::vector<MetricsRow> metrics;
  SolverTrace trace;
  std::vector<EpochLog> training_log;
  std::optional<EnergyModelParams> model;
  std::vector<StageTime> timings;
};

/// Failure inside run_experiment, tagged with the stage that failed.
class ExperimentError : public std::runtime_error {
public:
  ExperimentError(std::string stage_name, const std::string& what)
      : std::runtime_error("stage '" + stage_name + "': " + what), stage(std::move(stage_name)) {}
  std::string stage;
};

using ProgressFn = std::function<void(const std::string&)>;

ExperimentReport run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Rendering

/// 8-bit binary PGM of the central z slice (rows x, columns y), linearly
/// mapped from [lo, hi]; a constant image maps to 0.
std::string render_pgm(const RealVolume& v, double lo, double hi);

/// Writes images with window/level sidecars, arrays and CSV files into `dir`.
void render_outputs(const ExperimentReport& report, const std::filesystem::path& dir);

/// Writes `<stem>.pgm` and `<stem>.pgm.txt` windowed to the data's min/max.
void write_image(const std::filesystem::path& stem, const RealVolume& v);

}  // namespace ssmuse
