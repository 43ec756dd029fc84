#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ssmuse/energy.hpp"
#include "ssmuse/forward.hpp"

namespace ssmuse {

struct BetaStep {
  std::size_t from_iteration = 0;
  double beta = 0.0;
};

enum class InitMode { adjoint, zero };

struct ReconConfig {
  double lambda = 2e-4;
  /// beta_n is the value of the last step whose from_iteration <= n.
  std::vector<BetaStep> beta_schedule{{0, 1e-4}, {28, 4e-4}, {29, 8e-4}};
  std::size_t outer_iters = 30;
  std::size_t prox_steps = 2;
  double prox_step_size = 0.1;
  /// Stops the proximal descent early once ||grad|| falls below this (0 = off).
  double prox_grad_tol = 0.0;
  std::size_t cg_max_iters = 30;
  double cg_residual_tol = 0.05;
  /// Scale the operator to unit spectral norm and the data so the initial
  /// estimate has unit peak magnitude.
  bool normalize = true;
  InitMode init = InitMode::adjoint;
  /// Keep the previous auxiliary variable when the proximal candidate does
  /// not lower the Z-subproblem objective.
  bool safeguard_prox = true;
  std::size_t power_iters = 20;

  double beta_at(std::size_t iteration) const;
  void validate() const;
};

struct TraceRecord {
  std::size_t iteration = 0;
  double beta = 0.0;
  double data_term = 0.0;
  double coupling_term = 0.0;
  double prior_term = 0.0;
  double objective = 0.0;
  std::size_t cg_iterations = 0;
  bool prox_accepted = true;
  double wall_seconds = 0.0;
};

struct SolverTrace {
  std::vector<TraceRecord> records;
};

/// Solver failure that carries the trace recorded up to the failure.
class ReconError : public SolverError {
public:
  ReconError(const std::string& what, SolverTrace t) : SolverError(what), trace(std::move(t)) {}
  SolverTrace trace;
};

/// Data-consistency term 1/2 || g A(UV) - b ||^2 for an operator gain g.
/// The normal operator comes from the model's Toeplitz embedding; `value`
/// evaluates the residual directly.
class DataTerm {
public:
  DataTerm(const SubspaceModel& model, KSpaceData b, double gain = 1.0);

  const SubspaceModel& model() const { return *model_; }
  const KSpaceData& data() const { return b_; }
  double gain() const { return gain_; }
  /// g A^H b V^H
  const SpatialFactor& rhs() const { return rhs_; }
  /// g^2 A^H A(UV) V^H
  SpatialFactor normal(const SpatialFactor& u) const;
  double value(const SpatialFactor& u) const;

private:
  const SubspaceModel* model_;
  KSpaceData b_;
  double gain_;
  SpatialFactor rhs_;
};

struct CgResult {
  SpatialFactor x;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

/// Conjugate gradients for a Hermitian positive definite operator; stops
/// after max_iters or once ||r_k|| / ||r_0|| <= tol.
CgResult conjugate_gradient(const std::function<SpatialFactor(const SpatialFactor&)>& apply,
                            const SpatialFactor& rhs, SpatialFactor x0, std::size_t max_iters, double tol);

/// Largest eigenvalue of the data term's normal operator by power iteration.
double estimate_normal_norm(const DataTerm& dt, std::size_t iters);

/// ||U - Z||^2 + lambda / (2 beta) (I^x(Z) + I^y(Z))
double prox_objective(const SpatialFactor& z, const SpatialFactor& u, const EnergyModelParams& params,
                      double lambda, double beta);

/// Steepest descent on prox_objective starting from Z = U.
SpatialFactor z_update(const SpatialFactor& u, const EnergyModelParams& params, const ReconConfig& cfg,
                       double beta);

/// 1/2 ||A(UV) - b||^2 + beta ||U - Z||^2
double dc_objective(const DataTerm& dt, const SpatialFactor& u, const SpatialFactor& z, double beta);

/// CG on (A^H A + 2 beta) U = A^H b V^H + 2 beta Z from `warm_start`.
CgResult u_update(const DataTerm& dt, const SpatialFactor& z, const ReconConfig& cfg, double beta,
                  const SpatialFactor& warm_start);

struct SplitTerms {
  double data = 0.0, coupling = 0.0, prior = 0.0, total = 0.0;
};

/// 1/2 ||A(UV) - b||^2 + beta ||U - Z||^2 + lambda I(Z)
SplitTerms split_objective(const DataTerm& dt, const SpatialFactor& u, const SpatialFactor& z,
                           const EnergyModelParams& params, double lambda, double beta);

/// Normalisation applied before iterating: U_norm = data_scale * U and the
/// operator is multiplied by gain.
struct ProblemScaling {
  double data_scale = 1.0;
  double gain = 1.0;
};

/// Chooses the scaling (see ReconConfig::normalize) and the initial estimate
/// (least-squares-scaled adjoint reconstruction) in normalised units.
struct PreparedProblem {
  ProblemScaling scaling;
  DataTerm data_term;
  SpatialFactor initial;
};
PreparedProblem prepare_problem(const SubspaceModel& model, const KSpaceData& b, const ReconConfig& cfg);

struct ReconResult {
  SpatialFactor u;
  SolverTrace trace;
  ProblemScaling scaling;
};

/// Alternates the proximal Z-update and the CG U-update for outer_iters
/// iterations. Trace record 0 describes the initial point (Z = U).
ReconResult map_reconstruct(const SubspaceModel& model, const KSpaceData& b, const EnergyModelParams& params,
                            const ReconConfig& cfg);

/// argmin 1/2 ||A(UV) - b||^2 + mu ||U||^2 by CG (in normalised units when
/// cfg.normalize is set).
ReconResult baseline_quadratic(const SubspaceModel& model, const KSpaceData& b, double mu, const ReconConfig& cfg);

struct WaveletResult {
  SpatialFactor u;
  std::vector<double> objective;  // composite objective at each iterate, normalised units
  ProblemScaling scaling;
  double lipschitz = 0.0;
};

/// Proximal gradient with step 1/L on 1/2 ||A(UV) - b||^2 + gamma_w ||W U||_1,
/// W the orthonormal single-level 3D Haar transform of each basis volume.
WaveletResult baseline_wavelet(const SubspaceModel& model, const KSpaceData& b, double gamma_w, std::size_t iters,
                               const ReconConfig& cfg, bool momentum = false);

// Orthonormal single-level 3D Haar transform (all dimensions must be even).
void haar3d_forward(std::span<cplx> vol, Dims3 dims);
void haar3d_inverse(std::span<cplx> vol, Dims3 dims);
/// Prox of t |.| for complex entries: c * max(0, 1 - t / |c|).
cplx soft_threshold(cplx c, double t);

}  // namespace ssmuse
