#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace ssmuse {

/// Constant flip angle over a 1-based inclusive echo range.
struct FlipSegment {
  std::size_t first_echo = 1;
  std::size_t last_echo = 1;
  double flip_rad = 0.0;
};

/// MPnRAGE-style inversion-recovery block: inversion, a train of
/// `n_echoes_per_block` gradient echoes spaced by `tr`, then a recovery delay.
struct SequenceParams {
  std::size_t n_echoes_per_block = 385;
  double tr = 4.88e-3;
  std::vector<FlipSegment> flip_schedule;
  double recovery_delay = 503.5e-3;
  double inversion_efficiency = 1.0;
  std::size_t n_blocks_to_steady_state = 5;

  /// 385 echoes, TR 4.88 ms, 4 deg for echoes 1-304 and 8 deg for 305-385,
  /// 503.5 ms recovery delay.
  static SequenceParams mpnrage_defaults();

  /// Same block duration and 4/8 deg split as the full sequence, compressed
  /// to `n_echoes` echoes (TR stretched so the block spans the same TI range).
  static SequenceParams desk_scale(std::size_t n_echoes);

  /// Flip angle applied at echo k (0-based).
  double flip_at(std::size_t k) const;

  /// Throws DomainError when the invariants do not hold.
  void validate() const;
};

struct SignalDictionary {
  std::vector<double> t1_grid;
  Eigen::MatrixXd signals;  // one row per T1 value
};

struct TemporalBasis {
  Eigen::MatrixXd v;  // R x T, orthonormal rows
  std::vector<double> singular_values;

  std::size_t rank() const { return static_cast<std::size_t>(v.rows()); }
  std::size_t frames() const { return static_cast<std::size_t>(v.cols()); }
  /// Sum of the leading `rank()` squared singular values over the total.
  double captured_energy() const;
};

/// Longitudinal Bloch recursion for one steady-state inversion block.
Eigen::VectorXd simulate_ir_signal(double t1, const SequenceParams& params);

SignalDictionary build_dictionary(const std::vector<double>& t1_grid, const SequenceParams& params);

/// `count` log-spaced T1 values in [lo, hi].
std::vector<double> log_t1_grid(std::size_t count = 100, double lo = 0.1, double hi = 5.0);

/// Top-`rank` right singular vectors of the (uncentred) dictionary. Each row
/// is sign-fixed so its first nonzero entry is positive.
TemporalBasis compute_temporal_basis(const SignalDictionary& dict, std::size_t rank);

/// Coefficients c = signal * v^T.
Eigen::VectorXd project_to_subspace(const Eigen::VectorXd& signal, const TemporalBasis& basis);

}  // namespace ssmuse
