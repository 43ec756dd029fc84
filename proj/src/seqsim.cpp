#include "ssmuse/seqsim.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ssmuse/array.hpp"

namespace ssmuse {

namespace {

constexpr double deg = std::numbers::pi / 180.0;

}  // namespace

SequenceParams SequenceParams::mpnrage_defaults() {
  SequenceParams p;
  p.flip_schedule = {{1, 304, 4.0 * deg}, {305, 385, 8.0 * deg}};
  return p;
}

SequenceParams SequenceParams::desk_scale(std::size_t n_echoes) {
  if (n_echoes < 2) throw DomainError("desk_scale: need at least 2 echoes");
  SequenceParams p = mpnrage_defaults();
  const double train = p.tr * static_cast<double>(p.n_echoes_per_block);
  auto low = static_cast<std::size_t>(std::lround(304.0 * static_cast<double>(n_echoes) / 385.0));
  low = std::clamp<std::size_t>(low, 1, n_echoes - 1);
  p.n_echoes_per_block = n_echoes;
  p.tr = train / static_cast<double>(n_echoes);
  p.flip_schedule = {{1, low, 4.0 * deg}, {low + 1, n_echoes, 8.0 * deg}};
  return p;
}

double SequenceParams::flip_at(std::size_t k) const {
  const std::size_t echo = k + 1;
  for (const auto& seg : flip_schedule)
    if (echo >= seg.first_echo && echo <= seg.last_echo) return seg.flip_rad;
  throw DomainError("flip_at: echo " + std::to_string(echo) + " not covered by flip schedule");
}

void SequenceParams::validate() const {
  if (n_echoes_per_block < 1) throw DomainError("SequenceParams: n_echoes_per_block must be >= 1");
  if (!(tr > 0.0)) throw DomainError("SequenceParams: tr must be positive");
  if (!(recovery_delay >= 0.0)) throw DomainError("SequenceParams: recovery_delay must be >= 0");
  if (!(inversion_efficiency >= 0.0 && inversion_efficiency <= 1.0))
    throw DomainError("SequenceParams: inversion_efficiency must lie in [0, 1]");
  if (flip_schedule.empty()) throw DomainError("SequenceParams: empty flip schedule");

  // Segments must tile [1, n_echoes_per_block] with no gaps or overlaps.
  auto segs = flip_schedule;
  std::sort(segs.begin(), segs.end(),
            [](const FlipSegment& a, const FlipSegment& b) { return a.first_echo < b.first_echo; });
  std::size_t next = 1;
  for (const auto& s : segs) {
    if (s.first_echo != next || s.last_echo < s.first_echo)
      throw DomainError("SequenceParams: flip schedule does not partition the echo train");
    if (!(s.flip_rad >= 0.0 && s.flip_rad <= std::numbers::pi / 2))
      throw DomainError("SequenceParams: flip angle outside [0, pi/2]");
    next = s.last_echo + 1;
  }
  if (next != n_echoes_per_block + 1)
    throw DomainError("SequenceParams: flip schedule does not cover the echo train");
}

double TemporalBasis::captured_energy() const {
  double kept = 0.0, total = 0.0;
  for (std::size_t i = 0; i < singular_values.size(); ++i) {
    const double s2 = singular_values[i] * singular_values[i];
    total += s2;
    if (i < rank()) kept += s2;
  }
  return total > 0.0 ? kept / total : 1.0;
}

Eigen::VectorXd simulate_ir_signal(double t1, const SequenceParams& params) {
  if (!(t1 > 0.0)) throw DomainError("simulate_ir_signal: t1 must be positive");
  params.validate();

  const std::size_t n = params.n_echoes_per_block;
  std::vector<double> sin_a(n), cos_a(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = params.flip_at(k);
    sin_a[k] = std::sin(a);
    cos_a[k] = std::cos(a);
  }
  const double e_tr = std::exp(-params.tr / t1);
  const double e_delay = std::exp(-params.recovery_delay / t1);
  const double eta = params.inversion_efficiency;

  Eigen::VectorXd signal(static_cast<Eigen::Index>(n));
  double mz = 1.0;
  for (std::size_t block = 0; block <= params.n_blocks_to_steady_state; ++block) {
    mz = -eta * mz;
    for (std::size_t k = 0; k < n; ++k) {
      mz = 1.0 + (mz - 1.0) * e_tr;
      signal[static_cast<Eigen::Index>(k)] = mz * sin_a[k];
      mz *= cos_a[k];
    }
    mz = 1.0 + (mz - 1.0) * e_delay;
  }
  return signal;
}

SignalDictionary build_dictionary(const std::vector<double>& t1_grid, const SequenceParams& params) {
  if (t1_grid.empty()) throw DomainError("build_dictionary: empty T1 grid");
  for (std::size_t i = 1; i < t1_grid.size(); ++i)
    if (!(t1_grid[i] > t1_grid[i - 1]))
      throw DomainError("build_dictionary: T1 grid must be strictly increasing");

  SignalDictionary dict;
  dict.t1_grid = t1_grid;
  dict.signals.resize(static_cast<Eigen::Index>(t1_grid.size()),
                      static_cast<Eigen::Index>(params.n_echoes_per_block));
  for (std::size_t i = 0; i < t1_grid.size(); ++i)
    dict.signals.row(static_cast<Eigen::Index>(i)) = simulate_ir_signal(t1_grid[i], params).transpose();
  return dict;
}

std::vector<double> log_t1_grid(std::size_t count, double lo, double hi) {
  if (count == 0 || !(lo > 0.0) || !(hi > lo)) throw DomainError("log_t1_grid: invalid range");
  std::vector<double> grid(count);
  if (count == 1) {
    grid[0] = lo;
    return grid;
  }
  const double step = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) grid[i] = lo * std::exp(step * static_cast<double>(i));
  grid.back() = hi;
  return grid;
}

TemporalBasis compute_temporal_basis(const SignalDictionary& dict, std::size_t rank) {
  const auto n = static_cast<std::size_t>(dict.signals.rows());
  const auto t = static_cast<std::size_t>(dict.signals.cols());
  if (rank < 1 || rank > std::min(n, t))
    throw DomainError("compute_temporal_basis: rank must lie in [1, min(N, T)]");
  if (t >= 4 && rank > t / 4)
    throw DomainError("compute_temporal_basis: rank must not exceed T/4");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(dict.signals, Eigen::ComputeThinV);
  TemporalBasis basis;
  const auto& sv = svd.singularValues();
  basis.singular_values.assign(sv.data(), sv.data() + sv.size());
  basis.v = svd.matrixV().leftCols(static_cast<Eigen::Index>(rank)).transpose();

  for (Eigen::Index r = 0; r < basis.v.rows(); ++r) {
    for (Eigen::Index k = 0; k < basis.v.cols(); ++k) {
      const double x = basis.v(r, k);
      if (std::abs(x) > 1e-14) {
        if (x < 0.0) basis.v.row(r) *= -1.0;
        break;
      }
    }
  }
  return basis;
}

Eigen::VectorXd project_to_subspace(const Eigen::VectorXd& signal, const TemporalBasis& basis) {
  if (signal.size() != basis.v.cols())
    throw DomainError("project_to_subspace: signal length does not match basis");
  return basis.v * signal;
}

}  // namespace ssmuse
