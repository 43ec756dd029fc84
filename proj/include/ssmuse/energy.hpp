#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmuse/array.hpp"
#include "ssmuse/network.hpp"

namespace ssmuse {

// ---------------------------------------------------------------------------
// 2D energy phi(u) = 1/2 ||u - psi(u)||^2 on complex slices. Slices enter the
// network as two real channels (real, imaginary). Gradients of real-valued
// functions of complex data are returned as d/dRe + i d/dIm throughout.

Slice2D psi_apply(const EnergyModelParams& params, const Slice2D& slice);
double energy_2d(const EnergyModelParams& params, const Slice2D& slice);
Slice2D score_2d(const EnergyModelParams& params, const Slice2D& slice);

nn::Tensor to_channels(const Slice2D& slice);
Slice2D from_channels(const nn::Tensor& t, std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------------------
// Slicewise energy of a spatial factor.

/// Slicing plane. `x` holds m_x fixed (a y-z slice), `y` holds m_y fixed
/// (an x-z slice), `z` holds m_z fixed (an x-y slice).
enum class Orientation { x, y, z };

std::size_t slice_count(Dims3 dims, Orientation o);
Slice2D extract_slice(const SpatialFactor& u, std::size_t basis, Orientation o, std::size_t index);
void insert_slice(SpatialFactor& u, std::size_t basis, Orientation o, std::size_t index, const Slice2D& s);

/// I^o(U) = sum_r sum_m phi(B_{m,r} U) for one orientation.
double energy_orientation(const EnergyModelParams& params, const SpatialFactor& u, Orientation o);
/// Gradient of energy_orientation; optionally returns the energy as well.
SpatialFactor score_orientation(const EnergyModelParams& params, const SpatialFactor& u, Orientation o,
                                double* energy_out = nullptr);

/// I(U) = 1/2 (I^x(U) + I^y(U))
double energy_4d(const EnergyModelParams& params, const SpatialFactor& u);
SpatialFactor score_4d(const EnergyModelParams& params, const SpatialFactor& u);

// ---------------------------------------------------------------------------
// Multi-scale denoising score matching.

enum class NoiseWeighting { inverse_sigma, unit };

struct TrainConfig {
  double sigma_min = 1e-3;
  double sigma_max = 0.2;
  std::size_t epochs = 80;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  NoiseWeighting weighting = NoiseWeighting::inverse_sigma;
  std::uint64_t seed = 0;

  double gamma(double sigma) const { return weighting == NoiseWeighting::inverse_sigma ? 1.0 / sigma : 1.0; }
  void validate() const;
};

class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

/// One noisy training example: the clean slice and the injected noise sigma*z.
struct NoisyExample {
  std::size_t slice = 0;
  double sigma = 0.0;
  nn::Tensor noise;  // sigma * z, 2 x pixels
};

/// Mean over the examples of gamma(sigma) ||score(u + sigma z) - sigma z||^2.
/// When `grad` is non-empty it receives the gradient with respect to the weights.
double score_matching_loss(const EnergyModelParams& params, const std::vector<Slice2D>& slices,
                           const std::vector<NoisyExample>& batch, const TrainConfig& cfg, std::span<double> grad);

/// Draws sigma ~ U(sigma_min, sigma_max] and z with standard normal real and
/// imaginary channels.
NoisyExample draw_noise(std::size_t slice, std::size_t pixels, const TrainConfig& cfg, std::mt19937_64& rng);

struct TrainResult {
  EnergyModelParams params;
  std::vector<EpochLog> log;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) on the score-matching loss.
TrainResult train_score_matching(const EnergyModelParams& init, const std::vector<Slice2D>& slices,
                                 const TrainConfig& cfg,
                                 const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace ssmuse
