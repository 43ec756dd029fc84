#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ssmuse {

struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
};

enum class Activation { silu, tanh };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

/// Stack of stride-1 same-padded convolutions with a smooth activation
/// between layers (none after the last). With `residual` the network output
/// is input + stack(input).
struct NetworkArch {
  std::vector<ConvLayer> layers;
  Activation activation = Activation::silu;
  bool residual = true;

  /// 2 -> 16 -> 32 -> 32 -> 16 -> 2, 3x3 kernels, SiLU, residual.
  static NetworkArch desk_default();

  std::size_t weight_count() const;
  void validate() const;
  bool operator==(const NetworkArch&) const;
};

struct EnergyModelParams {
  NetworkArch arch;
  std::vector<double> weights;
  std::uint64_t seed = 0;
};

/// Deterministic He-style initialisation with zero biases; the last layer is
/// scaled down so a residual network starts close to the identity.
EnergyModelParams init_network(const NetworkArch& arch, std::uint64_t seed);

namespace nn {

/// Feature map: channels x pixels, pixel p = row * width + col.
using Tensor = Eigen::MatrixXd;

struct Shape2 {
  std::size_t rows = 0, cols = 0;
  std::size_t pixels() const { return rows * cols; }
};

/// Evaluates psi and its derivatives for one parameter vector. Holds views
/// into the weight vector; the params object must outlive it.
class Network {
public:
  explicit Network(const EnergyModelParams& params);

  /// psi(x)
  Tensor forward(const Tensor& x, Shape2 shape) const;

  /// Energy 1/2 ||x - psi(x)||^2 and its input gradient (I - J_psi)^T (x - psi(x)).
  double energy(const Tensor& x, Shape2 shape) const;
  Tensor score(const Tensor& x, Shape2 shape, double* energy_out = nullptr) const;

  /// Gradient with respect to the weights of h(theta) = <e, score_theta(x)>,
  /// accumulated into `grad` (length weight_count). This is the
  /// vector-Jacobian product of the score with respect to the parameters.
  void score_parameter_vjp(const Tensor& x, const Tensor& e, Shape2 shape, std::span<double> grad) const;

private:
  struct Cache;
  void run_forward(const Tensor& x, Shape2 shape, Cache& cache) const;
  Tensor input_vjp(const Tensor& cotangent, Shape2 shape, const Cache& cache) const;

  const EnergyModelParams* params_;
  std::vector<std::size_t> offsets_;  // weight offset of each layer
};

Tensor im2col(const Tensor& in, Shape2 shape, std::size_t kernel);
Tensor col2im(const Tensor& cols, std::size_t channels, Shape2 shape, std::size_t kernel);

}  // namespace nn
}  // namespace ssmuse
