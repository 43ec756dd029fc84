#include "ssmuse/network.hpp"

#include <cmath>
#include <random>

#include "ssmuse/array.hpp"

namespace ssmuse {

Activation activation_from_string(const std::string& name) {
  if (name == "silu") return Activation::silu;
  if (name == "tanh") return Activation::tanh;
  throw DomainError("unknown activation '" + name + "' (expected silu or tanh)");
}

std::string to_string(Activation a) { return a == Activation::silu ? "silu" : "tanh"; }

NetworkArch NetworkArch::desk_default() {
  NetworkArch arch;
  arch.layers = {{2, 16, 3}, {16, 32, 3}, {32, 32, 3}, {32, 16, 3}, {16, 2, 3}};
  return arch;
}

std::size_t NetworkArch::weight_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels;
  return n;
}

void NetworkArch::validate() const {
  if (layers.empty()) throw DomainError("NetworkArch: no layers");
  if (layers.front().in_channels != 2) throw DomainError("NetworkArch: first layer must take 2 channels");
  if (layers.back().out_channels != 2) throw DomainError("NetworkArch: last layer must produce 2 channels");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in_channels == 0 || l.out_channels == 0) throw DomainError("NetworkArch: empty layer");
    if (l.kernel == 0 || l.kernel % 2 == 0) throw DomainError("NetworkArch: kernel size must be odd");
    if (i > 0 && layers[i - 1].out_channels != l.in_channels)
      throw DomainError("NetworkArch: channel counts of consecutive layers do not chain");
  }
}

bool NetworkArch::operator==(const NetworkArch& o) const {
  if (activation != o.activation || residual != o.residual || layers.size() != o.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].in_channels != o.layers[i].in_channels || layers[i].out_channels != o.layers[i].out_channels ||
        layers[i].kernel != o.layers[i].kernel)
      return false;
  return true;
}

EnergyModelParams init_network(const NetworkArch& arch, std::uint64_t seed) {
  arch.validate();
  EnergyModelParams p;
  p.arch = arch;
  p.seed = seed;
  p.weights.assign(arch.weight_count(), 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const std::size_t fan_in = l.in_channels * l.kernel * l.kernel;
    double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    if (i + 1 == arch.layers.size()) std_dev *= 0.1;
    const std::size_t nw = l.out_channels * fan_in;
    for (std::size_t k = 0; k < nw; ++k) p.weights[off + k] = std_dev * normal(rng);
    off += nw + l.out_channels;  // biases stay zero
  }
  return p;
}

namespace nn {

namespace {

struct Act {
  Activation kind;

  double f(double z) const {
    if (kind == Activation::tanh) return std::tanh(z);
    return z / (1.0 + std::exp(-z));
  }
  double df(double z) const {
    if (kind == Activation::tanh) {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
  }
  double d2f(double z) const {
    if (kind == Activation::tanh) {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
  }
};

}  // namespace

Tensor im2col(const Tensor& in, Shape2 shape, std::size_t kernel) {
  const auto c = in.rows();
  const long pad = static_cast<long>(kernel / 2);
  const long h = static_cast<long>(shape.rows), w = static_cast<long>(shape.cols);
  Tensor cols = Tensor::Zero(c * static_cast<Eigen::Index>(kernel * kernel), in.cols());
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      const Eigen::Index p = i * w + j;
      for (long di = 0; di < static_cast<long>(kernel); ++di) {
        const long si = i + di - pad;
        if (si < 0 || si >= h) continue;
        for (long dj = 0; dj < static_cast<long>(kernel); ++dj) {
          const long sj = j + dj - pad;
          if (sj < 0 || sj >= w) continue;
          const Eigen::Index kk = di * static_cast<long>(kernel) + dj;
          cols.block(kk * c, p, c, 1) = in.col(si * w + sj);
        }
      }
    }
  return cols;
}

Tensor col2im(const Tensor& cols, std::size_t channels, Shape2 shape, std::size_t kernel) {
  const auto c = static_cast<Eigen::Index>(channels);
  const long pad = static_cast<long>(kernel / 2);
  const long h = static_cast<long>(shape.rows), w = static_cast<long>(shape.cols);
  Tensor out = Tensor::Zero(c, cols.cols());
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      const Eigen::Index p = i * w + j;
      for (long di = 0; di < static_cast<long>(kernel); ++di) {
        const long si = i + di - pad;
        if (si < 0 || si >= h) continue;
        for (long dj = 0; dj < static_cast<long>(kernel); ++dj) {
          const long sj = j + dj - pad;
          if (sj < 0 || sj >= w) continue;
          const Eigen::Index kk = di * static_cast<long>(kernel) + dj;
          out.col(si * w + sj) += cols.block(kk * c, p, c, 1);
        }
      }
    }
  return out;
}

struct Network::Cache {
  std::vector<Tensor> cols;  // im2col of each layer input
  std::vector<Tensor> z;     // pre-activations
};

Network::Network(const EnergyModelParams& params) : params_(&params) {
  params.arch.validate();
  if (params.weights.size() != params.arch.weight_count())
    throw DomainError("Network: weight count does not match architecture");
  std::size_t off = 0;
  for (const auto& l : params.arch.layers) {
    offsets_.push_back(off);
    off += l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels;
  }
}

namespace {

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMap weight_matrix(const std::vector<double>& w, std::size_t off, const ConvLayer& l) {
  return {w.data() + off, static_cast<Eigen::Index>(l.out_channels),
          static_cast<Eigen::Index>(l.in_channels * l.kernel * l.kernel)};
}

ConstVecMap bias_vector(const std::vector<double>& w, std::size_t off, const ConvLayer& l) {
  return {w.data() + off + l.out_channels * l.in_channels * l.kernel * l.kernel,
          static_cast<Eigen::Index>(l.out_channels)};
}

Tensor apply(const Tensor& z, const Act& act, int order) {
  if (order == 0) return z.unaryExpr([&](double v) { return act.f(v); });
  if (order == 1) return z.unaryExpr([&](double v) { return act.df(v); });
  return z.unaryExpr([&](double v) { return act.d2f(v); });
}

}  // namespace

void Network::run_forward(const Tensor& x, Shape2 shape, Cache& cache) const {
  const auto& arch = params_->arch;
  if (x.rows() != 2 || static_cast<std::size_t>(x.cols()) != shape.pixels())
    throw DomainError("Network: input must be 2 x pixels");
  const Act act{arch.activation};
  const std::size_t n = arch.layers.size();
  cache.cols.resize(n);
  cache.z.resize(n);
  Tensor a = x;
  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = arch.layers[l];
    cache.cols[l] = im2col(a, shape, layer.kernel);
    cache.z[l] = weight_matrix(params_->weights, offsets_[l], layer) * cache.cols[l];
    cache.z[l].colwise() += bias_vector(params_->weights, offsets_[l], layer);
    if (l + 1 < n) a = apply(cache.z[l], act, 0);
  }
}

Tensor Network::input_vjp(const Tensor& cotangent, Shape2 shape, const Cache& cache) const {
  const auto& arch = params_->arch;
  const Act act{arch.activation};
  Tensor delta = cotangent;
  for (std::size_t l = arch.layers.size(); l-- > 0;) {
    const auto& layer = arch.layers[l];
    const Tensor g = col2im(weight_matrix(params_->weights, offsets_[l], layer).transpose() * delta,
                            layer.in_channels, shape, layer.kernel);
    if (l == 0) return g;
    delta = apply(cache.z[l - 1], act, 1).cwiseProduct(g);
  }
  return delta;
}

Tensor Network::forward(const Tensor& x, Shape2 shape) const {
  Cache cache;
  run_forward(x, shape, cache);
  if (params_->arch.residual) return x + cache.z.back();
  return cache.z.back();
}

double Network::energy(const Tensor& x, Shape2 shape) const {
  return 0.5 * (x - forward(x, shape)).squaredNorm();
}

Tensor Network::score(const Tensor& x, Shape2 shape, double* energy_out) const {
  Cache cache;
  run_forward(x, shape, cache);
  const bool res = params_->arch.residual;
  const Tensor r = res ? Tensor(-cache.z.back()) : Tensor(x - cache.z.back());
  if (energy_out) *energy_out = 0.5 * r.squaredNorm();
  Tensor g = -input_vjp(r, shape, cache);
  if (!res) g += r;
  return g;
}

void Network::score_parameter_vjp(const Tensor& x, const Tensor& e, Shape2 shape, std::span<double> grad) const {
  const auto& arch = params_->arch;
  if (grad.size() != arch.weight_count()) throw DomainError("score_parameter_vjp: gradient length mismatch");
  if (e.rows() != x.rows() || e.cols() != x.cols()) throw DomainError("score_parameter_vjp: direction shape");
  const Act act{arch.activation};
  const std::size_t n = arch.layers.size();

  Cache cache;
  run_forward(x, shape, cache);

  // Tangent pass along e: t_l = W_l cols(da_{l-1}), da_l = f'(z_l) t_l.
  std::vector<Tensor> tcols(n), tz(n);
  Tensor ta = e;
  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = arch.layers[l];
    tcols[l] = im2col(ta, shape, layer.kernel);
    tz[l] = weight_matrix(params_->weights, offsets_[l], layer) * tcols[l];
    if (l + 1 < n) ta = apply(cache.z[l], act, 1).cwiseProduct(tz[l]);
  }

  // h = <r, q>, r = x - psi(x), q = e - J_psi e.
  const bool res = arch.residual;
  const Tensor r = res ? Tensor(-cache.z.back()) : Tensor(x - cache.z.back());
  const Tensor q = res ? Tensor(-tz.back()) : Tensor(e - tz.back());
  Tensor zbar = -q;
  Tensor tzbar = -r;

  for (std::size_t l = n; l-- > 0;) {
    const auto& layer = arch.layers[l];
    const auto nw = static_cast<Eigen::Index>(layer.out_channels * layer.in_channels * layer.kernel * layer.kernel);
    Eigen::Map<Eigen::MatrixXd> wg(grad.data() + offsets_[l], static_cast<Eigen::Index>(layer.out_channels),
                                   static_cast<Eigen::Index>(layer.in_channels * layer.kernel * layer.kernel));
    Eigen::Map<Eigen::VectorXd> bg(grad.data() + offsets_[l] + nw, static_cast<Eigen::Index>(layer.out_channels));
    wg.noalias() += zbar * cache.cols[l].transpose();
    wg.noalias() += tzbar * tcols[l].transpose();
    bg += zbar.rowwise().sum();
    if (l == 0) break;

    const auto wt = weight_matrix(params_->weights, offsets_[l], layer).transpose();
    const Tensor abar = col2im(wt * zbar, layer.in_channels, shape, layer.kernel);
    const Tensor tabar = col2im(wt * tzbar, layer.in_channels, shape, layer.kernel);
    const Tensor f1 = apply(cache.z[l - 1], act, 1);
    const Tensor f2 = apply(cache.z[l - 1], act, 2);
    zbar = f1.cwiseProduct(abar) + f2.cwiseProduct(tz[l - 1]).cwiseProduct(tabar);
    tzbar = f1.cwiseProduct(tabar);
  }
}

}  // namespace nn
}  // namespace ssmuse
