#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "ssmuse/energy.hpp"

namespace ssmuse {

void TrainConfig::validate() const {
  if (!(sigma_min >= 0.0 && sigma_min < sigma_max)) throw DomainError("TrainConfig: need 0 <= sigma_min < sigma_max");
  if (weighting == NoiseWeighting::inverse_sigma && !(sigma_min > 0.0))
    throw DomainError("TrainConfig: gamma(sigma) = 1/sigma requires sigma_min > 0");
  if (!(learning_rate > 0.0)) throw DomainError("TrainConfig: learning_rate must be positive");
  if (batch_size == 0) throw DomainError("TrainConfig: batch_size must be >= 1");
}

NoisyExample draw_noise(std::size_t slice, std::size_t pixels, const TrainConfig& cfg, std::mt19937_64& rng) {
  NoisyExample ex;
  ex.slice = slice;
  // U[0, width) mapped onto (sigma_min, sigma_max].
  ex.sigma = cfg.sigma_max - std::uniform_real_distribution<double>(0.0, cfg.sigma_max - cfg.sigma_min)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  ex.noise.resize(2, static_cast<Eigen::Index>(pixels));
  for (Eigen::Index p = 0; p < ex.noise.cols(); ++p)
    for (Eigen::Index c = 0; c < 2; ++c) ex.noise(c, p) = ex.sigma * normal(rng);
  return ex;
}

double score_matching_loss(const EnergyModelParams& params, const std::vector<Slice2D>& slices,
                           const std::vector<NoisyExample>& batch, const TrainConfig& cfg, std::span<double> grad) {
  if (batch.empty()) throw DomainError("score_matching_loss: empty batch");
  const nn::Network net(params);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& ex : batch) {
    const Slice2D& s = slices.at(ex.slice);
    const nn::Shape2 shape{s.rows, s.cols};
    const nn::Tensor noisy = to_channels(s) + ex.noise;
    const nn::Tensor diff = net.score(noisy, shape) - ex.noise;
    const double gamma = cfg.gamma(ex.sigma);
    loss += gamma * diff.squaredNorm() * inv_b;
    if (!grad.empty()) net.score_parameter_vjp(noisy, (2.0 * gamma * inv_b) * diff, shape, grad);
  }
  return loss;
}

TrainResult train_score_matching(const EnergyModelParams& init, const std::vector<Slice2D>& slices,
                                 const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  init.arch.validate();
  if (slices.empty()) throw DomainError("train_score_matching: empty training set");
  for (const auto& s : slices) {
    if (!all_finite(s.data)) throw DomainError("train_score_matching: non-finite training slice");
    for (const auto& v : s.data)
      if (std::abs(v) > 1.0 + 1e-12)
        throw DomainError("train_score_matching: training slices must be normalised to max magnitude <= 1");
  }

  TrainResult result{init, {}};
  auto& params = result.params;
  const std::size_t nw = params.weights.size();
  std::vector<double> m(nw, 0.0), v(nw, 0.0), grad(nw);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(slices.size());
  std::iota(order.begin(), order.end(), 0);

  const auto start = std::chrono::steady_clock::now();
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0, batch_no = 0; b0 < order.size(); b0 += cfg.batch_size, ++batch_no) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::vector<NoisyExample> batch;
      batch.reserve(b1 - b0);
      for (std::size_t i = b0; i < b1; ++i)
        batch.push_back(draw_noise(order[i], slices[order[i]].data.size(), cfg, rng));

      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = score_matching_loss(params, slices, batch, cfg, grad);
      if (!std::isfinite(loss))
        throw TrainingError("train_score_matching: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(batch_no));
      epoch_loss += loss * static_cast<double>(b1 - b0);

      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t k = 0; k < nw; ++k) {
        m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
        v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
        params.weights[k] -= cfg.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
      }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back({epoch, epoch_loss / static_cast<double>(slices.size()), wall});
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

}  // namespace ssmuse
