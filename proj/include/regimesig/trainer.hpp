#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "regimesig/error.hpp"
#include "regimesig/random.hpp"

namespace regimesig::nn {

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 500;
  std::size_t batch_size = 32;
  int early_stop_patience = 15;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 0.0;

  void validate() const {
    require(learning_rate >= 0.0, Errc::InvalidArgument, "learning_rate must be >= 0");
    require(max_epochs >= 0, Errc::InvalidArgument, "max_epochs must be >= 0");
    require(batch_size >= 1, Errc::InvalidArgument, "batch_size must be >= 1");
    require(early_stop_patience >= 1, Errc::InvalidArgument, "early_stop_patience must be >= 1");
  }
};

struct LossCurve {
  std::vector<double> train;
  std::vector<double> val;
  /// Index of the minimum validation loss; -1 when no epoch ran.
  int best_epoch = -1;
};

/// A differentiable objective over a flat parameter vector.
///
/// batch_loss_grad returns the mean loss over `rows` of the training set and
/// writes the gradient of that mean into `grad` (already zeroed, same size as
/// params). `rng` drives any train-mode stochasticity such as dropout.
template <class O>
concept Objective = requires(const O& o, std::span<const double> p,
                             std::span<const std::size_t> rows, std::span<double> g, Rng& rng) {
  { o.train_size() } -> std::convertible_to<std::size_t>;
  { o.batch_loss_grad(p, rows, g, rng) } -> std::convertible_to<double>;
  { o.validation_loss(p) } -> std::convertible_to<double>;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

inline void clip_gradient(std::span<double> grad, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
}

/// Mini-batch Adam with early stopping on validation loss.
///
/// Batch order is reshuffled once per epoch from cfg.seed. On return `params`
/// holds the snapshot from the best validation epoch.
template <Objective O>
LossCurve train_params(const O& obj, std::vector<double>& params, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = obj.train_size();
  require(n > 0, Errc::EmptySplit, "empty training set");

  Rng rng(cfg.seed);
  Adam adam(params.size(), cfg);
  LossCurve curve;
  std::vector<double> best_params = params;
  double best_val = 0.0;
  int since_best = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(params.size());

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double batch_loss = obj.batch_loss_grad(
          params, std::span<const std::size_t>(order).subspan(start, end - start), grad, rng);
      require(std::isfinite(batch_loss), Errc::DivergedLoss,
              "non-finite training loss at epoch " + std::to_string(epoch));
      loss_sum += batch_loss * static_cast<double>(end - start);
      clip_gradient(grad, cfg.clip_norm);
      adam.step(params, grad);
    }
    const double val = obj.validation_loss(params);
    require(std::isfinite(val), Errc::DivergedLoss,
            "non-finite validation loss at epoch " + std::to_string(epoch));
    curve.train.push_back(loss_sum / static_cast<double>(n));
    curve.val.push_back(val);
    if (curve.best_epoch < 0 || val < best_val) {
      best_val = val;
      curve.best_epoch = epoch;
      best_params = params;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  if (curve.best_epoch >= 0) params = std::move(best_params);
  return curve;
}

/// Worst relative disagreement between an analytic gradient and central
/// differences of `loss` at `params`. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-6).
inline double max_relative_gradient_error(std::vector<double> params,
                                          const std::function<double(std::span<const double>)>& loss,
                                          std::span<const double> analytic, double step) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + step;
    const double up = loss(params);
    params[i] = orig - step;
    const double down = loss(params);
    params[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace regimesig::nn
