#ifndef U2REG_OPTIM_HPP
#define U2REG_OPTIM_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grad_engine.hpp"
#include "losses.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "synthdata.hpp"

namespace u2reg {

struct AdamParams {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  AdamParams params;

  AdamState() = default;
  explicit AdamState(std::size_t n, AdamParams p = {}) : m(n, 0.0), v(n, 0.0), params(p) {}
};

/// One bias-corrected Adam update of theta in place.
inline void adam_step(AdamState& s, std::span<double> theta, std::span<const double> grad) {
  if (theta.size() != grad.size() || s.m.size() != theta.size() || s.v.size() != theta.size()) {
    throw std::invalid_argument("adam_step: dimension mismatch");
  }
  const auto& p = s.params;
  ++s.t;
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    s.m[i] = p.beta1 * s.m[i] + (1.0 - p.beta1) * grad[i];
    s.v[i] = p.beta2 * s.v[i] + (1.0 - p.beta2) * grad[i] * grad[i];
    theta[i] -= p.alpha * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + p.epsilon);
  }
}

struct Method {
  enum class Kind { u2, lu, mse, mae, huber };
  Kind kind = Kind::u2;
  double huber_delta = 1.0;

  bool is_naive() const noexcept { return kind != Kind::u2 && kind != Kind::lu; }
  NaiveLoss naive_loss() const {
    switch (kind) {
      case Kind::mse:
        return NaiveLoss::mse();
      case Kind::mae:
        return NaiveLoss::mae();
      case Kind::huber:
        return NaiveLoss::huber(huber_delta);
      default:
        throw std::logic_error("naive_loss on a non-naive method");
    }
  }
  std::string name() const {
    switch (kind) {
      case Kind::u2: return "u2";
      case Kind::lu: return "lu";
      case Kind::mse: return "mse";
      case Kind::mae: return "mae";
      case Kind::huber: return "huber";
    }
    return "?";
  }
  static Method parse(const std::string& s) {
    if (s == "u2") return {Kind::u2};
    if (s == "lu") return {Kind::lu};
    if (s == "mse") return {Kind::mse};
    if (s == "mae") return {Kind::mae};
    if (s == "huber") return {Kind::huber};
    throw std::invalid_argument("unknown method '" + s + "' (expected u2, lu, mse, mae, huber)");
  }
};

struct TrainConfig {
  Method method;
  LossSpec spec;
  double rho = 1.0;
  double lambda = 0.0;
  Regularizer reg = Regularizer::l1;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  RngSeed seed;
  AdamParams adam;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double val_mae = 0.0;
  double grad_norm = 0.0;  // mean L2 norm of the epoch's mini-batch gradients
  double seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
  Model model;
  TrainHistory history;
  double best_val_mae = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;  // 0: initial parameters
};

/// Called after every optimizer step with the updated model.
using StepObserver = std::function<void(std::size_t epoch, std::uint64_t step, const Model&)>;

inline double mae_against(const Model& m, const Dataset& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) s += std::abs(predict(m, d.xs.row(i)) - d.ys_prime[i]);
  return s / static_cast<double>(d.size());
}

inline std::vector<double> method_gradient(const TrainConfig& cfg, const Model& m, const Batch& b,
                                           const GradientContext& ctx) {
  switch (cfg.method.kind) {
    case Method::Kind::u2:
      return u2_batch_gradient(m, b, cfg.spec, cfg.rho, cfg.lambda, cfg.reg, ctx);
    case Method::Kind::lu:
      return lu_batch_gradient(m, b, cfg.spec, cfg.rho, cfg.lambda, cfg.reg, ctx);
    default:
      return naive_batch_gradient(m, b, cfg.method.naive_loss(), cfg.lambda, cfg.reg, ctx);
  }
}

/// Seeded shuffled mini-batch training with Adam, starting from `initial`. Stops after max_epochs or
/// once validation MAE against y' has not improved for `patience` epochs,
/// and returns the parameters with the best validation MAE.
inline TrainResult train_from(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                              Model initial, const StepObserver& observer = {}) {
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (val_set.size() == 0) throw std::invalid_argument("train: empty validation set");
  if (val_set.dim() != train_set.dim()) throw std::invalid_argument("train: train/val dimension mismatch");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  detail::check_nonneg(cfg.rho, cfg.lambda);
  if (cfg.method.kind == Method::Kind::u2) lower_grad_coeff(cfg.spec);
  if (cfg.method.kind == Method::Kind::lu) upper_grad_coeff(cfg.spec);

  if (initial.input_dim != train_set.dim()) throw std::invalid_argument("train: model/data dimension mismatch");

  TrainResult result;
  result.model = std::move(initial);
  Model& best = result.model;
  Model current = best;
  if (cfg.max_epochs == 0) return result;

  const std::size_t n = train_set.size();
  const std::size_t bs = std::min(cfg.batch_size, n);
  AdamState adam(current.theta.size(), cfg.adam);
  Rng shuffle_rng = make_rng(cfg.seed.value, "train.shuffle");
  const std::uint64_t dropout_seed = derive_seed(cfg.seed.value, "train.dropout");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto start = std::chrono::steady_clock::now();
  std::size_t since_best = 0;
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double norm_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n; lo += bs) {
      const std::size_t hi = std::min(lo + bs, n);
      Batch batch = make_batch(train_set, {order.begin() + static_cast<std::ptrdiff_t>(lo),
                                           order.begin() + static_cast<std::ptrdiff_t>(hi)});
      const GradientContext ctx{true, dropout_seed, step};
      const auto grad = method_gradient(cfg, current, batch, ctx);
      double sq = 0.0;
      for (double g : grad) sq += g * g;
      if (!std::isfinite(sq)) {
        std::ostringstream msg;
        msg << "train: non-finite gradient at epoch " << epoch << ", step " << step << " (method "
            << cfg.method.name() << ", rho " << cfg.rho << ", lambda " << cfg.lambda << ")";
        throw std::runtime_error(msg.str());
      }
      adam_step(adam, current.theta, grad);
      ++step;
      norm_sum += std::sqrt(sq);
      ++batches;
      if (observer) observer(epoch, step, current);
    }
    const double val = mae_against(current, val_set);
    if (!std::isfinite(val)) {
      throw std::runtime_error("train: validation MAE became non-finite at epoch " + std::to_string(epoch));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back({epoch, val, norm_sum / static_cast<double>(batches), secs});
    if (val < result.best_val_mae) {
      result.best_val_mae = val;
      result.best_epoch = epoch;
      best.theta = current.theta;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                         const Architecture& arch, const StepObserver& observer = {}) {
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  return train_from(cfg, train_set, val_set,
                    init_model(arch, train_set.dim(), RngSeed{derive_seed(cfg.seed.value, "train.init")}),
                    observer);
}

}  // namespace u2reg

#endif  // U2REG_OPTIM_HPP
