#ifndef U2REG_GRAD_ENGINE_HPP
#define U2REG_GRAD_ENGINE_HPP

// Mini-batch gradients for upper+unlabeled (U2) regression, its mirrored
// lower+unlabeled (LU) form, naive baselines, and Monte-Carlo references.
//
// U2 on a batch B with upper set U = {i : f(x_i) <= y'_i}:
//
//   G = sum_{i in U} L'(f_i, y'_i) J_i + rho * sum_{i in B} c J_i
//       - sum_{i in U} c J_i + lambda * dR/dtheta
//
// where J_i = df(x_i)/dtheta and c is the constant lower-side derivative of
// the loss. Only upper-side labels enter; lower-side rows contribute through
// their features alone.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "losses.hpp"
#include "matrix.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "synthdata.hpp"

namespace u2reg {

enum class Regularizer { none, l1, l2 };

/// Rows of a feature matrix and label vector that form one mini-batch.
struct Batch {
  const Matrix* xs = nullptr;
  std::span<const double> ys_prime;   // indexed by row of *xs
  std::vector<std::size_t> rows;      // batch members, in processing order

  std::size_t size() const noexcept { return rows.size(); }
  std::span<const double> x(std::size_t k) const { return xs->row(rows[k]); }
  double y(std::size_t k) const { return ys_prime[rows[k]]; }
};

inline Batch make_batch(const Dataset& d, std::vector<std::size_t> rows) {
  return Batch{&d.xs, d.ys_prime, std::move(rows)};
}

inline Batch full_batch(const Dataset& d) {
  std::vector<std::size_t> rows(d.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return make_batch(d, std::move(rows));
}

/// Training-mode switch for the Jacobians (dropout masks for MLPs).
struct GradientContext {
  bool train_mode = false;
  std::uint64_t dropout_seed = 0;
  std::uint64_t step = 0;
};

struct SidePartition {
  std::vector<std::size_t> upper;  // batch positions with f(x) <= y'
  std::vector<std::size_t> lower;
};

namespace detail {

inline void validate_batch(const Batch& b) {
  if (b.xs == nullptr || b.rows.empty()) throw std::invalid_argument("batch must hold at least one row");
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (!std::isfinite(b.y(k))) throw std::invalid_argument("batch contains a non-finite label");
    for (double v : b.x(k)) {
      if (!std::isfinite(v)) throw std::invalid_argument("batch contains a non-finite feature");
    }
  }
}

inline void check_nonneg(double rho, double lambda) {
  if (!(rho >= 0.0)) throw std::invalid_argument("rho must be non-negative");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
}

inline void add_regularizer(const Model& m, double lambda, Regularizer reg, std::span<double> grad) {
  if (reg == Regularizer::none || lambda == 0.0) return;
  const auto mask = regularized_mask(m);
  for (std::size_t j = 0; j < grad.size(); ++j) {
    const double t = m.theta[j];
    const double d = reg == Regularizer::l1 ? (t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0)) : 2.0 * t;
    grad[j] += lambda * mask[j] * d;
  }
}

inline const DropoutKey* key_for(const GradientContext& ctx, const Batch& b, std::size_t k,
                                 DropoutKey& storage) {
  if (!ctx.train_mode) return nullptr;
  storage = DropoutKey{ctx.dropout_seed, ctx.step, b.rows[k]};
  return &storage;
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += a * x[j];
}

}  // namespace detail

/// Split of the batch by the current model, ties on the upper side.
inline SidePartition partition(const Model& m, const Batch& b) {
  SidePartition p;
  for (std::size_t k = 0; k < b.size(); ++k) {
    (side_of(predict(m, b.x(k)), b.y(k)) == Side::upper ? p.upper : p.lower).push_back(k);
  }
  return p;
}

inline std::vector<double> u2_batch_gradient(const Model& m, const Batch& b, const LossSpec& spec,
                                             double rho, double lambda, Regularizer reg,
                                             const GradientContext& ctx = {}) {
  detail::check_nonneg(rho, lambda);
  detail::validate_batch(b);
  const double c = lower_grad_coeff(spec);
  std::vector<double> grad(m.theta.size(), 0.0), jac(m.theta.size());
  DropoutKey key;
  for (std::size_t k = 0; k < b.size(); ++k) {
    // One Jacobian (and one dropout mask) per sample feeds all three terms.
    const double f = forward_jacobian(m, b.x(k), detail::key_for(ctx, b, k, key), jac);
    double coeff = rho * c;
    if (side_of(f, b.y(k)) == Side::upper) coeff += dloss_df(spec, f, b.y(k), Side::upper) - c;
    detail::axpy(coeff, jac, grad);
  }
  detail::add_regularizer(m, lambda, reg, grad);
  return grad;
}

/// Mirror of u2_batch_gradient for positive corruption: labeled term over
/// the lower set {y' < f(x)}, constant-gradient term from the upper-side loss.
inline std::vector<double> lu_batch_gradient(const Model& m, const Batch& b, const LossSpec& spec,
                                             double rho, double lambda, Regularizer reg,
                                             const GradientContext& ctx = {}) {
  detail::check_nonneg(rho, lambda);
  detail::validate_batch(b);
  const double c = upper_grad_coeff(spec);
  std::vector<double> grad(m.theta.size(), 0.0), jac(m.theta.size());
  DropoutKey key;
  for (std::size_t k = 0; k < b.size(); ++k) {
    const double f = forward_jacobian(m, b.x(k), detail::key_for(ctx, b, k, key), jac);
    double coeff = rho * c;
    if (side_of(f, b.y(k)) == Side::lower) coeff += dloss_df(spec, f, b.y(k), Side::lower) - c;
    detail::axpy(coeff, jac, grad);
  }
  detail::add_regularizer(m, lambda, reg, grad);
  return grad;
}

class NaiveLoss {
 public:
  enum class Kind { mse, mae, huber };
  static NaiveLoss mse() { return NaiveLoss(Kind::mse, LossKind::squared()); }
  static NaiveLoss mae() { return NaiveLoss(Kind::mae, LossKind::absolute()); }
  static NaiveLoss huber(double delta) { return NaiveLoss(Kind::huber, LossKind::huber(delta)); }

  Kind kind() const noexcept { return kind_; }
  const LossKind& loss() const noexcept { return loss_; }

 private:
  NaiveLoss(Kind k, LossKind l) : kind_(k), loss_(l) {}
  Kind kind_;
  LossKind loss_;
};

/// Treats y' as clean: (1/n) sum L'(f_i, y'_i) J_i + lambda dR.
inline std::vector<double> naive_batch_gradient(const Model& m, const Batch& b, const NaiveLoss& loss,
                                                double lambda, Regularizer reg,
                                                const GradientContext& ctx = {}) {
  detail::check_nonneg(0.0, lambda);
  detail::validate_batch(b);
  const LossSpec spec{loss.loss(), loss.loss()};
  std::vector<double> grad(m.theta.size(), 0.0), jac(m.theta.size());
  DropoutKey key;
  const double inv_n = 1.0 / static_cast<double>(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) {
    const double f = forward_jacobian(m, b.x(k), detail::key_for(ctx, b, k, key), jac);
    detail::axpy(inv_n * dloss_df(spec, f, b.y(k), side_of(f, b.y(k))), jac, grad);
  }
  detail::add_regularizer(m, lambda, reg, grad);
  return grad;
}

/// Normalized empirical U2 gradient with a known pi_up = P(f(x) <= y):
///   (pi_up/n_up) sum_U L' J + (1/N) sum_B c J - (pi_up/n_up) sum_U c J.
/// Equals (pi_up/n_up) * u2_batch_gradient(rho = n_up/(pi_up N)).
inline std::vector<double> u2_normalized_gradient(const Model& m, const Batch& b, const LossSpec& spec,
                                                  double pi_up) {
  detail::validate_batch(b);
  if (!(pi_up > 0.0 && pi_up <= 1.0)) throw std::invalid_argument("pi_up must lie in (0,1]");
  const double c = lower_grad_coeff(spec);
  std::vector<double> up(m.theta.size(), 0.0), all(m.theta.size(), 0.0), jac(m.theta.size());
  std::size_t n_up = 0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    const double f = forward_jacobian(m, b.x(k), nullptr, jac);
    detail::axpy(c, jac, all);
    if (side_of(f, b.y(k)) == Side::upper) {
      ++n_up;
      detail::axpy(dloss_df(spec, f, b.y(k), Side::upper) - c, jac, up);
    }
  }
  const double n = static_cast<double>(b.size());
  const double w_up = n_up > 0 ? pi_up / static_cast<double>(n_up) : 0.0;
  std::vector<double> grad(m.theta.size());
  for (std::size_t j = 0; j < grad.size(); ++j) grad[j] = w_up * up[j] + all[j] / n;
  return grad;
}

/// Per-component Monte-Carlo mean with its standard error.
struct GradientEstimate {
  std::vector<double> mean;
  std::vector<double> std_error;
};

/// E_{p(x,y)}[L'(f(x), y) df/dtheta] on fresh CLEAN draws from the process,
/// with each draw's side decided by f(x) <= y.
inline GradientEstimate population_gradient_oracle(const Model& m, const SyntheticProcess& p,
                                                   std::size_t n_mc, const LossSpec& spec,
                                                   RngSeed seed) {
  if (n_mc == 0) throw std::invalid_argument("n_mc must be at least 1");
  if (p.dim != m.input_dim) throw std::invalid_argument("process and model dimensions differ");
  Rng rng = make_rng(seed.value, "population_gradient_oracle");
  std::normal_distribution<double> n01;
  const std::size_t P = m.theta.size();
  std::vector<double> sum(P, 0.0), sumsq(P, 0.0), jac(P), x(p.dim);
  const double sd = p.noise_std();
  for (std::size_t i = 0; i < n_mc; ++i) {
    for (auto& v : x) v = n01(rng);
    const double y = p.oracle(x) + sd * n01(rng);
    const double f = forward_jacobian(m, x, nullptr, jac);
    const double d = dloss_df(spec, f, y, side_of(f, y));
    for (std::size_t j = 0; j < P; ++j) {
      const double g = d * jac[j];
      sum[j] += g;
      sumsq[j] += g * g;
    }
  }
  GradientEstimate est{std::vector<double>(P), std::vector<double>(P)};
  const double n = static_cast<double>(n_mc);
  for (std::size_t j = 0; j < P; ++j) {
    est.mean[j] = sum[j] / n;
    const double var = n > 1 ? std::max(0.0, (sumsq[j] - n * est.mean[j] * est.mean[j]) / (n - 1)) : 0.0;
    est.std_error[j] = std::sqrt(var / n);
  }
  return est;
}

/// Lower bound on the bias of the naive gradient:
///   eta (1 - eta) (1 - xi) delta / (1 - eta xi).
inline double bias_lower_bound(double eta, double xi, double delta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0,1]");
  if (!(xi >= 0.0 && xi <= 1.0)) throw std::invalid_argument("xi must lie in [0,1]");
  if (!(delta >= 0.0)) throw std::invalid_argument("delta must be non-negative");
  if (eta == 1.0 && xi == 1.0) return 0.0;
  return eta * (1.0 - eta) * (1.0 - xi) * delta / (1.0 - eta * xi);
}

struct BiasDiagnostics {
  double eta = 0.0;
  double xi = 1.0;
  double delta = 0.0;
  double lower_bound = 0.0;
  bool degenerate = false;  // eta in {0, 1}
};

}  // namespace u2reg

#endif  // U2REG_GRAD_ENGINE_HPP
