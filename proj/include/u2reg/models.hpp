#ifndef U2REG_MODELS_HPP
#define U2REG_MODELS_HPP

// Prediction functions f(x; theta) and their parameter Jacobians.
//
// Parameter layouts (flat theta):
//   linear      [w_0 .. w_{D-1}, b]
//   rbf_linear  [v_0 .. v_{M-1}]            f(x) = v . phi(x)
//   mlp         per layer: W (out x in, row-major) then b (out)

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"

namespace u2reg {

struct LinearArch {
  friend bool operator==(const LinearArch&, const LinearArch&) = default;
};

struct RbfArch {
  double sigma = 1.0;
  Matrix bases;  // one base point per row
  friend bool operator==(const RbfArch&, const RbfArch&) = default;
};

struct MlpArch {
  /// Hidden layer widths; input width is the model's input_dim, output width 1.
  std::vector<std::size_t> hidden = {100, 100, 100, 100};
  double dropout = 0.5;
  friend bool operator==(const MlpArch&, const MlpArch&) = default;
};

using Architecture = std::variant<LinearArch, RbfArch, MlpArch>;

struct Model {
  Architecture arch;
  std::size_t input_dim = 0;
  std::vector<double> theta;
};

/// Identifies a dropout mask draw. Same key -> same mask.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t sample = 0;
};

inline std::vector<std::size_t> mlp_widths(const MlpArch& a, std::size_t input_dim) {
  std::vector<std::size_t> w;
  w.reserve(a.hidden.size() + 2);
  w.push_back(input_dim);
  w.insert(w.end(), a.hidden.begin(), a.hidden.end());
  w.push_back(1);
  return w;
}

inline std::size_t parameter_count(const Architecture& arch, std::size_t input_dim) {
  struct Visitor {
    std::size_t d;
    std::size_t operator()(const LinearArch&) const { return d + 1; }
    std::size_t operator()(const RbfArch& r) const { return r.bases.rows(); }
    std::size_t operator()(const MlpArch& m) const {
      const auto w = mlp_widths(m, d);
      std::size_t n = 0;
      for (std::size_t l = 0; l + 1 < w.size(); ++l) n += w[l + 1] * w[l] + w[l + 1];
      return n;
    }
  };
  return std::visit(Visitor{input_dim}, arch);
}

/// 1 for parameters subject to the regularizer (weights), 0 for bias terms.
inline std::vector<double> regularized_mask(const Model& m) {
  std::vector<double> mask(m.theta.size(), 1.0);
  if (std::holds_alternative<LinearArch>(m.arch)) {
    mask.back() = 0.0;
  } else if (const auto* mlp = std::get_if<MlpArch>(&m.arch)) {
    const auto w = mlp_widths(*mlp, m.input_dim);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      off += w[l + 1] * w[l];
      for (std::size_t j = 0; j < w[l + 1]; ++j) mask[off + j] = 0.0;
      off += w[l + 1];
    }
  }
  return mask;
}

inline void validate_architecture(const Architecture& arch, std::size_t input_dim) {
  if (input_dim == 0) throw std::invalid_argument("model input dimension must be positive");
  if (const auto* r = std::get_if<RbfArch>(&arch)) {
    if (r->bases.rows() == 0) throw std::invalid_argument("rbf model needs at least one base point");
    if (r->bases.cols() != input_dim) {
      throw std::invalid_argument("rbf base points have dimension " +
                                  std::to_string(r->bases.cols()) + ", expected " +
                                  std::to_string(input_dim));
    }
    if (!(r->sigma > 0.0)) throw std::invalid_argument("rbf sigma must be positive");
  } else if (const auto* m = std::get_if<MlpArch>(&arch)) {
    for (auto w : m->hidden) {
      if (w == 0) throw std::invalid_argument("mlp hidden widths must be positive");
    }
    if (!(m->dropout >= 0.0 && m->dropout < 1.0)) {
      throw std::invalid_argument("mlp dropout rate must lie in [0,1)");
    }
  }
}

/// Linear and RBF weights start at zero; MLP weights are Glorot-uniform,
/// biases zero. Deterministic in the seed.
inline Model init_model(Architecture arch, std::size_t input_dim, RngSeed seed) {
  validate_architecture(arch, input_dim);
  Model m{std::move(arch), input_dim, {}};
  m.theta.assign(parameter_count(m.arch, input_dim), 0.0);
  if (const auto* mlp = std::get_if<MlpArch>(&m.arch)) {
    Rng rng = make_rng(seed.value, "init_model");
    const auto w = mlp_widths(*mlp, input_dim);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(w[l] + w[l + 1]));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (std::size_t k = 0; k < w[l + 1] * w[l]; ++k) m.theta[off + k] = u(rng);
      off += w[l + 1] * w[l] + w[l + 1];
    }
  }
  return m;
}

/// phi_j(x) = exp(-|x - base_j|^2 / (2 sigma^2)).
inline void rbf_features_into(const Matrix& bases, double sigma, std::span<const double> x,
                              std::span<double> out) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t j = 0; j < bases.rows(); ++j) {
    const auto b = bases.row(j);
    double d2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = x[k] - b[k];
      d2 += d * d;
    }
    out[j] = std::exp(-d2 * inv);
  }
}

inline std::vector<double> rbf_features(const Matrix& bases, double sigma, std::span<const double> x) {
  if (!(sigma > 0.0)) throw std::invalid_argument("rbf sigma must be positive");
  if (bases.cols() != x.size()) throw std::invalid_argument("rbf_features: dimension mismatch");
  std::vector<double> out(bases.rows());
  rbf_features_into(bases, sigma, x, out);
  return out;
}

namespace detail {

inline void check_dim(const Model& m, std::span<const double> x) {
  if (x.size() != m.input_dim) {
    throw std::invalid_argument("input has " + std::to_string(x.size()) +
                                " features, model expects " + std::to_string(m.input_dim));
  }
}

// Forward (and optionally backward) pass of the MLP. With `jac` non-empty the
// gradient of the scalar output w.r.t. theta is written there.
inline double mlp_pass(const Model& m, const MlpArch& arch, std::span<const double> x,
                       const DropoutKey* dropout, std::span<double> jac) {
  const auto w = mlp_widths(arch, m.input_dim);
  const std::size_t layers = w.size() - 1;
  const double keep = 1.0 - arch.dropout;
  const double scale = keep > 0.0 ? 1.0 / keep : 0.0;

  // acts[l] is the input to layer l; pre[l] the pre-activation of hidden layer l.
  std::vector<std::vector<double>> acts(layers);
  std::vector<std::vector<double>> pre(layers);
  std::vector<std::vector<double>> gate(layers);  // d act / d pre for hidden layers
  acts[0].assign(x.begin(), x.end());
  std::vector<std::size_t> offsets(layers);
  std::size_t off = 0;
  double out = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = off;
    const std::size_t in = w[l], outw = w[l + 1];
    const double* W = m.theta.data() + off;
    const double* b = W + outw * in;
    std::vector<double> z(outw);
    for (std::size_t i = 0; i < outw; ++i) {
      double s = b[i];
      const double* wi = W + i * in;
      for (std::size_t k = 0; k < in; ++k) s += wi[k] * acts[l][k];
      z[i] = s;
    }
    off += outw * in + outw;
    if (l + 1 == layers) {
      out = z[0];
      break;
    }
    std::vector<double> a(outw), g(outw);
    for (std::size_t i = 0; i < outw; ++i) {
      double gi = z[i] > 0.0 ? 1.0 : 0.0;
      if (dropout != nullptr && arch.dropout > 0.0) {
        const bool kept = hash_uniform(dropout->seed, dropout->step, dropout->sample,
                                       (static_cast<std::uint64_t>(l) << 32) | i) >= arch.dropout;
        gi *= kept ? scale : 0.0;
      }
      g[i] = gi;
      a[i] = z[i] > 0.0 ? z[i] * gi : 0.0;
    }
    pre[l] = std::move(z);
    gate[l] = std::move(g);
    acts[l + 1] = std::move(a);
  }
  if (jac.empty()) return out;

  std::vector<double> delta{1.0};  // d out / d pre-activation of current layer
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = w[l], outw = w[l + 1];
    double* gW = jac.data() + offsets[l];
    double* gb = gW + outw * in;
    for (std::size_t i = 0; i < outw; ++i) {
      for (std::size_t k = 0; k < in; ++k) gW[i * in + k] = delta[i] * acts[l][k];
      gb[i] = delta[i];
    }
    if (l == 0) break;
    const double* W = m.theta.data() + offsets[l];
    std::vector<double> next(in, 0.0);
    for (std::size_t i = 0; i < outw; ++i) {
      const double* wi = W + i * in;
      for (std::size_t k = 0; k < in; ++k) next[k] += wi[k] * delta[i];
    }
    for (std::size_t k = 0; k < in; ++k) next[k] *= gate[l - 1][k];
    delta = std::move(next);
  }
  return out;
}

}  // namespace detail

/// f(x) and df/dtheta in one pass. `jac` must have size |theta|. Dropout is
/// applied only when `dropout` is non-null (training mode, MLP only).
inline double forward_jacobian(const Model& m, std::span<const double> x, const DropoutKey* dropout,
                               std::span<double> jac) {
  if (const auto* mlp = std::get_if<MlpArch>(&m.arch)) {
    return detail::mlp_pass(m, *mlp, x, dropout, jac);
  }
  if (const auto* rbf = std::get_if<RbfArch>(&m.arch)) {
    rbf_features_into(rbf->bases, rbf->sigma, x, jac);
    return dot(jac, m.theta);
  }
  std::copy(x.begin(), x.end(), jac.begin());
  jac[x.size()] = 1.0;
  return dot(jac, m.theta);
}

inline double predict(const Model& m, std::span<const double> x) {
  detail::check_dim(m, x);
  if (const auto* mlp = std::get_if<MlpArch>(&m.arch)) {
    return detail::mlp_pass(m, *mlp, x, nullptr, {});
  }
  if (const auto* rbf = std::get_if<RbfArch>(&m.arch)) {
    const double inv = 1.0 / (2.0 * rbf->sigma * rbf->sigma);
    double s = 0.0;
    for (std::size_t j = 0; j < rbf->bases.rows(); ++j) {
      const auto b = rbf->bases.row(j);
      double d2 = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) d2 += (x[k] - b[k]) * (x[k] - b[k]);
      s += m.theta[j] * std::exp(-d2 * inv);
    }
    return s;
  }
  return dot(x, std::span<const double>(m.theta).first(x.size())) + m.theta.back();
}

inline std::vector<double> predict_all(const Model& m, const Matrix& xs) {
  std::vector<double> out(xs.rows());
  for (std::size_t i = 0; i < xs.rows(); ++i) out[i] = predict(m, xs.row(i));
  return out;
}

/// df/dtheta at x. In train mode the MLP dropout mask for `key` is applied.
inline std::vector<double> param_jacobian(const Model& m, std::span<const double> x,
                                          bool train_mode, DropoutKey key = {}) {
  detail::check_dim(m, x);
  std::vector<double> jac(m.theta.size());
  forward_jacobian(m, x, train_mode ? &key : nullptr, jac);
  return jac;
}

}  // namespace u2reg

#endif  // U2REG_MODELS_HPP
