#ifndef U2REG_SYNTHDATA_HPP
#define U2REG_SYNTHDATA_HPP

// Synthetic data with one-sided label corruption, standardization,
// cross-validation splits and sliding-window features for sensor series.
//
// Clean labels follow y = w.x + eps_s with eps_s ~ N(0, 1/beta) (beta is a
// precision). Corruption picks exactly round(N*K/100) rows and subtracts
// |z|, z ~ N(0, (scale / sqrt(beta))^2). In strict mode |z| is drawn
// conditioned on |z| > 2|eps_s| so that upper-side rows under f* are never
// corrupted.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"

namespace u2reg {

enum class CorruptionMode { paper, strict };

struct SyntheticProcess {
  std::size_t dim = 10;
  std::vector<double> w;  // oracle f*(x) = w.x
  double beta = 1.0;      // precision of eps_s
  double k_percent = 0.0;
  CorruptionMode mode = CorruptionMode::paper;
  double corruption_scale = 2.0;

  double noise_std() const { return 1.0 / std::sqrt(beta); }
  double oracle(std::span<const double> x) const { return dot(w, x); }
};

/// Draws the oracle weights w ~ N(0, I) from the process seed.
inline SyntheticProcess make_process(std::size_t dim, double beta, double k_percent,
                                     CorruptionMode mode, RngSeed seed,
                                     double corruption_scale = 2.0) {
  if (dim == 0) throw std::invalid_argument("process dimension must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be positive");
  if (!(k_percent >= 0.0 && k_percent <= 100.0)) throw std::invalid_argument("K must lie in [0,100]");
  if (!(corruption_scale > 0.0)) throw std::invalid_argument("corruption scale must be positive");
  SyntheticProcess p{dim, std::vector<double>(dim), beta, k_percent, mode, corruption_scale};
  Rng rng = make_rng(seed.value, "process.w");
  std::normal_distribution<double> n01;
  for (auto& v : p.w) v = n01(rng);
  return p;
}

struct Dataset {
  Matrix xs;
  std::vector<double> ys_prime;
  std::optional<std::vector<double>> ys_true;
  std::optional<std::vector<std::uint8_t>> corrupted;  // eps_a < 0
  std::vector<std::size_t> row_ids;                    // ids in the source dataset

  std::size_t size() const noexcept { return ys_prime.size(); }
  std::size_t dim() const noexcept { return xs.cols(); }

  Dataset subset(std::span<const std::size_t> ids) const {
    Dataset out;
    out.xs = xs.select_rows(ids);
    out.ys_prime.reserve(ids.size());
    out.row_ids.reserve(ids.size());
    for (auto i : ids) {
      out.ys_prime.push_back(ys_prime[i]);
      out.row_ids.push_back(row_ids.empty() ? i : row_ids[i]);
    }
    if (ys_true) {
      out.ys_true.emplace();
      for (auto i : ids) out.ys_true->push_back((*ys_true)[i]);
    }
    if (corrupted) {
      out.corrupted.emplace();
      for (auto i : ids) out.corrupted->push_back((*corrupted)[i]);
    }
    return out;
  }

  /// Labels for clean evaluation: y_true when known, else y'.
  const std::vector<double>& eval_labels() const { return ys_true ? *ys_true : ys_prime; }
};

inline void validate_dataset(const Dataset& d) {
  const std::size_t n = d.size();
  if (d.xs.rows() != n) throw std::invalid_argument("dataset: feature rows != label count");
  if (d.ys_true && d.ys_true->size() != n) throw std::invalid_argument("dataset: y_true length");
  if (d.corrupted && d.corrupted->size() != n) throw std::invalid_argument("dataset: mask length");
  for (double v : d.xs.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite feature value");
  }
  for (double v : d.ys_prime) {
    if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite label");
  }
}

inline Dataset generate_uncorrupted(const SyntheticProcess& p, std::size_t n, RngSeed seed) {
  if (n == 0) throw std::invalid_argument("generate: N must be at least 1");
  Rng rng = make_rng(seed.value, "generate");
  std::normal_distribution<double> n01;
  Dataset d;
  d.xs = Matrix(n, p.dim);
  d.ys_true.emplace(n);
  const double sd = p.noise_std();
  for (std::size_t i = 0; i < n; ++i) {
    auto x = d.xs.row(i);
    for (auto& v : x) v = n01(rng);
    (*d.ys_true)[i] = p.oracle(x) + sd * n01(rng);
  }
  d.ys_prime = *d.ys_true;
  d.corrupted.emplace(n, 0);
  d.row_ids.resize(n);
  std::iota(d.row_ids.begin(), d.row_ids.end(), std::size_t{0});
  return d;
}

/// Standard-normal draw conditioned on |z| > a (a >= 0), returned as |z|.
/// Robert's exponential-proposal rejection sampler for the tail.
inline double half_normal_tail(Rng& rng, double a) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (a < 0.5) {
    for (;;) {
      const double z = std::abs(n01(rng));
      if (z > a) return z;
    }
  }
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  std::exponential_distribution<double> expo(lambda);
  for (;;) {
    const double z = a + expo(rng);
    const double accept = std::exp(-0.5 * (z - lambda) * (z - lambda));
    if (u01(rng) <= accept && z > a) return z;
  }
}

namespace detail {

inline std::vector<std::size_t> choose_rows(std::size_t n, double k_percent, Rng& rng) {
  const auto count = static_cast<std::size_t>(std::llround(static_cast<double>(n) * k_percent / 100.0));
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline Dataset corrupt_impl(const Dataset& in, double k_percent, double z_std, CorruptionMode mode,
                            const SyntheticProcess* process, RngSeed seed) {
  if (!in.ys_true) throw std::invalid_argument("corrupt: dataset has no clean labels (y_true)");
  if (mode == CorruptionMode::strict && process == nullptr) {
    throw std::invalid_argument("corrupt: strict mode needs the oracle regressor");
  }
  Dataset out = in;
  const std::size_t n = in.size();
  out.ys_prime = *in.ys_true;
  out.corrupted.emplace(n, 0);
  Rng rng = make_rng(seed.value, "corrupt");
  const auto rows = choose_rows(n, k_percent, rng);
  std::normal_distribution<double> n01;
  for (auto i : rows) {
    double mag = 0.0;
    if (mode == CorruptionMode::strict) {
      const double eps = (*in.ys_true)[i] - process->oracle(in.xs.row(i));
      mag = z_std * half_normal_tail(rng, 2.0 * std::abs(eps) / z_std);
    } else {
      do {
        mag = std::abs(z_std * n01(rng));
      } while (mag == 0.0);
    }
    out.ys_prime[i] = (*in.ys_true)[i] - mag;
    (*out.corrupted)[i] = 1;
  }
  return out;
}

}  // namespace detail

/// Subtracts |z| from exactly round(N*K/100) uniformly chosen labels.
inline Dataset corrupt(const Dataset& d, const SyntheticProcess& p, RngSeed seed) {
  return detail::corrupt_impl(d, p.k_percent, p.corruption_scale * p.noise_std(), p.mode, &p, seed);
}

/// Paper-mode corruption without an oracle (external data with clean labels).
inline Dataset corrupt_external(const Dataset& d, double k_percent, double z_std, RngSeed seed) {
  if (!(k_percent >= 0.0 && k_percent <= 100.0)) throw std::invalid_argument("K must lie in [0,100]");
  if (!(z_std > 0.0)) throw std::invalid_argument("corruption std must be positive");
  return detail::corrupt_impl(d, k_percent, z_std, CorruptionMode::paper, nullptr, seed);
}

/// Per-feature affine map fitted on a training split.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // std with a 1e-12 floor

  void apply(Matrix& xs) const {
    if (xs.cols() != mean.size()) throw std::invalid_argument("standardizer: dimension mismatch");
    for (std::size_t i = 0; i < xs.rows(); ++i) {
      auto r = xs.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - mean[j]) / scale[j];
    }
  }
};

inline Standardizer fit_standardizer(const Matrix& xs) {
  if (xs.rows() == 0) throw std::invalid_argument("standardize: empty training split");
  const std::size_t d = xs.cols();
  const double n = static_cast<double>(xs.rows());
  Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += xs(i, j);
  }
  for (auto& m : s.mean) m /= n;
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xs(i, j) - s.mean[j];
      s.scale[j] += c * c;
    }
  }
  for (auto& v : s.scale) v = std::max(std::sqrt(v / n), 1e-12);
  return s;
}

struct StandardizedSplits {
  Dataset train;
  std::vector<Dataset> others;
  Standardizer stats;
};

/// Features only; labels are left untouched. Statistics come from train.
inline StandardizedSplits standardize(const Dataset& train, const std::vector<Dataset>& others) {
  StandardizedSplits out{train, others, fit_standardizer(train.xs)};
  out.stats.apply(out.train.xs);
  for (auto& o : out.others) out.stats.apply(o.xs);
  return out;
}

/// Linear-interpolated quantile of sorted data (same rule as numpy's default).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline constexpr std::array<double, 5> kWindowQuantiles = {0.05, 0.25, 0.5, 0.75, 0.95};
inline constexpr std::size_t kFeaturesPerChannel = 2 + kWindowQuantiles.size();

/// Sliding-window statistics: for each window and channel, mean, std and the
/// 0.05/0.25/0.5/0.75/0.95 quantiles (7 columns per channel, channel-major).
inline Matrix window_features(const Matrix& series, std::size_t window_len, std::size_t stride) {
  if (window_len == 0) throw std::invalid_argument("window length must be positive");
  if (stride == 0) throw std::invalid_argument("stride must be at least 1");
  if (window_len > series.rows()) {
    throw std::invalid_argument("window length " + std::to_string(window_len) +
                                " exceeds series length " + std::to_string(series.rows()));
  }
  const std::size_t rows = (series.rows() - window_len) / stride + 1;
  const std::size_t channels = series.cols();
  Matrix out(rows, channels * kFeaturesPerChannel);
  std::vector<double> buf(window_len);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t start = r * stride;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < window_len; ++t) buf[t] = series(start + t, c);
      const double mean = std::accumulate(buf.begin(), buf.end(), 0.0) / static_cast<double>(window_len);
      double ss = 0.0;
      for (double v : buf) ss += (v - mean) * (v - mean);
      std::sort(buf.begin(), buf.end());
      double* o = &out(r, c * kFeaturesPerChannel);
      o[0] = mean;
      o[1] = std::sqrt(ss / static_cast<double>(window_len));
      for (std::size_t q = 0; q < kWindowQuantiles.size(); ++q) {
        o[2 + q] = quantile_sorted(buf, kWindowQuantiles[q]);
      }
    }
  }
  return out;
}

struct Fold {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Seeded K-fold split. Each fold's test part drops corrupted rows; the
/// remaining folds form train+val, from which round(val_fraction * n) rows
/// are drawn at random for validation.
inline std::vector<Fold> split_cv(const Dataset& d, std::size_t folds, double val_fraction, RngSeed seed) {
  if (folds < 2) throw std::invalid_argument("split_cv: need at least 2 folds");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("split_cv: val_fraction must lie in (0,1)");
  }
  const std::size_t n = d.size();
  if (folds > n) {
    throw std::invalid_argument("split_cv: " + std::to_string(folds) + " folds for " +
                                std::to_string(n) + " rows");
  }
  Rng rng = make_rng(seed.value, "split_cv");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<Fold> out;
  out.reserve(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n / folds, hi = (f + 1) * n / folds;
    std::vector<std::size_t> test, rest;
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t row = perm[p];
      if (p >= lo && p < hi) {
        if (!d.corrupted || (*d.corrupted)[row] == 0) test.push_back(row);
      } else {
        rest.push_back(row);
      }
    }
    if (rest.size() < 2) throw std::invalid_argument("split_cv: too few rows for a train/val split");
    Rng vrng = make_rng(seed.value, "split_cv.val", f);
    std::shuffle(rest.begin(), rest.end(), vrng);
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(rest.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, rest.size() - 1);
    std::vector<std::size_t> val(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    out.push_back(Fold{d.subset(train), d.subset(val), d.subset(test)});
  }
  return out;
}

}  // namespace u2reg

#endif  // U2REG_SYNTHDATA_HPP
