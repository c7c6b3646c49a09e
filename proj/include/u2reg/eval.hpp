#ifndef U2REG_EVAL_HPP
#define U2REG_EVAL_HPP

// Metrics, grid search over (rho, lambda, sigma), the cross-validated
// benchmark over corrupted synthetic or CSV data, and Monte-Carlo estimates of
// the naive-gradient bias quantities.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "grad_engine.hpp"
#include "io.hpp"
#include "models.hpp"
#include "optim.hpp"
#include "synthdata.hpp"

namespace u2reg {

inline void check_paired(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw std::invalid_argument("metrics need at least one value");
}

inline double mae(std::span<const double> y_true, std::span<const double> y_pred) {
  check_paired(y_true, y_pred);
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_true[i] - y_pred[i]);
  return s / static_cast<double>(y_true.size());
}

/// mean(y_pred - y_true): negative when predictions sit below the truth.
inline double mean_signed_error(std::span<const double> y_true, std::span<const double> y_pred) {
  check_paired(y_true, y_pred);
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += y_pred[i] - y_true[i];
  return s / static_cast<double>(y_true.size());
}

/// Sample mean and standard error (sample std with n-1, divided by sqrt n).
inline std::pair<double, double> mean_and_se(std::span<const double> v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

// ------------------------------------------------------------ grid search

struct GridSpec {
  std::vector<double> rho_grid{1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> lambda_grid{1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> sigma_grid{1e-3, 1e-2, 1e-1, 1.0};

  void validate() const {
    auto check = [](const std::vector<double>& g, const char* name) {
      if (g.empty()) throw std::invalid_argument(std::string(name) + " grid is empty");
      for (double v : g) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " grid entries must be positive");
      }
    };
    check(rho_grid, "rho");
    check(lambda_grid, "lambda");
    check(sigma_grid, "sigma");
  }
};

struct Hyperparams {
  double rho = 1.0;
  double lambda = 0.0;
  std::optional<double> sigma;  // rbf only
};

enum class ModelKind { linear, rbf, mlp };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::linear: return "linear";
    case ModelKind::rbf: return "rbf";
    case ModelKind::mlp: return "mlp";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "linear") return ModelKind::linear;
  if (s == "rbf") return ModelKind::rbf;
  if (s == "mlp") return ModelKind::mlp;
  throw std::invalid_argument("unknown model '" + s + "' (expected linear, rbf, mlp)");
}

struct ModelSpec {
  ModelKind kind = ModelKind::linear;
  MlpArch mlp;
  std::size_t rbf_max_bases = 0;  // 0: every training point is a base
};

/// RBF bases are the (standardized) training inputs, or an evenly strided
/// subset of them when rbf_max_bases caps the count.
inline Architecture make_architecture(const ModelSpec& spec, const Dataset& train, double sigma) {
  switch (spec.kind) {
    case ModelKind::linear:
      return LinearArch{};
    case ModelKind::mlp:
      return spec.mlp;
    case ModelKind::rbf: {
      RbfArch r;
      r.sigma = sigma;
      const std::size_t n = train.size();
      const std::size_t m = spec.rbf_max_bases == 0 ? n : std::min(n, spec.rbf_max_bases);
      std::vector<std::size_t> ids(m);
      for (std::size_t j = 0; j < m; ++j) ids[j] = j * n / m;
      r.bases = train.xs.select_rows(ids);
      return r;
    }
  }
  throw std::logic_error("make_architecture: bad model kind");
}

struct CellResult {
  Hyperparams hp;
  bool ok = false;
  double val_mae = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::string error;
};

struct GridResult {
  Hyperparams best;
  Model model;  // trained model of the winning cell
  std::vector<CellResult> cells;
};

/// Cells in declaration order: lambda outermost, then rho (U2/LU only), then
/// sigma (rbf only).
inline std::vector<Hyperparams> grid_cells(const GridSpec& grid, const Method& method, ModelKind kind) {
  grid.validate();
  const std::vector<double> rhos = method.is_naive() ? std::vector<double>{1.0} : grid.rho_grid;
  std::vector<std::optional<double>> sigmas;
  if (kind == ModelKind::rbf) {
    for (double s : grid.sigma_grid) sigmas.emplace_back(s);
  } else {
    sigmas.emplace_back(std::nullopt);
  }
  std::vector<Hyperparams> cells;
  for (double l : grid.lambda_grid) {
    for (double r : rhos) {
      for (const auto& s : sigmas) cells.push_back({r, l, s});
    }
  }
  return cells;
}

/// Trains one model per cell and keeps the one with the lowest validation MAE
/// against y'. Exact ties go to smaller lambda, then rho, then sigma, then
/// declaration order. A failing cell is skipped; if every cell fails the
/// first failure is rethrown.
inline GridResult grid_search(const Dataset& train_set, const Dataset& val_set, const ModelSpec& model,
                              const TrainConfig& base, const GridSpec& grid) {
  const auto cells = grid_cells(grid, base.method, model.kind);
  GridResult out;
  std::optional<std::size_t> best;
  std::exception_ptr first_error;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellResult cell;
    cell.hp = cells[c];
    try {
      TrainConfig cfg = base;
      cfg.rho = cell.hp.rho;
      cfg.lambda = cell.hp.lambda;
      const auto arch = make_architecture(model, train_set, cell.hp.sigma.value_or(1.0));
      auto res = train(cfg, train_set, val_set, arch);
      cell.ok = true;
      cell.val_mae = res.best_val_mae;
      cell.best_epoch = res.best_epoch;
      auto key = [](const CellResult& r) {
        return std::make_tuple(r.val_mae, r.hp.lambda, r.hp.rho, r.hp.sigma.value_or(0.0));
      };
      if (!best || key(cell) < key(out.cells[*best])) {
        best = c;
        out.model = std::move(res.model);
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
      if (!first_error) first_error = std::current_exception();
    }
    out.cells.push_back(std::move(cell));
  }
  if (!best) std::rethrow_exception(first_error);
  out.best = out.cells[*best].hp;
  return out;
}

// --------------------------------------------------------------- benchmark

enum class TaskKind { low_noise, high_noise, csv };

struct TaskSpec {
  TaskKind kind = TaskKind::low_noise;
  std::string csv_path;
  std::optional<double> beta;  // overrides the task's precision
  CorruptionMode mode = CorruptionMode::paper;
  double corruption_scale = 2.0;

  double precision() const {
    if (beta) return *beta;
    return kind == TaskKind::high_noise ? 0.1 : 1.0;
  }
  std::string name() const {
    switch (kind) {
      case TaskKind::low_noise: return "low_noise";
      case TaskKind::high_noise: return "high_noise";
      case TaskKind::csv: return "csv";
    }
    return "?";
  }
};

/// Accepts low_noise/low-noise, high_noise/high-noise and csv:<path>.
inline TaskSpec parse_task(const std::string& s) {
  TaskSpec t;
  if (s == "low_noise" || s == "low-noise") {
    t.kind = TaskKind::low_noise;
  } else if (s == "high_noise" || s == "high-noise") {
    t.kind = TaskKind::high_noise;
  } else if (s.rfind("csv:", 0) == 0 && s.size() > 4) {
    t.kind = TaskKind::csv;
    t.csv_path = s.substr(4);
  } else {
    throw std::invalid_argument("unknown task '" + s + "' (expected low-noise, high-noise, csv:<path>)");
  }
  return t;
}

struct BenchmarkConfig {
  TaskSpec task;
  std::vector<Method> methods;
  std::vector<double> k_list{50.0};
  std::size_t folds = 5;
  std::vector<std::uint64_t> seeds{0};
  std::size_t n = 1000;
  std::size_t d = 10;
  double val_fraction = 0.2;
  GridSpec grid;
  ModelSpec model;
  LossSpec spec{LossKind::absolute(), LossKind::absolute()};
  Regularizer reg = Regularizer::l1;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  AdamParams adam;
  std::size_t jobs = 1;
  bool keep_points = true;

  void validate() const {
    grid.validate();
    if (k_list.empty()) throw std::invalid_argument("benchmark: K list is empty");
    for (double k : k_list) {
      if (!(k >= 0.0 && k <= 100.0)) throw std::invalid_argument("benchmark: K must lie in [0,100]");
    }
    if (folds < 2) throw std::invalid_argument("benchmark: need at least 2 folds");
    if (seeds.empty()) throw std::invalid_argument("benchmark: seed list is empty");
    if (task.kind != TaskKind::csv && (n == 0 || d == 0)) throw std::invalid_argument("benchmark: N and D must be positive");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("benchmark: val_fraction must lie in (0,1)");
    if (batch_size == 0) throw std::invalid_argument("benchmark: batch size must be positive");
    if (!(task.precision() > 0.0)) throw std::invalid_argument("benchmark: beta must be positive");
    if (task.kind == TaskKind::csv && task.mode == CorruptionMode::strict) {
      throw std::invalid_argument("benchmark: strict corruption needs the oracle and is unavailable for csv tasks");
    }
    for (const auto& m : methods) {
      if (m.kind == Method::Kind::u2) lower_grad_coeff(spec);
      if (m.kind == Method::Kind::lu) upper_grad_coeff(spec);
    }
  }
};

struct PointError {
  std::size_t index = 0;  // row id in the generated/loaded dataset
  double y_true = 0.0;
  double y_pred = 0.0;
};

/// One (K, seed, fold, method) run.
struct FoldResult {
  double k = 0.0;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::string method;
  bool ok = false;
  std::string error;
  Hyperparams hp;
  double val_mae = 0.0;
  double test_mae = 0.0;
  double signed_error = 0.0;
  std::vector<PointError> points;
};

struct SummaryRow {
  std::string method;
  double k = 0.0;
  std::size_t runs = 0;  // successful fold runs
  std::size_t failed = 0;
  double mae_mean = 0.0;
  double mae_se = 0.0;
  double signed_mean = 0.0;
  double signed_se = 0.0;
};

struct BenchmarkReport {
  std::string task;
  std::string target;  // "y_true" (clean) or "y_prime" when clean labels are unknown
  std::string model;
  std::vector<FoldResult> runs;
  std::vector<SummaryRow> summary;

  const SummaryRow* find(const std::string& method, double k) const {
    for (const auto& s : summary) {
      if (s.method == method && s.k == k) return &s;
    }
    return nullptr;
  }
};

namespace detail {

struct PreparedData {
  Dataset data;
  std::optional<SyntheticProcess> process;
};

inline PreparedData prepare_task_data(const BenchmarkConfig& cfg, double k, std::uint64_t seed) {
  PreparedData out;
  if (cfg.task.kind == TaskKind::csv) {
    Dataset d = load_dataset_csv(cfg.task.csv_path);
    if (k > 0.0) {
      if (!d.ys_true) d.ys_true = d.ys_prime;
      const double z_std = cfg.task.corruption_scale / std::sqrt(cfg.task.precision());
      d = corrupt_external(d, k, z_std, RngSeed{derive_seed(seed, "benchmark.corrupt")});
    }
    out.data = std::move(d);
    return out;
  }
  out.process = make_process(cfg.d, cfg.task.precision(), k, cfg.task.mode,
                             RngSeed{derive_seed(seed, "benchmark.process")}, cfg.task.corruption_scale);
  const Dataset clean = generate_uncorrupted(*out.process, cfg.n, RngSeed{derive_seed(seed, "benchmark.data")});
  out.data = corrupt(clean, *out.process, RngSeed{derive_seed(seed, "benchmark.corrupt")});
  return out;
}

inline void run_fold(const BenchmarkConfig& cfg, const Fold& fold, const Method& method, std::uint64_t seed,
                     FoldResult& r) {
  const auto splits = standardize(fold.train, {fold.val, fold.test});
  const Dataset& val = splits.others[0];
  const Dataset& test = splits.others[1];
  if (test.size() == 0) throw std::runtime_error("test split is empty after dropping corrupted rows");

  TrainConfig base;
  base.method = method;
  base.spec = cfg.spec;
  base.reg = cfg.reg;
  base.batch_size = cfg.batch_size;
  base.max_epochs = cfg.max_epochs;
  base.patience = cfg.patience;
  base.adam = cfg.adam;
  base.seed = RngSeed{derive_seed(seed, "benchmark.train", r.fold)};
  const auto gs = grid_search(splits.train, val, cfg.model, base, cfg.grid);

  const auto preds = predict_all(gs.model, test.xs);
  const auto& truth = test.eval_labels();
  r.hp = gs.best;
  r.val_mae = mae_against(gs.model, val);
  r.test_mae = mae(truth, preds);
  r.signed_error = mean_signed_error(truth, preds);
  if (cfg.keep_points) {
    r.points.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) r.points.push_back({test.row_ids[i], truth[i], preds[i]});
  }
  r.ok = true;
}

}  // namespace detail

/// Full cross-validated comparison. Every (K, seed, fold, method) unit is
/// independent and deterministic; with jobs > 1 units run on worker threads
/// and are assembled in a fixed order, so the report does not depend on
/// scheduling. Failures are recorded per unit.
inline BenchmarkReport run_benchmark(const BenchmarkConfig& cfg) {
  cfg.validate();
  BenchmarkReport report;
  report.task = cfg.task.kind == TaskKind::csv ? "csv:" + cfg.task.csv_path : cfg.task.name();
  report.model = to_string(cfg.model.kind);
  report.target = "y_true";
  if (cfg.methods.empty()) return report;

  struct Unit {
    std::size_t ki, si, fold, mi;
  };
  std::vector<Unit> units;
  for (std::size_t ki = 0; ki < cfg.k_list.size(); ++ki) {
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
      for (std::size_t f = 0; f < cfg.folds; ++f) {
        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) units.push_back({ki, si, f, mi});
      }
    }
  }

  // Data and folds per (K, seed), built once.
  struct Prepared {
    std::vector<Fold> folds;
    std::string error;
    bool has_truth = true;
  };
  std::vector<Prepared> prepared(cfg.k_list.size() * cfg.seeds.size());
  for (std::size_t ki = 0; ki < cfg.k_list.size(); ++ki) {
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
      auto& p = prepared[ki * cfg.seeds.size() + si];
      try {
        auto data = detail::prepare_task_data(cfg, cfg.k_list[ki], cfg.seeds[si]);
        p.has_truth = data.data.ys_true.has_value();
        p.folds = split_cv(data.data, cfg.folds, cfg.val_fraction,
                           RngSeed{derive_seed(cfg.seeds[si], "benchmark.split")});
      } catch (const std::exception& e) {
        p.error = e.what();
      }
    }
  }
  for (const auto& p : prepared) {
    if (p.error.empty() && !p.has_truth) report.target = "y_prime";
  }

  std::vector<FoldResult> results(units.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= units.size()) return;
      const Unit& u = units[i];
      FoldResult& r = results[i];
      r.k = cfg.k_list[u.ki];
      r.seed = cfg.seeds[u.si];
      r.fold = u.fold;
      r.method = cfg.methods[u.mi].name();
      const auto& p = prepared[u.ki * cfg.seeds.size() + u.si];
      if (!p.error.empty()) {
        r.error = "data preparation: " + p.error;
        continue;
      }
      try {
        detail::run_fold(cfg, p.folds[u.fold], cfg.methods[u.mi], r.seed, r);
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, units.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  report.runs = std::move(results);

  for (double k : cfg.k_list) {
    for (const auto& m : cfg.methods) {
      SummaryRow row;
      row.method = m.name();
      row.k = k;
      std::vector<double> maes, signeds;
      for (const auto& r : report.runs) {
        if (r.k != k || r.method != row.method) continue;
        if (r.ok) {
          maes.push_back(r.test_mae);
          signeds.push_back(r.signed_error);
        } else {
          ++row.failed;
        }
      }
      row.runs = maes.size();
      std::tie(row.mae_mean, row.mae_se) = mean_and_se(maes);
      std::tie(row.signed_mean, row.signed_se) = mean_and_se(signeds);
      report.summary.push_back(row);
    }
  }
  return report;
}

inline nlohmann::ordered_json hyperparams_json(const Hyperparams& hp) {
  nlohmann::ordered_json j;
  j["rho"] = hp.rho;
  j["lambda"] = hp.lambda;
  if (hp.sigma) j["sigma"] = *hp.sigma;
  return j;
}

// NaN (no successful runs) is written as null.
inline nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json to_json(const BenchmarkReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["model"] = r.model;
  j["target"] = r.target;
  auto& summary = j["summary"] = nlohmann::ordered_json::array();
  for (const auto& s : r.summary) {
    nlohmann::ordered_json row;
    row["method"] = s.method;
    row["k"] = s.k;
    row["runs"] = s.runs;
    row["failed"] = s.failed;
    row["mae_mean"] = number_or_null(s.mae_mean);
    row["mae_se"] = number_or_null(s.mae_se);
    row["signed_error_mean"] = number_or_null(s.signed_mean);
    row["signed_error_se"] = number_or_null(s.signed_se);
    summary.push_back(std::move(row));
  }
  auto& runs = j["runs"] = nlohmann::ordered_json::array();
  for (const auto& f : r.runs) {
    nlohmann::ordered_json row;
    row["method"] = f.method;
    row["k"] = f.k;
    row["seed"] = f.seed;
    row["fold"] = f.fold;
    row["ok"] = f.ok;
    if (f.ok) {
      row["hyperparams"] = hyperparams_json(f.hp);
      row["val_mae"] = f.val_mae;
      row["test_mae"] = f.test_mae;
      row["signed_error"] = f.signed_error;
      row["test_rows"] = f.points.size();
    } else {
      row["error"] = f.error;
    }
    runs.push_back(std::move(row));
  }
  return j;
}

inline void write_report_text(std::ostream& out, const BenchmarkReport& r) {
  const std::string mae_col = r.target == "y_true" ? "clean MAE" : "MAE vs y'";
  out << "task " << r.task << ", model " << r.model << "\n";
  out << std::left << std::setw(8) << "method" << std::right << std::setw(7) << "K%" << std::setw(22) << mae_col
      << std::setw(22) << "signed error" << std::setw(7) << "runs" << std::setw(8) << "failed" << '\n';
  auto cell = [](double m, double se) {
    std::ostringstream s;
    if (std::isfinite(m)) {
      s << std::fixed << std::setprecision(4) << m << " +- " << se;
    } else {
      s << "n/a";
    }
    return s.str();
  };
  for (const auto& s : r.summary) {
    std::ostringstream k;
    k << s.k;
    out << std::left << std::setw(8) << s.method << std::right << std::setw(7) << k.str() << std::setw(22)
        << cell(s.mae_mean, s.mae_se) << std::setw(22) << cell(s.signed_mean, s.signed_se) << std::setw(7)
        << s.runs << std::setw(8) << s.failed << '\n';
  }
  for (const auto& f : r.runs) {
    if (!f.ok) out << "failed: " << f.method << " K=" << f.k << " seed=" << f.seed << " fold=" << f.fold << ": " << f.error << '\n';
  }
}

/// Per-point test errors, `index,y_true,y_pred,error,method`. The method
/// column carries "@K<k>" and "#<seed>" suffixes when the report spans
/// several K values or seeds.
inline void write_point_errors_csv(std::ostream& out, const BenchmarkReport& r) {
  bool multi_k = false, multi_seed = false;
  for (const auto& f : r.runs) {
    multi_k = multi_k || f.k != r.runs.front().k;
    multi_seed = multi_seed || f.seed != r.runs.front().seed;
  }
  out << "index,y_true,y_pred,error,method\n";
  for (const auto& f : r.runs) {
    if (!f.ok) continue;
    std::string label = f.method;
    if (multi_k) {
      std::ostringstream k;
      k << f.k;
      label += "@K" + k.str();
    }
    if (multi_seed) label += "#" + std::to_string(f.seed);
    for (const auto& p : f.points) {
      out << p.index << ',' << format_double(p.y_true) << ',' << format_double(p.y_pred) << ','
          << format_double(p.y_pred - p.y_true) << ',' << label << '\n';
    }
  }
}

// ------------------------------------------------------------- diagnostics

/// Monte-Carlo estimates for the naive-gradient bias bound at `model`:
/// eta = P(f(x) <= y) on clean draws, xi = 1 - K/100 (checked against the
/// realized corruption mask), delta = max-norm gap between the mean upper-side
/// and mean lower-side loss gradients over clean draws.
inline BiasDiagnostics estimate_eta_xi_delta(const SyntheticProcess& process, const Model& model,
                                             const LossSpec& spec, std::size_t n_mc, RngSeed seed) {
  if (n_mc < 1000) throw std::invalid_argument("estimate_eta_xi_delta: n_mc must be at least 1000");
  if (process.dim != model.input_dim) throw std::invalid_argument("process and model dimensions differ");
  const Dataset clean = generate_uncorrupted(process, n_mc, RngSeed{derive_seed(seed.value, "diagnose.data")});
  const Dataset dirty = corrupt(clean, process, RngSeed{derive_seed(seed.value, "diagnose.corrupt")});

  BiasDiagnostics out;
  out.xi = 1.0 - process.k_percent / 100.0;
  std::size_t n_corrupted = 0;
  for (auto c : *dirty.corrupted) n_corrupted += c;
  const double realized = 1.0 - static_cast<double>(n_corrupted) / static_cast<double>(n_mc);
  if (std::abs(realized - out.xi) > 0.5 / static_cast<double>(n_mc) + 1e-12) {
    throw std::logic_error("corruption mask frequency disagrees with K");
  }

  const std::size_t P = model.theta.size();
  std::vector<double> up(P, 0.0), low(P, 0.0), jac(P);
  std::size_t n_up = 0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const double y = (*clean.ys_true)[i];
    const double f = forward_jacobian(model, clean.xs.row(i), nullptr, jac);
    const Side side = side_of(f, y);
    const double d = dloss_df(spec, f, y, side);
    auto& acc = side == Side::upper ? up : low;
    for (std::size_t j = 0; j < P; ++j) acc[j] += d * jac[j];
    n_up += side == Side::upper;
  }
  const std::size_t n_low = n_mc - n_up;
  out.eta = static_cast<double>(n_up) / static_cast<double>(n_mc);
  out.degenerate = n_up == 0 || n_low == 0;
  if (!out.degenerate) {
    for (std::size_t j = 0; j < P; ++j) {
      const double gap = up[j] / static_cast<double>(n_up) - low[j] / static_cast<double>(n_low);
      out.delta = std::max(out.delta, std::abs(gap));
    }
  }
  out.lower_bound = bias_lower_bound(out.eta, out.xi, out.delta);
  return out;
}

inline nlohmann::ordered_json to_json(const BiasDiagnostics& d) {
  nlohmann::ordered_json j;
  j["eta"] = d.eta;
  j["xi"] = d.xi;
  j["delta"] = d.delta;
  j["lower_bound"] = d.lower_bound;
  j["degenerate"] = d.degenerate;
  return j;
}

}  // namespace u2reg

#endif  // U2REG_EVAL_HPP
