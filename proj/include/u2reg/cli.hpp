#ifndef U2REG_CLI_HPP
#define U2REG_CLI_HPP

// Command-line front end. run_cli returns 0 on success, 1 on usage or
// validation errors and 2 on runtime failures. Data goes to --out files (or
// standard output for "-"), messages to the error stream.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eval.hpp"
#include "grad_engine.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "models.hpp"
#include "optim.hpp"
#include "synthdata.hpp"

namespace u2reg {

namespace cli_detail {

// Options shared by `train` and `benchmark`.
struct TrainingFlags {
  std::string model = "linear";
  std::string upper_loss = "absolute";
  std::string lower_loss = "absolute";
  std::string reg = "l1";
  double huber_delta = 1.0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  double val_fraction = 0.2;
  std::vector<std::size_t> hidden{100, 100, 100, 100};
  double dropout = 0.5;
  std::size_t rbf_max_bases = 0;
  double learning_rate = 0.001;

  void add_to(CLI::App& app) {
    app.add_option("--model", model, "Model family")->check(CLI::IsMember({"linear", "rbf", "mlp"}));
    app.add_option("--upper-loss", upper_loss, "Loss on the upper side (squared, absolute, pinball:<tau>, huber:<delta>)");
    app.add_option("--lower-loss", lower_loss, "Loss on the lower side (must have a label-free gradient for u2)");
    app.add_option("--reg", reg, "Regularizer on weights")->check(CLI::IsMember({"none", "l1", "l2"}));
    app.add_option("--huber-delta", huber_delta, "Threshold of the naive huber baseline")->check(CLI::PositiveNumber);
    app.add_option("--batch-size", batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
    app.add_option("--max-epochs", max_epochs, "Maximum number of epochs");
    app.add_option("--patience", patience, "Stop after this many epochs without validation improvement")
        ->check(CLI::PositiveNumber);
    app.add_option("--val-fraction", val_fraction, "Fraction of the non-test rows used for validation")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--hidden", hidden, "MLP hidden widths")->delimiter(',');
    app.add_option("--dropout", dropout, "MLP dropout rate")->check(CLI::Range(0.0, 0.99));
    app.add_option("--rbf-max-bases", rbf_max_bases, "Cap on RBF base points (0: all training points)");
    app.add_option("--learning-rate", learning_rate, "Adam step size")->check(CLI::PositiveNumber);
  }

  LossSpec loss_spec() const { return {LossKind::parse(upper_loss), LossKind::parse(lower_loss)}; }
  Regularizer regularizer() const {
    return reg == "none" ? Regularizer::none : reg == "l2" ? Regularizer::l2 : Regularizer::l1;
  }
  ModelSpec model_spec() const {
    ModelSpec s;
    s.kind = parse_model_kind(model);
    s.mlp.hidden = hidden;
    s.mlp.dropout = dropout;
    s.rbf_max_bases = rbf_max_bases;
    return s;
  }
  Method method(const std::string& name) const {
    Method m = Method::parse(name);
    m.huber_delta = huber_delta;
    return m;
  }
};

struct ProcessFlags {
  std::string task = "low-noise";
  std::size_t n = 1000;
  std::size_t d = 10;
  std::optional<double> beta;
  std::string corruption_mode = "paper";
  double corruption_scale = 2.0;

  void add_to(CLI::App& app, bool with_task = true) {
    if (with_task) app.add_option("--task", task, "low-noise (beta 1) or high-noise (beta 0.1)");
    app.add_option("--n", n, "Number of rows")->check(CLI::PositiveNumber);
    app.add_option("--d", d, "Number of features")->check(CLI::PositiveNumber);
    app.add_option("--beta", beta, "Noise precision (overrides the task's value)")->check(CLI::PositiveNumber);
    app.add_option("--corruption-mode", corruption_mode, "paper: |z| unconstrained; strict: |z| > 2|eps|")
        ->check(CLI::IsMember({"paper", "strict"}));
    app.add_option("--corruption-scale", corruption_scale, "Std of z in units of the noise std")
        ->check(CLI::PositiveNumber);
  }

  CorruptionMode mode() const { return corruption_mode == "strict" ? CorruptionMode::strict : CorruptionMode::paper; }
  double precision() const {
    const TaskSpec t = parse_task(task);
    if (t.kind == TaskKind::csv) throw std::invalid_argument("this command needs a synthetic task");
    return beta ? *beta : t.precision();
  }
};

inline void emit(const std::string& path, const std::function<void(std::ostream&)>& fill, std::ostream& out) {
  if (path == "-") {
    std::ostringstream buf;
    fill(buf);
    out << buf.str();
  } else {
    write_file_atomic(path, fill);
  }
}

/// A seeded train/validation split of one labeled dataset.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& d, double val_fraction, std::uint64_t seed) {
  if (d.size() < 2) throw std::invalid_argument("need at least 2 rows to split train/validation");
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, "cli.train.split");
  std::shuffle(perm.begin(), perm.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(d.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, d.size() - 1);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {d.subset(train), d.subset(val)};
}

/// Folds a feature standardizer into a linear model so it acts on raw inputs.
inline Model fold_standardizer(const ModelFile& mf) {
  Model m = mf.model;
  if (!mf.standardizer) return m;
  if (!std::holds_alternative<LinearArch>(m.arch)) {
    throw std::invalid_argument("only linear models can be evaluated on raw process inputs");
  }
  const auto& s = *mf.standardizer;
  for (std::size_t j = 0; j < m.input_dim; ++j) {
    m.theta.back() -= m.theta[j] * s.mean[j] / s.scale[j];
    m.theta[j] /= s.scale[j];
  }
  return m;
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Regression from labels with one-sided (downward) corruption", "u2reg"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML run configuration; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string out_path = "-";

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic corrupted dataset CSV");
  ProcessFlags gen_proc;
  double gen_k = 0.0;
  gen_proc.add_to(*gen);
  gen->add_option("--k", gen_k, "Percentage of corrupted rows")->check(CLI::Range(0.0, 100.0));
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--out", out_path, "Output CSV ('-' for standard output)");

  // corrupt
  auto* cor = app.add_subcommand("corrupt", "Apply one-sided corruption to the labels of a dataset CSV");
  std::string cor_in;
  double cor_k = 50.0, cor_beta = 1.0, cor_scale = 2.0;
  cor->add_option("--in", cor_in, "Input dataset CSV")->required();
  cor->add_option("--k", cor_k, "Percentage of corrupted rows")->check(CLI::Range(0.0, 100.0));
  cor->add_option("--beta", cor_beta, "Noise precision; z has std corruption-scale/sqrt(beta)")->check(CLI::PositiveNumber);
  cor->add_option("--corruption-scale", cor_scale, "Std of z in units of the noise std")->check(CLI::PositiveNumber);
  cor->add_option("--seed", seed, "Random seed");
  cor->add_option("--out", out_path, "Output CSV ('-' for standard output)");

  // train
  auto* tr = app.add_subcommand("train", "Train one model on a dataset CSV and save it");
  TrainingFlags tr_flags;
  std::string tr_data, tr_method = "u2", tr_history;
  double tr_rho = 1.0, tr_lambda = 0.0, tr_sigma = 1.0;
  bool tr_record_time = false;
  tr->add_option("--data", tr_data, "Training dataset CSV (x0..,y_prime)")->required();
  tr->add_option("--method", tr_method, "Training method")->check(CLI::IsMember({"u2", "lu", "mse", "mae", "huber"}));
  tr->add_option("--rho", tr_rho, "Weight of the label-free term (u2/lu)")->check(CLI::NonNegativeNumber);
  tr->add_option("--lambda", tr_lambda, "Regularization strength")->check(CLI::NonNegativeNumber);
  tr->add_option("--sigma", tr_sigma, "RBF bandwidth")->check(CLI::PositiveNumber);
  tr_flags.add_to(*tr);
  tr->add_option("--seed", seed, "Random seed");
  tr->add_option("--out", out_path, "Output model file ('-' for standard output)");
  tr->add_option("--history", tr_history, "Per-epoch history CSV");
  tr->add_flag("--record-time", tr_record_time, "Record wall time in the history (not reproducible)");

  // predict
  auto* pr = app.add_subcommand("predict", "Predict with a saved model");
  std::string pr_model, pr_data;
  pr->add_option("--model-file", pr_model, "Model file written by train")->required();
  pr->add_option("--data", pr_data, "CSV with the same feature columns")->required();
  pr->add_option("--out", out_path, "Output CSV index,y_pred ('-' for standard output)");

  // benchmark
  auto* bm = app.add_subcommand("benchmark", "Cross-validated comparison of methods");
  ProcessFlags bm_proc;
  TrainingFlags bm_flags;
  std::vector<std::string> bm_methods{"u2", "mse"};
  std::vector<double> bm_k{50.0};
  std::vector<std::uint64_t> bm_seeds;
  std::size_t bm_folds = 5, bm_jobs = 1;
  GridSpec bm_grid;
  std::optional<double> bm_rho, bm_lambda, bm_sigma;
  std::string bm_text, bm_errors;
  bm_proc.add_to(*bm);
  bm->add_option("--methods,--method", bm_methods, "Methods to compare")->delimiter(',');
  bm->add_option("--k", bm_k, "Corruption percentages")->delimiter(',');
  bm->add_option("--folds", bm_folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  bm->add_option("--seed", seed, "Random seed (one replicate)");
  bm->add_option("--seeds", bm_seeds, "Several replicate seeds (overrides --seed)")->delimiter(',');
  bm->add_option("--jobs", bm_jobs, "Worker threads")->check(CLI::PositiveNumber);
  bm->add_option("--rho-grid", bm_grid.rho_grid, "Candidate rho values")->delimiter(',');
  bm->add_option("--lambda-grid", bm_grid.lambda_grid, "Candidate lambda values")->delimiter(',');
  bm->add_option("--sigma-grid", bm_grid.sigma_grid, "Candidate RBF bandwidths")->delimiter(',');
  bm->add_option("--rho", bm_rho, "Fix rho instead of searching")->check(CLI::PositiveNumber);
  bm->add_option("--lambda", bm_lambda, "Fix lambda instead of searching")->check(CLI::PositiveNumber);
  bm->add_option("--sigma", bm_sigma, "Fix sigma instead of searching")->check(CLI::PositiveNumber);
  bm_flags.add_to(*bm);
  bm->add_option("--out", out_path, "Report JSON ('-' for standard output)");
  bm->add_option("--table", bm_text, "Also write the aligned text table to this file");
  bm->add_option("--errors-out", bm_errors, "Per-point test errors CSV");

  // diagnose
  auto* dg = app.add_subcommand("diagnose", "Estimate eta, xi, delta and the naive-gradient bias bound");
  ProcessFlags dg_proc;
  double dg_k = 50.0, dg_offset = 0.0;
  std::size_t dg_nmc = 100000;
  std::string dg_model, dg_upper = "absolute", dg_lower = "absolute";
  dg_proc.add_to(*dg);
  dg->add_option("--k", dg_k, "Percentage of corrupted rows")->check(CLI::Range(0.0, 100.0));
  dg->add_option("--n-mc", dg_nmc, "Monte-Carlo draws")->check(CLI::Range(std::size_t{1000}, std::size_t{100000000}));
  dg->add_option("--bias-offset", dg_offset, "Evaluate at f = f* + offset (when no model file is given)");
  dg->add_option("--model-file", dg_model, "Linear model file to evaluate instead of the shifted oracle");
  dg->add_option("--upper-loss", dg_upper, "Loss on the upper side");
  dg->add_option("--lower-loss", dg_lower, "Loss on the lower side");
  dg->add_option("--seed", seed, "Random seed; also fixes the oracle as in generate");
  dg->add_option("--out", out_path, "Output JSON ('-' for standard output)");

  // features
  auto* ft = app.add_subcommand("features", "Sliding-window statistics over a time-series CSV");
  std::string ft_in;
  std::size_t ft_window = 0, ft_stride = 1;
  ft->add_option("--in", ft_in, "Series CSV (header of channel names)")->required();
  ft->add_option("--window", ft_window, "Window length")->required()->check(CLI::PositiveNumber);
  ft->add_option("--stride", ft_stride, "Window stride")->check(CLI::PositiveNumber);
  ft->add_option("--out", out_path, "Output CSV ('-' for standard output)");

  for (auto* sub : app.get_subcommands({})) {
    sub->allow_config_extras(CLI::config_extras_mode::error);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const double beta = gen_proc.precision();
      const auto p = make_process(gen_proc.d, beta, gen_k, gen_proc.mode(), RngSeed{seed}, gen_proc.corruption_scale);
      const Dataset d = corrupt(generate_uncorrupted(p, gen_proc.n, RngSeed{seed}), p, RngSeed{seed});
      emit(out_path, [&](std::ostream& o) { write_dataset_csv(o, d); }, out);
    } else if (cor->parsed()) {
      Dataset d = load_dataset_csv(cor_in);
      if (!d.ys_true) d.ys_true = d.ys_prime;
      const Dataset c = corrupt_external(d, cor_k, cor_scale / std::sqrt(cor_beta), RngSeed{seed});
      emit(out_path, [&](std::ostream& o) { write_dataset_csv(o, c); }, out);
    } else if (tr->parsed()) {
      TrainConfig cfg;
      cfg.method = tr_flags.method(tr_method);
      cfg.spec = tr_flags.loss_spec();
      cfg.rho = tr_rho;
      cfg.lambda = tr_lambda;
      cfg.reg = tr_flags.regularizer();
      cfg.batch_size = tr_flags.batch_size;
      cfg.max_epochs = tr_flags.max_epochs;
      cfg.patience = tr_flags.patience;
      cfg.adam.alpha = tr_flags.learning_rate;
      cfg.seed = RngSeed{seed};
      if (cfg.method.kind == Method::Kind::u2) lower_grad_coeff(cfg.spec);
      if (cfg.method.kind == Method::Kind::lu) upper_grad_coeff(cfg.spec);
      const ModelSpec mspec = tr_flags.model_spec();

      const Dataset data = load_dataset_csv(tr_data);
      auto [train_raw, val_raw] = split_train_val(data, tr_flags.val_fraction, seed);
      auto splits = standardize(train_raw, {val_raw});
      const auto arch = make_architecture(mspec, splits.train, tr_sigma);
      validate_architecture(arch, data.dim());
      const auto result = train(cfg, splits.train, splits.others[0], arch);
      err << "trained " << to_string(mspec.kind) << " with " << cfg.method.name() << ": best validation MAE "
          << result.best_val_mae << " at epoch " << result.best_epoch << " of " << result.history.size() << '\n';

      const ModelFile mf{result.model, splits.stats};
      if (!tr_history.empty()) {
        write_file_atomic(tr_history, [&](std::ostream& o) {
          o << "epoch,val_mae,grad_norm,seconds\n";
          for (const auto& h : result.history) {
            o << h.epoch << ',' << format_double(h.val_mae) << ',' << format_double(h.grad_norm) << ','
              << format_double(tr_record_time ? h.seconds : 0.0) << '\n';
          }
        });
      }
      emit(out_path, [&](std::ostream& o) { write_model(o, mf); }, out);
    } else if (pr->parsed()) {
      const ModelFile mf = load_model(pr_model);
      Dataset d = load_dataset_csv(pr_data, /*require_labels=*/false);
      if (d.dim() != mf.model.input_dim) {
        throw std::invalid_argument("data has " + std::to_string(d.dim()) + " feature columns, model expects " +
                                    std::to_string(mf.model.input_dim));
      }
      if (mf.standardizer) mf.standardizer->apply(d.xs);
      const auto preds = predict_all(mf.model, d.xs);
      emit(out_path, [&](std::ostream& o) {
        o << "index,y_pred\n";
        for (std::size_t i = 0; i < preds.size(); ++i) o << i << ',' << format_double(preds[i]) << '\n';
      }, out);
    } else if (bm->parsed()) {
      BenchmarkConfig cfg;
      cfg.task = parse_task(bm_proc.task);
      cfg.task.beta = bm_proc.beta;
      cfg.task.mode = bm_proc.mode();
      cfg.task.corruption_scale = bm_proc.corruption_scale;
      for (const auto& m : bm_methods) cfg.methods.push_back(bm_flags.method(m));
      cfg.k_list = bm_k;
      cfg.folds = bm_folds;
      cfg.seeds = bm_seeds.empty() ? std::vector<std::uint64_t>{seed} : bm_seeds;
      cfg.n = bm_proc.n;
      cfg.d = bm_proc.d;
      cfg.val_fraction = bm_flags.val_fraction;
      cfg.grid = bm_grid;
      if (bm_rho) cfg.grid.rho_grid = {*bm_rho};
      if (bm_lambda) cfg.grid.lambda_grid = {*bm_lambda};
      if (bm_sigma) cfg.grid.sigma_grid = {*bm_sigma};
      cfg.model = bm_flags.model_spec();
      cfg.spec = bm_flags.loss_spec();
      cfg.reg = bm_flags.regularizer();
      cfg.batch_size = bm_flags.batch_size;
      cfg.max_epochs = bm_flags.max_epochs;
      cfg.patience = bm_flags.patience;
      cfg.adam.alpha = bm_flags.learning_rate;
      cfg.jobs = bm_jobs;
      cfg.keep_points = !bm_errors.empty();
      cfg.validate();
      if (cfg.task.kind == TaskKind::csv) load_dataset_csv(cfg.task.csv_path);  // fail early on bad input

      const auto report = run_benchmark(cfg);
      write_report_text(err, report);
      if (!bm_text.empty()) write_file_atomic(bm_text, [&](std::ostream& o) { write_report_text(o, report); });
      if (!bm_errors.empty()) write_file_atomic(bm_errors, [&](std::ostream& o) { write_point_errors_csv(o, report); });
      emit(out_path, [&](std::ostream& o) { o << to_json(report).dump(2) << '\n'; }, out);
    } else if (dg->parsed()) {
      const LossSpec spec{LossKind::parse(dg_upper), LossKind::parse(dg_lower)};
      const auto p = make_process(dg_proc.d, dg_proc.precision(), dg_k, dg_proc.mode(), RngSeed{seed},
                                  dg_proc.corruption_scale);
      Model m;
      if (!dg_model.empty()) {
        m = fold_standardizer(load_model(dg_model));
        if (m.input_dim != p.dim) throw std::invalid_argument("model input dimension differs from --d");
      } else {
        m = Model{LinearArch{}, p.dim, p.w};
        m.theta.push_back(dg_offset);
      }
      const auto diag = estimate_eta_xi_delta(p, m, spec, dg_nmc, RngSeed{seed});
      emit(out_path, [&](std::ostream& o) { o << to_json(diag).dump(2) << '\n'; }, out);
    } else if (ft->parsed()) {
      auto in = open_input(ft_in);
      const Series s = read_series_csv(in);
      const Matrix f = window_features(s.values, ft_window, ft_stride);
      emit(out_path, [&](std::ostream& o) { write_window_features_csv(o, s.channels, f); }, out);
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace u2reg

#endif  // U2REG_CLI_HPP
