#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include <u2reg/grad_engine.hpp>

using namespace u2reg;
using Catch::Approx;

namespace {

Dataset make_data(const std::vector<std::vector<double>>& xs, const std::vector<double>& ys) {
  Dataset d;
  d.xs = Matrix(0, xs.front().size());
  for (const auto& x : xs) d.xs.push_row(x);
  d.ys_prime = ys;
  return d;
}

Dataset sample_data(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Dataset d;
  d.xs = Matrix(n, dim);
  for (auto& v : d.xs.data()) v = n01(rng);
  for (std::size_t i = 0; i < n; ++i) d.ys_prime.push_back(2.0 * n01(rng));
  return d;
}

Model linear(std::vector<double> theta) {
  const std::size_t d = theta.size() - 1;
  return Model{LinearArch{}, d, std::move(theta)};
}

const LossSpec kAbs{LossKind::absolute(), LossKind::absolute()};

// Three-sum form written out term by term, independent of the coefficient
// folding used by the library.
std::vector<double> u2_by_terms(const Model& m, const Dataset& d, const LossSpec& spec, double rho) {
  const double c = lower_grad_coeff(spec);
  std::vector<double> t1(m.theta.size(), 0.0), t2 = t1, t3 = t1;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto J = param_jacobian(m, d.xs.row(i), false);
    const double f = predict(m, d.xs.row(i));
    const bool up = f <= d.ys_prime[i];
    for (std::size_t j = 0; j < J.size(); ++j) {
      if (up) t1[j] += dloss_df(spec, f, d.ys_prime[i], Side::upper) * J[j];
      t2[j] += c * J[j];
      if (up) t3[j] += c * J[j];
    }
  }
  std::vector<double> g(m.theta.size());
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = t1[j] + rho * t2[j] - t3[j];
  return g;
}

}  // namespace

TEST_CASE("partition splits by f <= y' with ties upper") {
  const Dataset d = make_data({{1.0}, {1.0}, {1.0}}, {1.0, -1.0, 0.0});
  const Model zero = linear({0.0, 0.0});
  const auto p = partition(zero, full_batch(d));
  CHECK(p.upper == std::vector<std::size_t>{0, 2});
  CHECK(p.lower == std::vector<std::size_t>{1});

  const Model high = linear({0.0, 5.0});
  CHECK(partition(high, full_batch(d)).upper.empty());

  std::mt19937_64 rng(4);
  const Dataset r = sample_data(57, 3, rng);
  const auto q = partition(linear({0.3, -0.1, 0.2, 0.05}), full_batch(r));
  CHECK(q.upper.size() + q.lower.size() == 57);

  // Nudging a tied label upward never moves it to the lower side.
  Dataset tie = make_data({{1.0}}, {0.0});
  tie.ys_prime[0] += 1e-12;
  CHECK(partition(zero, full_batch(tie)).upper.size() == 1);
}

TEST_CASE("u2 gradient on hand-worked batches") {
  const Model zero = linear({0.0, 0.0});
  const Dataset d = make_data({{1.0}, {1.0}}, {1.0, -1.0});
  const auto g = u2_batch_gradient(zero, full_batch(d), kAbs, 1.0, 0.0, Regularizer::none);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);

  // Empty upper set: only rho * c * sum J survives.
  const Model high = linear({0.5, 3.0});
  const Dataset e = make_data({{1.0}, {2.0}, {-0.5}}, {-1.0, -2.0, -3.0});
  const auto ge = u2_batch_gradient(high, full_batch(e), kAbs, 0.7, 0.0, Regularizer::none);
  CHECK(ge[0] == Approx(0.7 * (1.0 + 2.0 - 0.5)));
  CHECK(ge[1] == Approx(0.7 * 3.0));

  // rho = 0, all upper, squared upper loss: sum (2(f - y) - c) J.
  const LossSpec sq{LossKind::squared(), LossKind::absolute()};
  const Model m = linear({0.5, 0.0});
  const Dataset a = make_data({{1.0}, {2.0}, {-1.0}}, {3.0, 4.0, 1.0});
  const auto ga = u2_batch_gradient(m, full_batch(a), sq, 0.0, 0.0, Regularizer::none);
  double w = 0.0, b = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double x = a.xs(i, 0), f = 0.5 * x;
    w += (2.0 * (f - a.ys_prime[i]) - 1.0) * x;
    b += 2.0 * (f - a.ys_prime[i]) - 1.0;
  }
  CHECK(ga[0] == Approx(w));
  CHECK(ga[1] == Approx(b));

  CHECK_THROWS_AS(u2_batch_gradient(zero, full_batch(d), kAbs, -1.0, 0.0, Regularizer::none), std::invalid_argument);
  CHECK_THROWS_AS(u2_batch_gradient(zero, full_batch(d), kAbs, 1.0, -1.0, Regularizer::none), std::invalid_argument);
  CHECK_THROWS_AS(u2_batch_gradient(zero, full_batch(d), LossSpec{LossKind::absolute(), LossKind::squared()}, 1.0,
                                    0.0, Regularizer::none),
                  std::invalid_argument);
}

TEST_CASE("u2 gradient matches the three-sum form on random batches") {
  std::mt19937_64 rng(8);
  const std::vector<LossSpec> specs{kAbs, {LossKind::squared(), LossKind::absolute()},
                                    {LossKind::huber(0.7), LossKind::pinball(0.3)},
                                    {LossKind::pinball(0.8), LossKind::pinball(0.8)}};
  for (const auto& spec : specs) {
    for (int rep = 0; rep < 20; ++rep) {
      const Dataset d = sample_data(19, 3, rng);
      std::normal_distribution<double> n01;
      const Model m = linear({n01(rng), n01(rng), n01(rng), n01(rng)});
      const double rho = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
      const auto g = u2_batch_gradient(m, full_batch(d), spec, rho, 0.0, Regularizer::none);
      const auto ref = u2_by_terms(m, d, spec, rho);
      for (std::size_t j = 0; j < g.size(); ++j) REQUIRE(g[j] == Approx(ref[j]).margin(1e-12));
    }
  }
}

TEST_CASE("rho = 1 turns u2 into the plain split-loss gradient") {
  std::mt19937_64 rng(12);
  const Dataset d = sample_data(30, 2, rng);
  const Model m = linear({0.4, -0.3, 0.1});
  const auto g = u2_batch_gradient(m, full_batch(d), kAbs, 1.0, 0.0, Regularizer::none);
  const auto n = naive_batch_gradient(m, full_batch(d), NaiveLoss::mae(), 0.0, Regularizer::none);
  for (std::size_t j = 0; j < g.size(); ++j) CHECK(g[j] == Approx(30.0 * n[j]).margin(1e-12));
}

TEST_CASE("regularizer gradients act on weights only") {
  const Dataset d = make_data({{1.0, 1.0}}, {100.0});
  const Model m = linear({0.5, 0.0, -2.0});
  const auto base = u2_batch_gradient(m, full_batch(d), kAbs, 1.0, 0.0, Regularizer::none);
  const auto l1 = u2_batch_gradient(m, full_batch(d), kAbs, 1.0, 0.1, Regularizer::l1);
  const auto l2 = u2_batch_gradient(m, full_batch(d), kAbs, 1.0, 0.1, Regularizer::l2);
  CHECK(l1[0] - base[0] == Approx(0.1));
  CHECK(l1[1] - base[1] == 0.0);  // sign(0) = 0
  CHECK(l1[2] == base[2]);
  CHECK(l2[0] - base[0] == Approx(0.1 * 2 * 0.5));
  CHECK(l2[2] == base[2]);
}

TEST_CASE("lu gradient") {
  SECTION("all points upper: rho * c_LU * sum J") {
    const Dataset d = make_data({{1.0}, {2.0}}, {5.0, 6.0});
    const auto g = lu_batch_gradient(linear({0.0, 0.0}), full_batch(d), kAbs, 0.5, 0.0, Regularizer::none);
    CHECK(g[0] == Approx(0.5 * -1.0 * 3.0));
    CHECK(g[1] == Approx(0.5 * -1.0 * 2.0));
  }
  SECTION("single lower point, rho = 0") {
    const LossSpec spec{LossKind::absolute(), LossKind::squared()};
    const Dataset d = make_data({{2.0}}, {-1.0});
    const Model m = linear({1.0, 0.0});  // f = 2
    const auto g = lu_batch_gradient(m, full_batch(d), spec, 0.0, 0.0, Regularizer::none);
    const double coeff = 2.0 * (2.0 - -1.0) - -1.0;
    CHECK(g[0] == Approx(coeff * 2.0));
    CHECK(g[1] == Approx(coeff));
  }
  SECTION("mirror identity on random batches") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n01;
    const std::vector<LossSpec> specs{kAbs, {LossKind::squared(), LossKind::absolute()},
                                      {LossKind::squared(), LossKind::pinball(0.25)}};
    for (const auto& spec : specs) {
      for (int rep = 0; rep < 50; ++rep) {
        Dataset d = sample_data(16, 3, rng);
        std::vector<double> theta{n01(rng), n01(rng), n01(rng), n01(rng)};
        const Model m = linear(theta);
        const double rho = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
        const auto g = u2_batch_gradient(m, full_batch(d), spec, rho, 0.05, Regularizer::l1);

        Dataset neg = d;
        for (auto& y : neg.ys_prime) y = -y;
        for (auto& t : theta) t = -t;
        const auto h = lu_batch_gradient(linear(theta), full_batch(neg), mirrored(spec), rho, 0.05, Regularizer::l1);
        for (std::size_t j = 0; j < g.size(); ++j) REQUIRE(h[j] == -g[j]);
      }
    }
  }
  SECTION("rejects a y-dependent upper loss") {
    const Dataset d = make_data({{1.0}}, {1.0});
    CHECK_THROWS_AS(lu_batch_gradient(linear({0.0, 0.0}), full_batch(d), LossSpec{LossKind::squared(), LossKind::absolute()},
                                      1.0, 0.0, Regularizer::none),
                    std::invalid_argument);
  }
}

TEST_CASE("naive gradients") {
  const Model zero = linear({0.0, 0.0});
  const Dataset d = make_data({{1.0}}, {2.0});
  const auto g = naive_batch_gradient(zero, full_batch(d), NaiveLoss::mse(), 0.0, Regularizer::none);
  CHECK(g[0] == -4.0);
  CHECK(g[1] == -4.0);

  const Dataset fit = make_data({{1.0}, {2.0}}, {0.5, 1.0});
  const auto z = naive_batch_gradient(linear({0.5, 0.0}), full_batch(fit), NaiveLoss::mae(), 0.0, Regularizer::none);
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);

  const Dataset small = make_data({{1.0}, {-1.0}}, {0.3, -0.2});
  const Model m = linear({0.1, 0.05});
  const auto hub = naive_batch_gradient(m, full_batch(small), NaiveLoss::huber(1.0), 0.0, Regularizer::none);
  const auto mse = naive_batch_gradient(m, full_batch(small), NaiveLoss::mse(), 0.0, Regularizer::none);
  CHECK(hub == mse);
}

TEST_CASE("gradients are bit-identical across repeated calls") {
  std::mt19937_64 rng(1);
  const Dataset d = sample_data(64, 4, rng);
  const Model m = init_model(MlpArch{{8, 8}, 0.5}, 4, RngSeed{3});
  const GradientContext ctx{true, 77, 5};
  const auto a = u2_batch_gradient(m, full_batch(d), kAbs, 0.3, 0.01, Regularizer::l1, ctx);
  const auto b = u2_batch_gradient(m, full_batch(d), kAbs, 0.3, 0.01, Regularizer::l1, ctx);
  CHECK(a == b);
}

TEST_CASE("population gradient oracle") {
  const auto p = make_process(3, 1.0, 0.0, CorruptionMode::paper, RngSeed{5});
  Model star{LinearArch{}, 3, p.w};
  star.theta.push_back(0.0);

  SECTION("stationary at the oracle regressor") {
    const std::size_t n = 100000;
    const auto est = population_gradient_oracle(star, p, n, kAbs, RngSeed{1});
    double norm = 0.0;
    for (double g : est.mean) norm += g * g;
    // each component is a mean of +-x_j or +-1 (unit variance)
    CHECK(std::sqrt(norm) < 5.0 * std::sqrt(4.0) / std::sqrt(static_cast<double>(n)));
  }
  SECTION("single draw is one sample gradient") {
    const auto est = population_gradient_oracle(star, p, 1, kAbs, RngSeed{2});
    CHECK(std::abs(est.mean.back()) == 1.0);
    for (double se : est.std_error) CHECK(se == 0.0);
  }
  SECTION("independent seeds agree within 4 combined standard errors") {
    Model off = star;
    off.theta.back() = 0.4;
    const auto a = population_gradient_oracle(off, p, 100000, kAbs, RngSeed{10});
    const auto b = population_gradient_oracle(off, p, 100000, kAbs, RngSeed{11});
    for (std::size_t j = 0; j < a.mean.size(); ++j) {
      const double se = std::hypot(a.std_error[j], b.std_error[j]);
      CHECK(std::abs(a.mean[j] - b.mean[j]) <= 4.0 * se);
    }
  }
}

TEST_CASE("naive bias lower bound") {
  CHECK(bias_lower_bound(0.5, 0.0, 1.0) == 0.25);
  CHECK(bias_lower_bound(0.3, 1.0, 2.0) == 0.0);
  CHECK(bias_lower_bound(0.0, 0.4, 2.0) == 0.0);
  CHECK(bias_lower_bound(1.0, 1.0, 2.0) == 0.0);
  CHECK(bias_lower_bound(0.5, 0.5, 0.0) == 0.0);
  CHECK(bias_lower_bound(0.5, 0.5, 2.0) == Approx(0.5 * 0.5 * 0.5 * 2.0 / 0.75));
  CHECK_THROWS_AS(bias_lower_bound(1.5, 0.5, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(bias_lower_bound(0.5, -0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(bias_lower_bound(0.5, 0.5, -1.0), std::invalid_argument);
}
