#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <u2reg/synthdata.hpp>

using namespace u2reg;

namespace {

double residual(const SyntheticProcess& p, const Dataset& d, std::size_t i) {
  return (*d.ys_true)[i] - p.oracle(d.xs.row(i));
}

}  // namespace

TEST_CASE("uncorrupted generation") {
  SECTION("vanishing noise") {
    const auto p = make_process(10, 1e12, 0.0, CorruptionMode::paper, RngSeed{1});
    const auto d = generate_uncorrupted(p, 500, RngSeed{2});
    for (std::size_t i = 0; i < d.size(); ++i) REQUIRE(std::abs(residual(p, d, i)) < 1e-4);
  }
  SECTION("unit precision gives unit noise std") {
    const auto p = make_process(10, 1.0, 0.0, CorruptionMode::paper, RngSeed{3});
    const auto d = generate_uncorrupted(p, 1000, RngSeed{4});
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      s += residual(p, d, i);
      ss += residual(p, d, i) * residual(p, d, i);
    }
    const double mean = s / 1000.0;
    const double sd = std::sqrt((ss - 1000.0 * mean * mean) / 999.0);
    CHECK(sd >= 0.9);
    CHECK(sd <= 1.1);
    CHECK(d.ys_prime == *d.ys_true);
    CHECK(std::count(d.corrupted->begin(), d.corrupted->end(), 1) == 0);
  }
  SECTION("deterministic in the seed") {
    const auto p = make_process(4, 0.1, 0.0, CorruptionMode::paper, RngSeed{5});
    const auto a = generate_uncorrupted(p, 50, RngSeed{6});
    const auto b = generate_uncorrupted(p, 50, RngSeed{6});
    CHECK(a.xs == b.xs);
    CHECK(a.ys_prime == b.ys_prime);
    CHECK(make_process(4, 0.1, 0.0, CorruptionMode::paper, RngSeed{5}).w == p.w);
  }
  SECTION("parameter validation") {
    CHECK_THROWS_AS(make_process(0, 1.0, 0.0, CorruptionMode::paper, RngSeed{1}), std::invalid_argument);
    CHECK_THROWS_AS(make_process(3, 0.0, 0.0, CorruptionMode::paper, RngSeed{1}), std::invalid_argument);
    CHECK_THROWS_AS(make_process(3, 1.0, 101.0, CorruptionMode::paper, RngSeed{1}), std::invalid_argument);
    const auto p = make_process(3, 1.0, 0.0, CorruptionMode::paper, RngSeed{1});
    CHECK_THROWS_AS(generate_uncorrupted(p, 0, RngSeed{1}), std::invalid_argument);
  }
}

TEST_CASE("corruption") {
  SECTION("K = 0 leaves labels alone") {
    const auto p = make_process(5, 1.0, 0.0, CorruptionMode::paper, RngSeed{1});
    const auto d = corrupt(generate_uncorrupted(p, 100, RngSeed{1}), p, RngSeed{1});
    CHECK(d.ys_prime == *d.ys_true);
    CHECK(std::count(d.corrupted->begin(), d.corrupted->end(), 1) == 0);
  }
  SECTION("exact count and sign contract") {
    for (double k : {25.0, 50.0, 75.0, 33.3}) {
      const auto p = make_process(10, 1.0, k, CorruptionMode::paper, RngSeed{2});
      const auto d = corrupt(generate_uncorrupted(p, 1000, RngSeed{3}), p, RngSeed{4});
      std::size_t lower = 0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        REQUIRE(d.ys_prime[i] <= (*d.ys_true)[i]);
        REQUIRE(((*d.corrupted)[i] == 1) == (d.ys_prime[i] < (*d.ys_true)[i]));
        lower += d.ys_prime[i] < (*d.ys_true)[i];
      }
      CHECK(lower == static_cast<std::size_t>(std::llround(10.0 * k)));
    }
  }
  SECTION("corruption magnitude has the configured scale") {
    const auto p = make_process(3, 0.25, 100.0, CorruptionMode::paper, RngSeed{5});
    const auto d = corrupt(generate_uncorrupted(p, 20000, RngSeed{6}), p, RngSeed{7});
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) s += (*d.ys_true)[i] - d.ys_prime[i];
    // E|z| = sigma sqrt(2/pi) with sigma = 2 / sqrt(0.25) = 4
    const double expected = 4.0 * std::sqrt(2.0 / M_PI);
    const double se = 4.0 * std::sqrt(1.0 - 2.0 / M_PI) / std::sqrt(20000.0);
    CHECK(std::abs(s / 20000.0 - expected) < 4.0 * se);
  }
  SECTION("strict mode keeps |z| beyond twice the clean noise") {
    const auto p = make_process(10, 1.0, 50.0, CorruptionMode::strict, RngSeed{8});
    const auto d = corrupt(generate_uncorrupted(p, 5000, RngSeed{9}), p, RngSeed{10});
    for (std::size_t i = 0; i < d.size(); ++i) {
      if ((*d.corrupted)[i]) REQUIRE((*d.ys_true)[i] - d.ys_prime[i] > 2.0 * std::abs(residual(p, d, i)));
    }
  }
  SECTION("rows without clean labels are rejected") {
    const auto p = make_process(2, 1.0, 50.0, CorruptionMode::paper, RngSeed{1});
    Dataset d = generate_uncorrupted(p, 10, RngSeed{1});
    d.ys_true.reset();
    CHECK_THROWS_AS(corrupt(d, p, RngSeed{1}), std::invalid_argument);
  }
}

TEST_CASE("upper-side rows under the oracle are never corrupted in strict mode") {
  const auto p = make_process(10, 1.0, 50.0, CorruptionMode::strict, RngSeed{11});
  const auto d = corrupt(generate_uncorrupted(p, 100000, RngSeed{12}), p, RngSeed{13});
  std::size_t violations = 0, upper = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (p.oracle(d.xs.row(i)) <= d.ys_prime[i]) {
      ++upper;
      violations += (*d.corrupted)[i];
    }
  }
  CHECK(upper > 10000);
  CHECK(violations == 0);
}

TEST_CASE("tail sampler draws from the conditional half-normal") {
  Rng rng(3);
  for (double a : {0.0, 0.3, 1.0, 3.0, 8.0}) {
    double s = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double z = half_normal_tail(rng, a);
      REQUIRE(z > a);
      s += z;
    }
    // E[Z | Z > a] = phi(a) / Q(a) for a standard normal Z
    const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
    const double q = 0.5 * std::erfc(a / std::sqrt(2.0));
    const double mean = phi / q;
    CHECK(std::abs(s / n - mean) < 0.02 * std::max(1.0, mean));
  }
}

TEST_CASE("standardization uses training statistics on features only") {
  Dataset train;
  train.xs = Matrix(0, 2);
  for (double v : {1.0, 2.0, 3.0, 4.0}) train.xs.push_row(std::vector<double>{v, 5.0});
  train.ys_prime = {10, 20, 30, 40};
  Dataset test;
  test.xs = Matrix(0, 2);
  test.xs.push_row(std::vector<double>{102.0, 5.0});
  test.ys_prime = {7};

  const auto s = standardize(train, {test});
  double mean = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < 4; ++i) mean += s.train.xs(i, 0);
  mean /= 4.0;
  for (std::size_t i = 0; i < 4; ++i) ss += (s.train.xs(i, 0) - mean) * (s.train.xs(i, 0) - mean);
  CHECK(std::abs(mean) < 1e-10);
  CHECK(std::abs(std::sqrt(ss / 4.0) - 1.0) < 1e-10);
  for (std::size_t i = 0; i < 4; ++i) CHECK(s.train.xs(i, 1) == 0.0);
  CHECK(s.train.ys_prime == train.ys_prime);
  // shifted test point mapped with train statistics (mean 2.5, std sqrt(1.25))
  CHECK(s.others[0].xs(0, 0) == Catch::Approx((102.0 - 2.5) / std::sqrt(1.25)));
  CHECK(s.others[0].xs(0, 1) == 0.0);
  CHECK(s.others[0].ys_prime[0] == 7.0);
}

TEST_CASE("window features") {
  SECTION("constant series") {
    Matrix s(6, 1);
    for (std::size_t t = 0; t < 6; ++t) s(t, 0) = 2.5;
    const auto f = window_features(s, 3, 1);
    REQUIRE(f.rows() == 4);
    REQUIRE(f.cols() == 7);
    for (std::size_t r = 0; r < f.rows(); ++r) {
      CHECK(f(r, 0) == 2.5);
      CHECK(f(r, 1) == 0.0);
      for (std::size_t q = 2; q < 7; ++q) CHECK(f(r, q) == 2.5);
    }
  }
  SECTION("median of 1..5 and quantile interpolation") {
    Matrix s(5, 2);
    for (std::size_t t = 0; t < 5; ++t) {
      s(t, 0) = static_cast<double>(5 - t);
      s(t, 1) = 10.0 * static_cast<double>(t);
    }
    const auto f = window_features(s, 5, 1);
    CHECK(f(0, 4) == 3.0);
    CHECK(f(0, 2) == Catch::Approx(1.2));  // 0.05 quantile, numpy linear rule
    CHECK(f(0, 6) == Catch::Approx(4.8));
    CHECK(f(0, 7) == 20.0);                // channel 1 mean
    CHECK(f(0, 8) == Catch::Approx(std::sqrt(200.0)));
  }
  SECTION("row count") {
    Matrix s(10, 1);
    CHECK(window_features(s, 4, 3).rows() == 3);
    CHECK(window_features(s, 10, 1).rows() == 1);
    CHECK_THROWS_AS(window_features(s, 11, 1), std::invalid_argument);
    CHECK_THROWS_AS(window_features(s, 4, 0), std::invalid_argument);
  }
}

TEST_CASE("cross-validation splits") {
  const auto p = make_process(3, 1.0, 0.0, CorruptionMode::paper, RngSeed{1});
  const auto clean = generate_uncorrupted(p, 1000, RngSeed{2});

  SECTION("test folds partition the rows") {
    const auto folds = split_cv(clean, 5, 0.2, RngSeed{3});
    REQUIRE(folds.size() == 5);
    std::set<std::size_t> seen;
    for (const auto& f : folds) {
      CHECK(f.test.size() == 200);
      CHECK(f.val.size() == 160);
      CHECK(f.train.size() == 640);
      for (auto id : f.test.row_ids) CHECK(seen.insert(id).second);
      std::set<std::size_t> fold_ids(f.test.row_ids.begin(), f.test.row_ids.end());
      for (auto id : f.train.row_ids) CHECK(fold_ids.insert(id).second);
      for (auto id : f.val.row_ids) CHECK(fold_ids.insert(id).second);
      CHECK(fold_ids.size() == 1000);
    }
    CHECK(seen.size() == 1000);
  }
  SECTION("corrupted rows never enter a test split") {
    const auto pk = make_process(3, 1.0, 50.0, CorruptionMode::paper, RngSeed{1});
    const auto d = corrupt(clean, pk, RngSeed{4});
    std::size_t test_rows = 0;
    for (const auto& f : split_cv(d, 5, 0.2, RngSeed{5})) {
      for (auto c : *f.test.corrupted) CHECK(c == 0);
      test_rows += f.test.size();
      CHECK(f.val.size() == 160);
    }
    CHECK(test_rows == 500);
  }
  SECTION("deterministic and validated") {
    const auto a = split_cv(clean, 4, 0.3, RngSeed{6});
    const auto b = split_cv(clean, 4, 0.3, RngSeed{6});
    for (std::size_t f = 0; f < 4; ++f) CHECK(a[f].val.row_ids == b[f].val.row_ids);
    CHECK_THROWS_AS(split_cv(clean, 1, 0.2, RngSeed{1}), std::invalid_argument);
    CHECK_THROWS_AS(split_cv(clean, 5, 0.0, RngSeed{1}), std::invalid_argument);
    CHECK_THROWS_AS(split_cv(clean.subset(std::vector<std::size_t>{0, 1, 2}), 5, 0.2, RngSeed{1}), std::invalid_argument);
  }
}
