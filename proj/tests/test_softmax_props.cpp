#include <cmath>

#include "doctest.h"
#include "distilforge/ops.hpp"
#include "distilforge/rng.hpp"
#include "oracles.hpp"

using namespace distilforge;

TEST_CASE("softmax closed-form values") {
  Tensor z = Tensor::from_data({1, 2}, {2.0, 0.0});

  Tensor t1 = softmax_temperature(nullptr, z, 1.0);
  CHECK(t1.data()[0] == doctest::Approx(0.88079707797788244).epsilon(1e-12));
  CHECK(t1.data()[1] == doctest::Approx(0.11920292202211756).epsilon(1e-12));

  Tensor t2 = softmax_temperature(nullptr, z, 2.0);
  CHECK(t2.data()[0] == doctest::Approx(0.73105857863000488).epsilon(1e-12));
  CHECK(t2.data()[1] == doctest::Approx(0.26894142136999512).epsilon(1e-12));

  // constant rows are exactly uniform for any temperature
  for (double c : {-3.0, 0.0, 42.0}) {
    for (double temp : {0.5, 1.0, 7.0}) {
      Tensor zc = Tensor::full({1, 3}, c);
      Tensor sm = softmax_temperature(nullptr, zc, temp);
      for (double v : sm.data()) {
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
      }
    }
  }

  // very high temperature flattens toward uniform
  Tensor hot = softmax_temperature(nullptr, z, 1e6);
  CHECK(std::abs(hot.data()[0] - 0.5) < 1e-6);
  CHECK(std::abs(hot.data()[1] - 0.5) < 1e-6);

  CHECK_THROWS_AS(softmax_temperature(nullptr, z, 0.0), DomainError);
  CHECK_THROWS_AS(softmax_temperature(nullptr, z, -1.0), DomainError);
  CHECK_THROWS_AS(softmax_temperature(nullptr, Tensor::from_data({1, 2}, {1.0, std::nan("")}), 1.0), DomainError);
}

TEST_CASE("log-softmax closed-form values and consistency") {
  Tensor z0 = Tensor::from_data({1, 2}, {0.0, 0.0});
  Tensor ls0 = log_softmax_temperature(nullptr, z0, 1.0);
  for (double v : ls0.data()) {
    CHECK(v == doctest::Approx(-0.69314718055994531).epsilon(1e-12));
  }
  Tensor z = Tensor::from_data({1, 2}, {2.0, 0.0});
  Tensor ls = log_softmax_temperature(nullptr, z, 1.0);
  CHECK(ls.data()[0] == doctest::Approx(-0.12692801104297250).epsilon(1e-12));
  CHECK(ls.data()[1] == doctest::Approx(-2.12692801104297250).epsilon(1e-12));

  // exp(log_softmax) == softmax on random inputs
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int v = 2 + static_cast<int>(rng.next_below(9));
    const auto zv = oracles::random_vector(rng, static_cast<size_t>(v), 3.0);
    const double temp = std::exp(rng.next_normal());
    Tensor zt = Tensor::from_data({1, v}, zv);
    Tensor sm = softmax_temperature(nullptr, zt, temp);
    Tensor lsm = log_softmax_temperature(nullptr, zt, temp);
    for (int j = 0; j < v; ++j) {
      CHECK(std::abs(std::exp(lsm.data()[static_cast<size_t>(j)]) - sm.data()[static_cast<size_t>(j)]) < 1e-12);
    }
  }
}

TEST_CASE("kl closed-form values and error paths") {
  // KL(P||P) = 0
  Tensor p = Tensor::from_data({1, 3}, {0.2, 0.5, 0.3});
  Tensor logp = Tensor::from_data({1, 3}, {std::log(0.2), std::log(0.5), std::log(0.3)});
  CHECK(std::abs(kl_divergence(nullptr, p, logp).data()[0]) < 1e-12);

  // one-hot against uniform: ln 2
  Tensor onehot = Tensor::from_data({1, 2}, {1.0, 0.0});
  Tensor logu = Tensor::from_data({1, 2}, {std::log(0.5), std::log(0.5)});
  CHECK(kl_divergence(nullptr, onehot, logu).data()[0] == doctest::Approx(0.69314718055994531).epsilon(1e-12));

  // 0.5 * ln(25/9)
  Tensor half = Tensor::from_data({1, 2}, {0.5, 0.5});
  Tensor log91 = Tensor::from_data({1, 2}, {std::log(0.9), std::log(0.1)});
  CHECK(kl_divergence(nullptr, half, log91).data()[0] == doctest::Approx(0.51082562376599068).epsilon(1e-12));

  // unnormalized p rejected
  Tensor badp = Tensor::from_data({1, 2}, {0.6, 0.6});
  CHECK_THROWS_AS(kl_divergence(nullptr, badp, logu), DomainError);
  // unnormalized log_q rejected
  Tensor badq = Tensor::from_data({1, 2}, {std::log(0.5), std::log(0.4)});
  CHECK_THROWS_AS(kl_divergence(nullptr, half, badq), DomainError);

  // support mismatch: p > 0 where q = 0 diverges to +inf
  Tensor q_onehot = Tensor::from_data({1, 2}, {0.0, -std::numeric_limits<double>::infinity()});
  Tensor p_mixed = Tensor::from_data({1, 2}, {0.5, 0.5});
  CHECK(std::isinf(kl_divergence(nullptr, p_mixed, q_onehot).data()[0]));
  // but p = 0 there is fine (0 * log(0/q) = 0 convention)
  Tensor p_match = Tensor::from_data({1, 2}, {1.0, 0.0});
  CHECK(std::abs(kl_divergence(nullptr, p_match, q_onehot).data()[0]) < 1e-12);
}

TEST_CASE("randomized softmax/kl property suite") {
  Rng rng(2024);
  const double t_grid[] = {0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  int cases = 0;

  for (int trial = 0; trial < 1000; ++trial) {
    const int v = 2 + static_cast<int>(rng.next_below(7));
    const auto zv = oracles::random_vector(rng, static_cast<size_t>(v), 3.0);
    Tensor z = Tensor::from_data({1, v}, zv);
    const double temp = t_grid[rng.next_below(6)];

    // rows sum to one (also at extreme temperatures)
    for (double tt : {temp, 1e-3, 1e9}) {
      Tensor sm_t = softmax_temperature(nullptr, z, tt);
      double sum = 0.0;
      for (double x : sm_t.data()) sum += x;
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }

    // shift invariance
    const double c = 20.0 * (rng.next_double() - 0.5);
    std::vector<double> shifted = zv;
    for (auto& x : shifted) x += c;
    Tensor sm_a = softmax_temperature(nullptr, z, temp);
    Tensor sm_b = softmax_temperature(nullptr, Tensor::from_data({1, v}, shifted), temp);
    for (int j = 0; j < v; ++j) CHECK(std::abs(sm_a.data()[static_cast<size_t>(j)] - sm_b.data()[static_cast<size_t>(j)]) < 1e-12);

    // temperature equals logit scaling
    std::vector<double> scaled = zv;
    for (auto& x : scaled) x /= temp;
    Tensor sm_c = softmax_temperature(nullptr, Tensor::from_data({1, v}, scaled), 1.0);
    for (int j = 0; j < v; ++j) CHECK(std::abs(sm_a.data()[static_cast<size_t>(j)] - sm_c.data()[static_cast<size_t>(j)]) < 1e-12);

    // Gibbs: KL >= 0, and zero only for (numerically) identical distributions
    const auto wv = oracles::random_vector(rng, static_cast<size_t>(v), 3.0);
    Tensor p = softmax_temperature(nullptr, z, temp);
    Tensor logq = log_softmax_temperature(nullptr, Tensor::from_data({1, v}, wv), temp);
    const double kl = kl_divergence(nullptr, p, logq).data()[0];
    CHECK(kl >= -1e-12);
    double max_diff = 0.0;
    for (int j = 0; j < v; ++j) {
      max_diff = std::max(max_diff, std::abs(p.data()[static_cast<size_t>(j)] - std::exp(logq.data()[static_cast<size_t>(j)])));
    }
    if (kl < 1e-12) CHECK(max_diff < 1e-9);
    if (max_diff < 1e-9) CHECK(kl < 1e-12);
    // and against the direct long-double reference
    const auto qd = oracles::softmax_ref(wv, temp);
    CHECK(kl == doctest::Approx(oracles::kl_ref(p.data(), qd)).epsilon(1e-9));

    // KL(P||P) identity on the library path
    Tensor logp = log_softmax_temperature(nullptr, z, temp);
    CHECK(std::abs(kl_divergence(nullptr, p, logp).data()[0]) < 1e-12);
    ++cases;
  }
  CHECK(cases == 1000);
}

TEST_CASE("softmax entropy is non-decreasing in temperature") {
  Rng rng(77);
  const double grid[] = {0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  for (int trial = 0; trial < 200; ++trial) {
    const int v = 2 + static_cast<int>(rng.next_below(7));
    auto zv = oracles::random_vector(rng, static_cast<size_t>(v), 2.0);
    zv[0] += 1.0;  // keep the row non-constant
    Tensor z = Tensor::from_data({1, v}, zv);
    double prev = -1.0;
    for (double temp : grid) {
      const double h = oracles::entropy_ref(softmax_temperature(nullptr, z, temp).data());
      CHECK(h >= prev - 1e-12);
      prev = h;
    }
  }
}
