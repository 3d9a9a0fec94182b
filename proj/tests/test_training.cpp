#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "vpa/ops.hpp"
#include "vpa/rng.hpp"
#include "vpa/training.hpp"

using namespace vpa;

TEST_CASE("InfoNCE equals 2 log n when every similarity ties") {
  const int n = 5, d = 4;
  std::vector<double> row{0.5, 0.5, 0.5, 0.5};
  std::vector<double> all;
  for (int i = 0; i < n; ++i) all.insert(all.end(), row.begin(), row.end());
  Tensor v = Tensor::from({n, d}, all), t = Tensor::from({n, d}, all);
  const double loss = info_nce(v, t, 0.07).item();
  CHECK(loss == doctest::Approx(2.0 * std::log(n)).epsilon(1e-12));
}

TEST_CASE("InfoNCE matches a naive double-loop implementation") {
  Rng r(1);
  const int n = 4, d = 6;
  const double tau = 0.3;
  Tensor v = l2_normalize_rows(Tensor::randn({n, d}, r, 1.0));
  Tensor t = l2_normalize_rows(Tensor::randn({n, d}, r, 1.0));
  const double got = info_nce(v, t, tau).item();

  auto sim = [&](int i, int j) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += v.at(i, c) * t.at(j, c);
    return s / tau;
  };
  double want = 0.0;
  for (int i = 0; i < n; ++i) {
    double lse_v = 0.0, lse_t = 0.0;
    for (int j = 0; j < n; ++j) {
      lse_v += std::exp(sim(i, j));
      lse_t += std::exp(sim(j, i));
    }
    want += std::log(lse_v) + std::log(lse_t) - 2.0 * sim(i, i);
  }
  want /= n;
  CHECK(std::fabs(got - want) <= 1e-12);
}

TEST_CASE("InfoNCE rejects bad temperature and shape mismatch") {
  Rng r(2);
  Tensor v = Tensor::randn({3, 4}, r, 1.0), t = Tensor::randn({3, 4}, r, 1.0);
  CHECK_THROWS_AS(info_nce(v, t, 0.0), ConfigError);
  Tensor t2 = Tensor::randn({2, 4}, r, 1.0);
  CHECK_THROWS_AS(info_nce(v, t2, 0.1), ShapeError);
}

TEST_CASE("combined loss reduces to the contrastive term") {
  Tensor cl = Tensor::scalar(1.25);
  Tensor zero_syn = Tensor::scalar(0.0);
  CHECK(total_loss(cl, nullptr, 0.5).item() == 1.25);
  Tensor syn = Tensor::scalar(3.0);
  CHECK(total_loss(cl, &syn, 0.0).item() == 1.25);
  CHECK(total_loss(cl, &zero_syn, 1.0).item() == 1.25);
  CHECK(total_loss(cl, &syn, 0.1).item() ==
        doctest::Approx(1.25 + 0.3).epsilon(1e-15));
}

TEST_CASE("gamma ramp endpoints and interior values") {
  TrainConfig tc;
  tc.epochs = 10;
  tc.ramp_fraction = 0.5;
  CHECK(gamma_at(0, tc) == 0.0);
  CHECK(gamma_at(5, tc) == 1.0);
  CHECK(gamma_at(10, tc) == 1.0);
  CHECK(gamma_at(2, tc) == doctest::Approx(0.4).epsilon(1e-15));

  tc.epochs = 8;
  CHECK(gamma_at(2, tc) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(gamma_at(-1, tc), ConfigError);
  CHECK_THROWS_AS(gamma_at(9, tc), ConfigError);
}

TEST_CASE("AdamW leaves parameters alone on zero gradient") {
  Rng r(3);
  Tensor p = Tensor::randn({3, 3}, r, 1.0, true);
  const std::vector<double> before = p.values();
  p.zero_grad();
  AdamW opt(0.1);
  opt.step({p}, {false});
  CHECK(p.values() == before);
}

TEST_CASE("identical state produces identical updates") {
  Rng r(4);
  Tensor a = Tensor::randn({4}, r, 1.0, true);
  Tensor b = Tensor::from({4}, a.values(), true);
  for (int i = 0; i < 4; ++i) {
    a.grad()[i] = 0.1 * (i + 1);
    b.grad()[i] = 0.1 * (i + 1);
  }
  AdamW oa(0.05, 0.9, 0.999, 1e-8, 0.01), ob(0.05, 0.9, 0.999, 1e-8, 0.01);
  oa.step({a}, {false});
  ob.step({b}, {false});
  CHECK(a.values() == b.values());
}

TEST_CASE("AdamW drives a scalar quadratic to zero") {
  Tensor x = Tensor::scalar(1.0, true);
  AdamW opt(0.1);
  for (int s = 0; s < 200; ++s) {
    x.zero_grad();
    backward(mul(x, x));
    opt.step({x}, {false});
  }
  CHECK(std::fabs(x.values()[0]) < 1e-3);
}

TEST_CASE("zero learning rate keeps parameters bit-identical") {
  Rng r(5);
  Tensor p = Tensor::randn({5}, r, 1.0, true);
  const std::vector<double> before = p.values();
  AdamW opt(0.0);
  for (int s = 0; s < 3; ++s) {
    p.zero_grad();
    backward(sum_all(square(p)));
    opt.step({p}, {false});
  }
  CHECK(p.values() == before);
}

TEST_CASE("weight decay is skipped for no_decay entries") {
  Tensor a = Tensor::from({1}, {1.0}, true);
  Tensor b = Tensor::from({1}, {1.0}, true);
  a.zero_grad();
  b.zero_grad();
  AdamW opt(0.1, 0.9, 0.999, 1e-8, 0.5);
  opt.step({a, b}, {false, true});
  CHECK(a.values()[0] < 1.0);   // decayed
  CHECK(b.values()[0] == 1.0);  // exempt, zero gradient
}
