#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "vpa/kernels.hpp"
#include "vpa/ops.hpp"
#include "vpa/rng.hpp"
#include "vpa/verify.hpp"

using namespace vpa;

namespace {

Tensor leaf(Shape s, Rng& r, double std = 0.5) {
  return Tensor::randn(std::move(s), r, std, true);
}

}  // namespace

TEST_CASE("sum_all gradient is all ones") {
  Rng r(1);
  Tensor x = leaf({2, 3}, r);
  backward(sum_all(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("scalar square gradient") {
  Tensor x = Tensor::scalar(3.0, true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("matmul matches the naive triple loop") {
  Rng r(2);
  Tensor x = leaf({3, 4}, r), w = leaf({4, 2}, r);
  Tensor y = matmul(x, w);
  auto want = oracle::matmul(x.values(), w.values(), 3, 4, 2);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(std::fabs(y.values()[i] - want[i]) <= 1e-12);
}

TEST_CASE("parallel matmul kernel is bit-identical to the serial one") {
  Rng r(3);
  const int n = 37, k = 29, m = 41;
  std::vector<double> a(static_cast<std::size_t>(n) * k),
      b(static_cast<std::size_t>(k) * m);
  for (auto& v : a) v = r.gauss();
  for (auto& v : b) v = r.gauss();
  std::vector<double> cp(static_cast<std::size_t>(n) * m),
      cs(static_cast<std::size_t>(n) * m);
  kernels::matmul(a.data(), b.data(), cp.data(), n, k, m);
  kernels::serial::matmul(a.data(), b.data(), cs.data(), n, k, m);
  CHECK(cp == cs);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Rng r(4);
  Tensor a = leaf({2, 3}, r), b = leaf({4, 2}, r);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("masked attention matches the dense reference") {
  Rng r(5);
  const int n = 4, d = 8, heads = 2;
  Tensor q = leaf({n, d}, r), kv = leaf({n, d}, r);
  AttentionParams p{leaf({d, d}, r), leaf({d}, r), leaf({d, d}, r),
                    leaf({d}, r),    leaf({d, d}, r), leaf({d}, r),
                    leaf({d, d}, r), leaf({d}, r)};
  Mask mask = Mask::all_true(n, n);
  Tensor got = masked_attention(q, kv, mask, heads, p);
  auto want = oracle::attention(q.values(), kv.values(), n, n, d, heads,
                                p.wq.values(), p.bq.values(), p.wk.values(),
                                p.bk.values(), p.wv.values(), p.bv.values(),
                                p.wo.values(), p.bo.values(), mask.allow);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(std::fabs(got.values()[i] - want[i]) <= 1e-10);
}

TEST_CASE("fully masked query row is rejected") {
  Rng r(6);
  const int n = 3, d = 4;
  Tensor q = leaf({n, d}, r), kv = leaf({n, d}, r);
  AttentionParams p{leaf({d, d}, r), leaf({d}, r), leaf({d, d}, r),
                    leaf({d}, r),    leaf({d, d}, r), leaf({d}, r),
                    leaf({d, d}, r), leaf({d}, r)};
  Mask mask = Mask::all_true(n, n);
  for (int j = 0; j < n; ++j) mask.set(1, j, false);
  CHECK_THROWS_AS(masked_attention(q, kv, mask, 2, p), ConfigError);
}

TEST_CASE("composite loss passes the finite difference check") {
  Rng r(7);
  const int d = 6;
  Tensor x = leaf({3, d}, r);
  Tensor w = leaf({d, d}, r);
  Tensor g = Tensor::full({d}, 1.0, true), b = Tensor::zeros({d}, true);
  auto f = [&] {
    return sum_all(square(softmax(layer_norm(linear(x, w), g, b), 1)));
  };
  CHECK(finite_diff_check(f, {x, w, g, b}) <= 1e-5);
}

TEST_CASE("gradient suite is clean and the injected fault is caught") {
  std::ostringstream sink;
  SuiteResult clean = grad_suite(sink);
  CHECK(clean.failures == 0);
  CHECK(clean.checks >= 20);
  SuiteResult faulty = grad_suite(sink, true);
  CHECK(faulty.failures == 1);
}

TEST_CASE("gather and slice round trips") {
  Rng r(8);
  Tensor t = leaf({5, 3}, r);
  Tensor g = gather_rows(t, {4, 0, 2});
  for (int j = 0; j < 3; ++j) {
    CHECK(g.at(0, j) == t.at(4, j));
    CHECK(g.at(1, j) == t.at(0, j));
    CHECK(g.at(2, j) == t.at(2, j));
  }
  Tensor s = slice_rows(t, 1, 4);
  CHECK(s.rows() == 3);
  CHECK(s.at(0, 0) == t.at(1, 0));
}

TEST_CASE("rng sequences are reproducible") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(99), d(100);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ = differ || c.next_u64() != d.next_u64();
  CHECK(differ);
}
