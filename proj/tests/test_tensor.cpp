#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/error.hpp"
#include "core/gemm.hpp"
#include "core/tensor.hpp"
#include "support.hpp"

using namespace cxr;
using cxr_test::random_tensor;

namespace {

Tensor triple_loop(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += double(a.at({i, t})) * double(b.at({t, j}));
      c.at({i, j}) = float(s);
    }
  return c;
}

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at({i, i}) = 1;
  return t;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("construction invariants") {
    Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    CHECK_THROWS_AS(Tensor(Shape{}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>(3)), DimensionError);
  }

  TEST_CASE("matmul identity and zero") {
    const Tensor a = random_tensor({3, 3}, 1);
    CHECK(matmul(identity(3), a) == a);
    const Tensor z({2, 4});
    const Tensor out = matmul(z, random_tensor({4, 5}, 2));
    CHECK(out.shape() == Shape{2, 5});
    for (float v : out.data()) CHECK(v == 0.0f);
  }

  TEST_CASE("matmul matches triple loop") {
    for (std::uint32_t seed = 0; seed < 5; ++seed) {
      const Tensor a = random_tensor({5, 4}, seed);
      const Tensor b = random_tensor({4, 3}, seed + 100);
      const Tensor ref = triple_loop(a, b);
      const Tensor got = matmul(a, b);
      CHECK(cxr_test::max_abs_diff(got, ref) <= 1e-5 * std::max(1.0, cxr_test::max_abs(ref)));
    }
    const Tensor a = random_tensor({37, 71}, 9), b = random_tensor({71, 23}, 10);
    CHECK(cxr_test::max_abs_diff(matmul(a, b), triple_loop(a, b)) <= 1e-4);
  }

  TEST_CASE("matmul associativity with identity") {
    const Tensor a = random_tensor({4, 6}, 3), b = random_tensor({6, 2}, 4);
    CHECK(cxr_test::max_abs_diff(matmul(matmul(a, identity(6)), b), matmul(a, b)) <= 1e-5);
  }

  TEST_CASE("matmul shape mismatch names both shapes") {
    try {
      matmul(Tensor({2, 3}), Tensor({4, 5}));
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      const std::string what = e.what();
      CHECK(what.find("[2,3]") != std::string::npos);
      CHECK(what.find("[4,5]") != std::string::npos);
    }
  }

  TEST_CASE("gemm transposes agree with plain matmul") {
    const Tensor a = random_tensor({6, 5}, 11), b = random_tensor({5, 7}, 12);
    const Tensor ref = triple_loop(a, b);
    const Tensor at = transpose2d(a), bt = transpose2d(b);
    Tensor c({6, 7});
    gemm<float>(6, 7, 5, at.ptr(), 6, true, bt.ptr(), 5, true, c.ptr(), 7, false);
    CHECK(cxr_test::max_abs_diff(c, ref) <= 1e-5);
    gemm<float>(6, 7, 5, a.ptr(), 5, false, b.ptr(), 7, false, c.ptr(), 7, true);
    CHECK(cxr_test::max_abs_diff(c, scale(ref, 2.0f)) <= 1e-5);
  }

  TEST_CASE("elementwise") {
    const Tensor x({3}, std::vector<float>{-1, 0, 2});
    CHECK(relu(x) == Tensor({3}, std::vector<float>{0, 0, 2}));
    const Tensor a = random_tensor({4, 4}, 5);
    CHECK(add(a, Tensor({4, 4})) == a);
    CHECK(elementwise(Elementwise::kAdd, a, 0.0f) == a);
    const Tensor p = random_tensor({50}, 6, 0.1, 5.0);
    const Tensor back = elementwise(Elementwise::kLog, elementwise(Elementwise::kExp, p));
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(back[i] - p[i]) <= 1e-5 * std::max(1.0f, p[i]));
    CHECK_THROWS_AS(elementwise(Elementwise::kLog, Tensor({2}, std::vector<float>{1, 0})), DomainError);
    CHECK_THROWS_AS(elementwise(Elementwise::kLog, Tensor({1}, std::vector<float>{-2})), DomainError);
    CHECK_THROWS_AS(add(Tensor({2, 3}), Tensor({3, 2})), DimensionError);
    const Tensor m = mul(Tensor({2}, std::vector<float>{2, 3}), Tensor({2}, std::vector<float>{4, 5}));
    CHECK(m == Tensor({2}, std::vector<float>{8, 15}));
  }

  TEST_CASE("reduce") {
    const Tensor c({3, 4}, 2.5f);
    const Tensor mean = reduce(Reduction::kMean, c, 1);
    CHECK(mean.shape() == Shape{3});
    for (float v : mean.data()) CHECK(v == doctest::Approx(2.5));
    CHECK(reduce(Reduction::kArgmax, Tensor({3}, std::vector<float>{0.2f, 0.5f, 0.3f}), 0)[0] == 1.0f);
    CHECK(reduce(Reduction::kArgmax, Tensor({3}, std::vector<float>{0.7f, 0.1f, 0.7f}), 0)[0] == 0.0f);

    const Tensor r = random_tensor({4, 3}, 7);
    const Tensor s = reduce(Reduction::kSum, r, 0);
    REQUIRE(s.shape() == Shape{3});
    for (std::size_t j = 0; j < 3; ++j) {
      double col = 0;
      for (std::size_t i = 0; i < 4; ++i) col += r.at({i, j});
      CHECK(s[j] == doctest::Approx(col).epsilon(1e-6));
    }
    const Tensor mx = reduce(Reduction::kMax, r, 1);
    for (std::size_t i = 0; i < 4; ++i) {
      float best = r.at({i, 0});
      for (std::size_t j = 1; j < 3; ++j) best = std::max(best, r.at({i, j}));
      CHECK(mx[i] == best);
    }
    CHECK_THROWS_AS(reduce(Reduction::kSum, r, 2), DimensionError);
  }

  TEST_CASE("reshape and transpose") {
    const Tensor a({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    const Tensor flat = reshape(a, {6});
    CHECK(std::vector<float>(flat.data().begin(), flat.data().end()) == std::vector<float>{1, 2, 3, 4, 5, 6});
    const Tensor t = transpose2d(a);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.at({0, 1}) == 4.0f);
    CHECK(transpose2d(t) == a);
    CHECK(reshape(Tensor({1, 128, 9, 9}), {1, 10368}).shape() == Shape{1, 10368});
    CHECK_THROWS_AS(reshape(a, {4}), DimensionError);
  }

  TEST_CASE("operations do not mutate inputs") {
    const Tensor a = random_tensor({3, 3}, 8), b = random_tensor({3, 3}, 9);
    const Tensor a0 = a, b0 = b;
    (void)matmul(a, b);
    (void)add(a, b);
    (void)relu(a);
    (void)reduce(Reduction::kSum, a, 0);
    (void)transpose2d(a);
    CHECK(a == a0);
    CHECK(b == b0);
  }

  TEST_CASE("results are finite and reproducible") {
    const Tensor a = random_tensor({20, 30}, 21), b = random_tensor({30, 10}, 22);
    const Tensor c1 = matmul(a, b), c2 = matmul(a, b);
    CHECK(c1 == c2);
    CHECK(c1.all_finite());
  }
}
