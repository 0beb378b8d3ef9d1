#include <catch2/catch_amalgamated.hpp>

#include "lvg/tensor.hpp"

using namespace lvg;

TEST_CASE("matmul against hand values", "[tensor]") {
  Tensor2<double> a(2, 3);
  a.data = {1, 2, 3, 4, 5, 6};
  Tensor2<double> b(3, 2);
  b.data = {7, 8, 9, 10, 11, 12};
  Tensor2<double> c = matmul(a, b);
  REQUIRE(c.rows == 2);
  REQUIRE(c.cols == 2);
  CHECK(c(0, 0) == 58);
  CHECK(c(0, 1) == 64);
  CHECK(c(1, 0) == 139);
  CHECK(c(1, 1) == 154);

  Tensor2<double> c2 = matmul_bt(a, b.transposed());
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c2.data[i] == Catch::Approx(c.data[i]));
}

TEST_CASE("matmul rejects mismatched inner dims", "[tensor]") {
  Tensor2<double> a(2, 3), b(2, 2);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(matmul_bt(a, b), ShapeError);
}

TEST_CASE("add_atb accumulates outer products", "[tensor]") {
  Tensor2<double> a(2, 2);  // samples x in
  a.data = {1, 2, 3, 4};
  Tensor2<double> b(2, 3);  // samples x out
  b.data = {5, 6, 7, 8, 9, 10};
  Tensor2<double> c(2, 3);
  add_atb(a, b, c);
  // c[i][j] = sum_n a[n][i] b[n][j]
  CHECK(c(0, 0) == 1 * 5 + 3 * 8);
  CHECK(c(1, 2) == 2 * 7 + 4 * 10);
}

TEST_CASE("invert_square recovers identity", "[tensor]") {
  Rng rng(7);
  const std::size_t n = 12;
  Tensor2<double> m = random_normal<double>(n, n, rng);
  for (std::size_t i = 0; i < n; ++i) m(i, i) += 4.0;  // keep it well away from singular
  Tensor2<double> inv = invert_square(m);
  Tensor2<double> prod = matmul(m, inv);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      CHECK(std::abs(prod(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
}

TEST_CASE("invert_square rejects singular input", "[tensor]") {
  Tensor2<double> m(2, 2);
  m.data = {1, 2, 2, 4};
  CHECK_THROWS_AS(invert_square(m), ShapeError);
}

TEST_CASE("float instantiation works for the core ops", "[tensor]") {
  Rng rng(3);
  Tensor2<float> a = random_normal<float>(4, 5, rng);
  Tensor2<float> b = random_normal<float>(5, 3, rng);
  Tensor2<float> c = matmul(a, b);
  REQUIRE(c.rows == 4);
  REQUIRE(c.cols == 3);
  CHECK(all_finite(c));
}
