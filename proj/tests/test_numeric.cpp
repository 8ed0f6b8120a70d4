#include <doctest.h>

#include <cmath>

#include "cilab/errors.hpp"
#include "cilab/matrix.hpp"
#include "cilab/rng.hpp"
#include "oracles.hpp"

using namespace cilab;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("gram of orthonormal rows is the identity") {
  const Matrix k = gram(Matrix::identity(2));
  CHECK(max_abs_diff(k, Matrix::identity(2)) == 0.0);
}

TEST_CASE("gram of a single row is its squared norm") {
  Matrix x(1, 2);
  x(0, 0) = 1.0;
  x(0, 1) = 2.0;
  const Matrix k = gram(x);
  CHECK(k.rows() == 1);
  CHECK(k(0, 0) == 5.0);
}

TEST_CASE("gram matches the triple-loop oracle on seeded input") {
  RngStream rng(42);
  const Matrix x = oracle::random_matrix(6, 4, rng);
  CHECK(max_abs_diff(gram(x), oracle::gram(x)) < 1e-12);
}

TEST_CASE("gram is exactly symmetric and PSD-diagonal") {
  RngStream rng(7);
  const Matrix x = oracle::random_matrix(9, 5, rng);
  const Matrix k = gram(x);
  for (std::size_t i = 0; i < k.rows(); ++i) {
    CHECK(k(i, i) >= 0.0);
    for (std::size_t j = 0; j < k.cols(); ++j) CHECK(k(i, j) == k(j, i));
  }
}

TEST_CASE("gram rejects empty input") { CHECK_THROWS_AS(gram(Matrix()), DimensionError); }

TEST_CASE("double_center sends the all-ones matrix to zero") {
  const Matrix k(3, 3, 1.0);
  const Matrix kc = double_center(k);
  for (const double v : kc.data()) CHECK(v == 0.0);
}

TEST_CASE("double_center of the 2x2 identity") {
  const Matrix kc = double_center(Matrix::identity(2));
  CHECK(kc(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(kc(0, 1) == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(kc(1, 0) == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(kc(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("double_center matches the explicit HKH oracle") {
  RngStream rng(11);
  Matrix k = oracle::random_matrix(8, 8, rng);
  // Symmetrize, as Gram inputs are.
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = i + 1; j < 8; ++j) k(j, i) = k(i, j);
  CHECK(max_abs_diff(double_center(k), oracle::double_center(k)) < 1e-12);
}

TEST_CASE("double_center zeroes every row and column mean") {
  RngStream rng(12);
  const Matrix k = oracle::random_matrix(10, 10, rng);
  const Matrix kc = double_center(k);
  for (std::size_t i = 0; i < kc.rows(); ++i) {
    double row_sum = 0.0;
    double col_sum = 0.0;
    for (std::size_t j = 0; j < kc.cols(); ++j) {
      row_sum += kc(i, j);
      col_sum += kc(j, i);
    }
    CHECK(std::abs(row_sum / 10.0) < 1e-10);
    CHECK(std::abs(col_sum / 10.0) < 1e-10);
  }
}

TEST_CASE("double_center is idempotent") {
  RngStream rng(13);
  const Matrix k = oracle::random_matrix(7, 7, rng);
  const Matrix once = double_center(k);
  const Matrix twice = double_center(once);
  CHECK(max_abs_diff(once, twice) < 1e-10);
}

TEST_CASE("double_center rejects non-square input") {
  CHECK_THROWS_AS(double_center(Matrix(2, 3)), DimensionError);
}

TEST_CASE("matmul by the identity is the identity map") {
  RngStream rng(21);
  const Matrix b = oracle::random_matrix(4, 6, rng);
  CHECK(max_abs_diff(matmul(Matrix::identity(4), b), b) == 0.0);
}

TEST_CASE("matmul hand example") {
  Matrix a(2, 2);
  a(0, 0) = 1;
  a(0, 1) = 2;
  a(1, 0) = 3;
  a(1, 1) = 4;
  Matrix b(2, 1);
  b(0, 0) = 0;
  b(1, 0) = 1;
  const Matrix c = matmul(a, b);
  CHECK(c(0, 0) == 2.0);
  CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  RngStream rng(22);
  const Matrix a = oracle::random_matrix(5, 7, rng);
  const Matrix b = oracle::random_matrix(7, 3, rng);
  CHECK(max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST_CASE("exported operations keep entries finite") {
  RngStream rng(23);
  const Matrix x = oracle::random_matrix(12, 6, rng);
  CHECK(gram(x).all_finite());
  CHECK(double_center(gram(x)).all_finite());
  CHECK(matmul(x, oracle::random_matrix(6, 4, rng)).all_finite());
}

TEST_CASE("equal seeds reproduce the first 1e4 draws exactly") {
  RngStream a(12345);
  RngStream b(12345);
  for (int i = 0; i < 10000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform, normal, and index draws are reproducible") {
  RngStream a(99);
  RngStream b(99);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_uniform() == b.next_uniform());
    CHECK(a.next_normal() == b.next_normal());
    CHECK(a.next_index(17) == b.next_index(17));
  }
}

TEST_CASE("shuffle is a permutation and is seed-deterministic") {
  std::vector<int> v1(50), v2(50);
  for (int i = 0; i < 50; ++i) v1[i] = v2[i] = i;
  RngStream a(5);
  RngStream b(5);
  a.shuffle(v1);
  b.shuffle(v2);
  CHECK(v1 == v2);
  std::vector<int> sorted = v1;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("sample_without_replacement yields distinct valid indices") {
  RngStream rng(31);
  const auto picks = rng.sample_without_replacement(20, 8);
  CHECK(picks.size() == 8);
  std::vector<char> seen(20, 0);
  for (const std::size_t p : picks) {
    CHECK(p < 20);
    CHECK(!seen[p]);
    seen[p] = 1;
  }
  CHECK_THROWS_AS(rng.sample_without_replacement(3, 4), ParameterError);
}

TEST_CASE("derive_seed separates tags and indices") {
  CHECK(derive_seed(0, "a") != derive_seed(0, "b"));
  CHECK(derive_seed(0, "a", 0) != derive_seed(0, "a", 1));
  CHECK(derive_seed(0, "a") == derive_seed(0, "a"));
}

TEST_CASE("uniform draws stay inside their interval") {
  RngStream rng(77);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.next_uniform(-2.5, 3.5);
    CHECK(u >= -2.5);
    CHECK(u < 3.5);
  }
}
