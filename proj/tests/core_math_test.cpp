#include <gtest/gtest.h>

#include <cmath>

#include "gali/core_math.hpp"
#include "test_util.hpp"

namespace gali {
namespace {

using testing::bitwise_equal;
using testing::random_matrix;

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

TEST(Matmul, IdentityAndOrthogonalRows) {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Matrix::identity(2), m), m);
  EXPECT_EQ(matmul(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0}, {5}})),
            Matrix::from_rows({{0}}));
}

TEST(Matmul, MatchesTripleLoopExactly) {
  const Matrix a = random_matrix(8, 8, 1);
  const Matrix b = random_matrix(8, 8, 2);
  EXPECT_TRUE(bitwise_equal(matmul(a, b), naive_matmul(a, b)));
}

TEST(Matmul, DimensionMismatchReportsShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("2x3 * 2x3"), std::string::npos) << e.what();
  }
}

TEST(Matmul, AssociativeWithinTolerance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = random_matrix(3, 4, seed, 0);
    const Matrix b = random_matrix(4, 5, seed, 1);
    const Matrix c = random_matrix(5, 2, seed, 2);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      const double scale = std::max(1.0, std::abs(left.data()[i]));
      EXPECT_LE(std::abs(left.data()[i] - right.data()[i]) / scale, 1e-9);
    }
  }
}

TEST(MaskedSoftmax, ClosedFormCases) {
  EXPECT_EQ(masked_softmax(Matrix::from_rows({{0, 0}}), CausalMask{2, 1}),
            Matrix::from_rows({{0.5, 0.5}}));
  EXPECT_EQ(masked_softmax(Matrix::from_rows({{-123.25}}), CausalMask::square(1))(0, 0), 1.0);

  const Matrix p = masked_softmax(Matrix::from_rows({{1000, 1001}}), CausalMask{2, 1});
  const double e = std::exp(1.0);
  EXPECT_NEAR(p(0, 0), 1.0 / (1.0 + e), 1e-12);
  EXPECT_NEAR(p(0, 1), e / (1.0 + e), 1e-12);
}

TEST(MaskedSoftmax, CausalRowsNormalizeAndMaskedEntriesAreZero) {
  const Matrix logits = random_matrix(6, 6, 3);
  const Matrix p = masked_softmax(logits, CausalMask::square(6));
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      if (j > i) EXPECT_EQ(p(i, j), 0.0);
      s += p(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(MaskedSoftmax, DecodeRowsAttendOverFullKeyLength) {
  const Matrix p = masked_softmax(random_matrix(2, 5, 4), CausalMask{5, 2});
  EXPECT_GT(p(0, 3), 0.0);
  EXPECT_EQ(p(0, 4), 0.0);
  EXPECT_GT(p(1, 4), 0.0);
}

TEST(MaskedSoftmax, InvariantUnderRowShift) {
  Matrix logits = random_matrix(5, 5, 5);
  const Matrix before = masked_softmax(logits, CausalMask::square(5));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j <= i; ++j) logits(i, j) += 37.5 * static_cast<double>(i + 1);
  const Matrix after = masked_softmax(logits, CausalMask::square(5));
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_NEAR(before.data()[i], after.data()[i], 1e-12);
  }
}

TEST(MaskedSoftmax, RejectsMoreQueriesThanKeys) {
  EXPECT_THROW(masked_softmax(Matrix(3, 2), CausalMask{2, 3}), Error);
  EXPECT_THROW(masked_softmax(Matrix(2, 2), CausalMask{3, 2}), Error);
}

TEST(RmsNorm, Examples) {
  const std::vector<double> x{3, 4};
  const std::vector<double> ones{1, 1};
  const auto y = rms_norm(x, ones, 0.0);
  EXPECT_NEAR(y[0], 3.0 / std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(y[0], 0.848528137423857, 1e-12);
  EXPECT_NEAR(y[1], 1.131370849898476, 1e-12);

  const std::vector<double> c(7, 2.5);
  for (double v : rms_norm(c, std::vector<double>(7, 1.0), 0.0)) EXPECT_DOUBLE_EQ(v, 1.0);
  for (double v : rms_norm(c, std::vector<double>(7, 0.0), 0.0)) EXPECT_EQ(v, 0.0);
}

TEST(RmsNorm, ScaleInvariant) {
  const Matrix x = random_matrix(1, 9, 6);
  const std::vector<double> gamma(9, 1.3);
  const auto base = rms_norm(x.row(0), gamma, 0.0);
  for (double alpha : {0.001, 0.5, 3.0, 1e6}) {
    std::vector<double> scaled(x.row(0).begin(), x.row(0).end());
    for (double& v : scaled) v *= alpha;
    const auto y = rms_norm(scaled, gamma, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], base[i], 1e-12);
  }
}

TEST(RmsNorm, Errors) {
  EXPECT_THROW(rms_norm({}, {}, 0.0), Error);
  const std::vector<double> x{1, 2};
  const std::vector<double> g{1};
  EXPECT_THROW(rms_norm(x, g, 0.0), Error);
}

// The OpenMP kernels must reproduce the serial reference bit for bit.
TEST(ParallelKernels, MatchSerialReferenceBitwise) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix a = random_matrix(37, 19, seed, 0);
    const Matrix b = random_matrix(19, 23, seed, 1);
    const Matrix c = random_matrix(29, 19, seed, 2);
    EXPECT_TRUE(bitwise_equal(matmul(a, b), par::matmul(a, b)));
    EXPECT_TRUE(bitwise_equal(scores(a, c, 4.0), par::scores(a, c, 4.0)));
    const Matrix logits = random_matrix(11, 37, seed, 3);
    EXPECT_TRUE(bitwise_equal(masked_softmax(logits, CausalMask{37, 11}),
                              par::masked_softmax(logits, CausalMask{37, 11})));
    const std::vector<double> gamma(19, 0.75);
    EXPECT_TRUE(bitwise_equal(rms_norm_rows(a, gamma, 1e-6), par::rms_norm_rows(a, gamma, 1e-6)));
  }
}

}  // namespace
}  // namespace gali
