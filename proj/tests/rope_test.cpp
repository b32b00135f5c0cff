#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "gali/analysis.hpp"
#include "gali/rope.hpp"
#include "test_util.hpp"

namespace gali {
namespace {

using testing::random_matrix;

// Lanes j and j + d/2 form the complex number x_j + i x_{j+d/2}.
double complex_pairs_logit(std::span<const double> q, std::int64_t pq, std::span<const double> k,
                           std::int64_t pk, const RopeParams& params) {
  const std::size_t half = params.head_dim / 2;
  double acc = 0.0;
  for (std::size_t j = 0; j < half; ++j) {
    const std::complex<double> qc(q[j], q[j + half]);
    const std::complex<double> kc(k[j], k[j + half]);
    const auto rq = qc * std::polar(1.0, static_cast<double>(pq) * params.theta[j]);
    const auto rk = kc * std::polar(1.0, static_cast<double>(pk) * params.theta[j]);
    acc += (rq * std::conj(rk)).real();
  }
  return acc / std::sqrt(static_cast<double>(params.head_dim));
}

TEST(RopeTheta, Examples) {
  const auto p4 = rope_theta(4, 10000.0);
  ASSERT_EQ(p4.theta.size(), 2u);
  EXPECT_EQ(p4.theta[0], 1.0);
  EXPECT_NEAR(p4.theta[1], 0.01, 1e-17);

  EXPECT_EQ(rope_theta(2, 3.0).theta, std::vector<double>{1.0});

  const auto p8 = rope_theta(8, 10000.0);
  const double want[] = {1.0, 1e-1, 1e-2, 1e-3};
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(p8.theta[j], want[j], 1e-16);
}

TEST(RopeTheta, RejectsOddAndZeroDims) {
  EXPECT_THROW(rope_theta(5), Error);
  EXPECT_THROW(rope_theta(0), Error);
}

TEST(RotaryTables, ZeroPositionIsIdentity) {
  const auto params = rope_theta(8);
  const std::vector<double> pos{0.0};
  const auto t = rotary_tables(pos, params);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_EQ(t.cos(0, c), 1.0);
    EXPECT_EQ(t.sin(0, c), 0.0);
  }
}

TEST(RotaryTables, SingleFrequencyIsDuplicated) {
  const auto params = rope_theta(2);
  const std::vector<double> pos{2.75};
  const auto t = rotary_tables(pos, params);
  EXPECT_EQ(t.cos(0, 0), std::cos(2.75));
  EXPECT_EQ(t.cos(0, 1), std::cos(2.75));
  EXPECT_EQ(t.sin(0, 0), std::sin(2.75));
  EXPECT_EQ(t.sin(0, 1), std::sin(2.75));
}

TEST(RotaryTables, MatchDirectTrig) {
  const auto params = rope_theta(4);
  const std::vector<double> pos{0, 1, 2};
  const auto t = rotary_tables(pos, params);
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t c = 0; c < 4; ++c) {
      const double angle = pos[m] * std::pow(10000.0, -2.0 * static_cast<double>(c % 2) / 4.0);
      EXPECT_NEAR(t.cos(m, c), std::cos(angle), 1e-15);
      EXPECT_NEAR(t.sin(m, c), std::sin(angle), 1e-15);
    }
}

TEST(RotaryTables, IntegerOverloadAgreesWithDouble) {
  const auto params = rope_theta(16);
  const std::vector<std::int64_t> ip{0, 3, 70, 1023};
  const std::vector<double> dp{0, 3, 70, 1023};
  const auto a = rotary_tables(ip, params);
  const auto b = rotary_tables(dp, params);
  EXPECT_EQ(a.cos, b.cos);
  EXPECT_EQ(a.sin, b.sin);
}

TEST(ApplyRotary, PositionZeroLeavesInputUnchanged) {
  const Matrix x = random_matrix(1, 8, 11);
  const std::vector<double> pos{0.0};
  EXPECT_EQ(apply_rotary(x, rotary_tables(pos, rope_theta(8))), x);
}

TEST(ApplyRotary, QuarterTurnInThePlane) {
  const std::vector<double> pos{std::numbers::pi / 2};
  const Matrix y = apply_rotary(Matrix::from_rows({{1.0, 0.0}}), rotary_tables(pos, rope_theta(2)));
  EXPECT_NEAR(y(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(y(0, 1), 1.0, 1e-12);
}

TEST(ApplyRotary, PreservesRowNorms) {
  const auto params = rope_theta(32);
  const Matrix x = random_matrix(50, 32, 12);
  std::vector<double> pos(50);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = 13.37 * static_cast<double>(i);
  const Matrix y = apply_rotary(x, rotary_tables(pos, params));
  for (std::size_t r = 0; r < 50; ++r) {
    double nx = 0.0, ny = 0.0;
    for (std::size_t c = 0; c < 32; ++c) {
      nx += x(r, c) * x(r, c);
      ny += y(r, c) * y(r, c);
    }
    EXPECT_NEAR(std::sqrt(nx), std::sqrt(ny), 1e-12);
  }
}

TEST(ApplyRotary, DimensionMismatchRejected) {
  const std::vector<double> pos{0.0, 1.0};
  const auto t = rotary_tables(pos, rope_theta(4));
  EXPECT_THROW(apply_rotary(Matrix(3, 4), t), Error);
  EXPECT_THROW(apply_rotary(Matrix(2, 6), t), Error);
}

TEST(ApplyRotary, ParallelMatchesSerialBitwise) {
  const auto params = rope_theta(16);
  const Matrix x = random_matrix(97, 16, 13);
  std::vector<double> pos(97);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = 0.5 * static_cast<double>(i);
  const auto t = rotary_tables(pos, params);
  EXPECT_TRUE(testing::bitwise_equal(apply_rotary(x, t), par::apply_rotary(x, t)));
}

TEST(ExactLogits, ZeroDistanceIsPlainDotProduct) {
  const auto params = rope_theta(8);
  const Matrix q = random_matrix(1, 8, 14, 0);
  const Matrix k = random_matrix(1, 8, 14, 1);
  const std::vector<std::int64_t> pos{41};
  double dot = 0.0;
  for (std::size_t c = 0; c < 8; ++c) dot += q(0, c) * k(0, c);
  EXPECT_NEAR(exact_logits(q, k, pos, params)(0, 0), dot / std::sqrt(8.0), 1e-12);
}

TEST(ExactLogits, InvariantUnderPositionShift) {
  const auto params = rope_theta(16);
  const Matrix q = random_matrix(12, 16, 15, 0);
  const Matrix k = random_matrix(12, 16, 15, 1);
  auto pos = iota_positions(12);
  const Matrix base = exact_logits(q, k, pos, params);
  for (auto& p : pos) p += 17;
  const Matrix shifted = exact_logits(q, k, pos, params);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR(base.data()[i], shifted.data()[i], 1e-9);
  }
}

TEST(ExactLogits, MatchesComplexPairsOracle) {
  const auto params = rope_theta(16);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix q = random_matrix(30, 16, seed, 0);
    const Matrix k = random_matrix(30, 16, seed, 1);
    const auto pos = iota_positions(30);
    const Matrix got = exact_logits(q, k, pos, params);
    for (std::size_t m = 0; m < 30; ++m)
      for (std::size_t n = 0; n < 30; ++n) {
        EXPECT_NEAR(got(m, n), complex_pairs_logit(q.row(m), pos[m], k.row(n), pos[n], params),
                    1e-9);
      }
  }
}

TEST(ExactLogits, QuerySpanUsesTrailingPositions) {
  const auto params = rope_theta(8);
  const Matrix q_all = random_matrix(10, 8, 16, 0);
  const Matrix k = random_matrix(10, 8, 16, 1);
  const auto pos = iota_positions(10);
  const Matrix full = exact_logits(q_all, k, pos, params);
  const Matrix tail = exact_logits(q_all.slice_rows(7, 3), k, pos, params);
  ASSERT_EQ(tail.rows(), 3u);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(tail(r, c), full(r + 7, c));
}

TEST(ExactLogits, DimensionMismatchRejected) {
  const auto params = rope_theta(8);
  const auto pos = iota_positions(4);
  EXPECT_THROW(exact_logits(Matrix(2, 8), Matrix(4, 6), pos, params), Error);
  EXPECT_THROW(exact_logits(Matrix(5, 8), Matrix(4, 8), pos, params), Error);
  EXPECT_THROW(exact_logits(Matrix(2, 8), Matrix(3, 8), pos, params), Error);
}

TEST(DecayCurve, StartsAtPlainDotProductAndPeaksThere) {
  const auto params = rope_theta(64);
  const std::vector<double> ones(64, 1.0);
  const auto s = decay_curve(ones, ones, params, 819);
  ASSERT_EQ(s.logits.size(), 820u);
  ASSERT_EQ(s.distances.front(), 0);
  EXPECT_NEAR(s.logits[0], 64.0 / 8.0, 1e-12);
  for (std::size_t r = 1; r < s.logits.size(); ++r) EXPECT_LT(std::abs(s.logits[r]), s.logits[0]);
}

TEST(DecayCurve, AllOnesMatchesCosineSum) {
  const auto params = rope_theta(64);
  const std::vector<double> ones(64, 1.0);
  const auto s = decay_curve(ones, ones, params, 200);
  for (std::size_t r = 0; r <= 200; ++r) {
    double sum = 0.0;
    for (double th : params.theta) sum += 2.0 * std::cos(static_cast<double>(r) * th);
    EXPECT_NEAR(s.logits[r], sum / 8.0, 1e-11) << "r=" << r;
  }
}

TEST(DecayCurve, Deterministic) {
  const auto params = rope_theta(32);
  const Matrix q = random_matrix(1, 32, 17, 0);
  const Matrix k = random_matrix(1, 32, 17, 1);
  const auto a = decay_curve(q.row(0), k.row(0), params, 300);
  const auto b = decay_curve(q.row(0), k.row(0), params, 300);
  EXPECT_TRUE(testing::bitwise_equal(a.logits, b.logits));
}

TEST(DecayCurve, WindowedMaxima) {
  const std::vector<double> v{1, -5, 2, 0.5, -0.25, 3, 9};
  EXPECT_EQ(windowed_abs_max(v, 3), (std::vector<double>{5, 3, 9}));
  EXPECT_THROW(windowed_abs_max(v, 0), Error);
}

}  // namespace
}  // namespace gali
