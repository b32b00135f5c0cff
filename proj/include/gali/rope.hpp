#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gali/matrix.hpp"

namespace gali {

/// Rotary embedding parameters: theta_j = base^(-2j/d) for j = 0..d/2-1.
struct RopeParams {
  std::size_t head_dim = 0;
  double base = 10000.0;
  std::vector<double> theta;
};

RopeParams rope_theta(std::size_t head_dim, double base = 10000.0);

/// cos/sin per position in rotate-half layout: lane j and lane j + d/2 both
/// carry frequency theta_j.
struct RotaryTables {
  std::vector<double> positions;
  Matrix cos;
  Matrix sin;
};

RotaryTables rotary_tables(std::span<const double> positions, const RopeParams& params);
RotaryTables rotary_tables(std::span<const std::int64_t> positions, const RopeParams& params);

/// Row m becomes x_m * cos_m + rotate_half(x_m) * sin_m.
Matrix apply_rotary(const Matrix& x, const RotaryTables& tables);

namespace par {
Matrix apply_rotary(const Matrix& x, const RotaryTables& tables);
}

/// Pre-softmax logits ⟨R(pos_m) q_m, R(pos_n) k_n⟩ / sqrt(d).
///
/// `positions` covers every key row; the query rows are the trailing
/// q.rows() of those positions (a query span at the end of the sequence).
Matrix exact_logits(const Matrix& q, const Matrix& k, std::span<const std::int64_t> positions,
                    const RopeParams& params);

/// Same computation at real-valued positions (used by position interpolation).
Matrix rotary_logits(const Matrix& q, const Matrix& k, std::span<const double> positions,
                     const RopeParams& params);

/// Logits from already-rotated queries and keys; the one place the 1/sqrt(d)
/// scale is applied so every logit producer shares it.
Matrix rotated_scores(const Matrix& q_rot, const Matrix& k_rot);

/// Integer positions 0..n-1.
std::vector<std::int64_t> iota_positions(std::size_t n);

}  // namespace gali
