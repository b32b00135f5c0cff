#include "gali/rope.hpp"

#include <cmath>
#include <string>

#include "gali/core_math.hpp"

namespace gali {

RopeParams rope_theta(std::size_t head_dim, double base) {
  if (head_dim < 2 || head_dim % 2 != 0) {
    throw Error("rope_theta: head_dim must be even and >= 2, got " + std::to_string(head_dim));
  }
  if (!(base > 0.0)) throw Error("rope_theta: base must be positive");
  RopeParams p{head_dim, base, std::vector<double>(head_dim / 2)};
  for (std::size_t j = 0; j < head_dim / 2; ++j) {
    p.theta[j] = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
  }
  return p;
}

RotaryTables rotary_tables(std::span<const double> positions, const RopeParams& params) {
  const std::size_t d = params.head_dim;
  const std::size_t half = d / 2;
  RotaryTables t{{positions.begin(), positions.end()}, Matrix(positions.size(), d),
                 Matrix(positions.size(), d)};
  for (std::size_t p = 0; p < positions.size(); ++p) {
    if (!std::isfinite(positions[p])) throw Error("rotary_tables: non-finite position");
    for (std::size_t j = 0; j < half; ++j) {
      const double angle = positions[p] * params.theta[j];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      t.cos(p, j) = c;
      t.cos(p, j + half) = c;
      t.sin(p, j) = s;
      t.sin(p, j + half) = s;
    }
  }
  return t;
}

RotaryTables rotary_tables(std::span<const std::int64_t> positions, const RopeParams& params) {
  std::vector<double> as_double(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    as_double[i] = static_cast<double>(positions[i]);
  }
  return rotary_tables(as_double, params);
}

namespace {

void check_rotary(const Matrix& x, const RotaryTables& tables) {
  if (x.cols() != tables.cos.cols()) {
    throw Error("apply_rotary: x has " + std::to_string(x.cols()) + " columns, tables have " +
                std::to_string(tables.cos.cols()));
  }
  if (x.rows() != tables.cos.rows()) {
    throw Error("apply_rotary: x has " + std::to_string(x.rows()) + " rows, tables cover " +
                std::to_string(tables.cos.rows()) + " positions");
  }
}

void rotate_row(const Matrix& x, const RotaryTables& t, std::size_t m, Matrix& out) {
  const std::size_t half = x.cols() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    out(m, i) = x(m, i) * t.cos(m, i) + (-x(m, i + half)) * t.sin(m, i);
    out(m, i + half) = x(m, i + half) * t.cos(m, i + half) + x(m, i) * t.sin(m, i + half);
  }
}

void check_logit_inputs(const Matrix& q, const Matrix& k, std::size_t n_positions,
                        const RopeParams& params) {
  if (q.cols() != params.head_dim || k.cols() != params.head_dim) {
    throw Error("logits: q/k columns (" + std::to_string(q.cols()) + ", " +
                std::to_string(k.cols()) + ") != head_dim " + std::to_string(params.head_dim));
  }
  if (n_positions != k.rows()) {
    throw Error("logits: " + std::to_string(n_positions) + " positions for " +
                std::to_string(k.rows()) + " keys");
  }
  if (q.rows() > k.rows()) throw Error("logits: more queries than keys");
}

template <typename Pos>
Matrix logits_at(const Matrix& q, const Matrix& k, std::span<const Pos> positions,
                 const RopeParams& params) {
  check_logit_inputs(q, k, positions.size(), params);
  const auto key_tables = rotary_tables(positions, params);
  const auto query_tables = rotary_tables(positions.subspan(k.rows() - q.rows()), params);
  return rotated_scores(par::apply_rotary(q, query_tables), par::apply_rotary(k, key_tables));
}

}  // namespace

Matrix apply_rotary(const Matrix& x, const RotaryTables& tables) {
  check_rotary(x, tables);
  Matrix out(x.rows(), x.cols());
  for (std::size_t m = 0; m < x.rows(); ++m) rotate_row(x, tables, m, out);
  return out;
}

namespace par {
Matrix apply_rotary(const Matrix& x, const RotaryTables& tables) {
  check_rotary(x, tables);
  Matrix out(x.rows(), x.cols());
  const auto rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t m = 0; m < rows; ++m) rotate_row(x, tables, static_cast<std::size_t>(m), out);
  return out;
}
}  // namespace par

Matrix rotated_scores(const Matrix& q_rot, const Matrix& k_rot) {
  return par::scores(q_rot, k_rot, std::sqrt(static_cast<double>(q_rot.cols())));
}

Matrix exact_logits(const Matrix& q, const Matrix& k, std::span<const std::int64_t> positions,
                    const RopeParams& params) {
  return logits_at(q, k, positions, params);
}

Matrix rotary_logits(const Matrix& q, const Matrix& k, std::span<const double> positions,
                     const RopeParams& params) {
  return logits_at(q, k, positions, params);
}

std::vector<std::int64_t> iota_positions(std::size_t n) {
  std::vector<std::int64_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::int64_t>(i);
  return p;
}

}  // namespace gali
