#pragma once

// Dense kernels. Functions in `gali` are the serial reference; `gali::par`
// holds OpenMP row-parallel versions that compute every output element with
// the same operation order, so the two agree bit for bit.

#include <span>
#include <vector>

#include "gali/matrix.hpp"

namespace gali {

Matrix matmul(const Matrix& a, const Matrix& b);

/// a · bᵀ with every entry divided by `divisor` after accumulation.
Matrix scores(const Matrix& a, const Matrix& b, double divisor = 1.0);

/// Row-wise softmax over the entries permitted by `mask`; masked entries are 0.
Matrix masked_softmax(const Matrix& logits, const CausalMask& mask);

std::vector<double> rms_norm(std::span<const double> x, std::span<const double> gamma,
                             double eps);

/// rms_norm applied to every row of `x`.
Matrix rms_norm_rows(const Matrix& x, std::span<const double> gamma, double eps);

namespace par {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix scores(const Matrix& a, const Matrix& b, double divisor = 1.0);
Matrix masked_softmax(const Matrix& logits, const CausalMask& mask);
Matrix rms_norm_rows(const Matrix& x, std::span<const double> gamma, double eps);

/// Number of threads the OpenMP runtime would use (1 when built without it).
int max_threads();

}  // namespace par

namespace detail {

void check_matmul(const Matrix& a, const Matrix& b);
void check_scores(const Matrix& a, const Matrix& b);
void check_softmax(const Matrix& logits, const CausalMask& mask);
void check_rms(std::size_t n, std::size_t gamma_n, double eps);

// Per-row bodies shared by the serial and parallel drivers.
void matmul_row(const Matrix& a, const Matrix& b, std::size_t i, Matrix& out);
void scores_row(const Matrix& a, const Matrix& b, double divisor, std::size_t i, Matrix& out);
void softmax_row(const Matrix& logits, const CausalMask& mask, std::size_t i, Matrix& out);
void rms_row(std::span<const double> x, std::span<const double> gamma, double eps,
             std::span<double> out);

}  // namespace detail
}  // namespace gali
