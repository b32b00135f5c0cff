#include "gali/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gali {
namespace detail {

namespace {
std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}
}  // namespace

void check_matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error("matmul: dimension mismatch " + dims(a) + " * " + dims(b));
  }
}

void check_scores(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error("scores: dimension mismatch " + dims(a) + " * (" + dims(b) + ")^T");
  }
}

void check_softmax(const Matrix& logits, const CausalMask& mask) {
  if (mask.key_len != logits.cols() || mask.query_len != logits.rows()) {
    throw Error("masked_softmax: mask " + std::to_string(mask.query_len) + "x" +
                std::to_string(mask.key_len) + " does not match logits " + dims(logits));
  }
  if (logits.rows() > logits.cols()) {
    throw Error("masked_softmax: more query rows than keys (" + dims(logits) + ")");
  }
}

void check_rms(std::size_t n, std::size_t gamma_n, double eps) {
  if (n == 0) throw Error("rms_norm: zero-length vector");
  if (gamma_n != n) {
    throw Error("rms_norm: gamma length " + std::to_string(gamma_n) + " != " + std::to_string(n));
  }
  if (!(eps >= 0.0)) throw Error("rms_norm: eps must be >= 0");
}

void matmul_row(const Matrix& a, const Matrix& b, std::size_t i, Matrix& out) {
  const std::size_t inner = a.cols();
  for (std::size_t j = 0; j < b.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < inner; ++k) acc += a(i, k) * b(k, j);
    out(i, j) = acc;
  }
}

void scores_row(const Matrix& a, const Matrix& b, double divisor, std::size_t i, Matrix& out) {
  const auto ar = a.row(i);
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const auto br = b.row(j);
    double acc = 0.0;
    for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
    out(i, j) = acc / divisor;
  }
}

void softmax_row(const Matrix& logits, const CausalMask& mask, std::size_t i, Matrix& out) {
  const std::size_t n = logits.cols();
  const std::size_t last = i + mask.offset();  // last permitted key
  double max = logits(i, 0);
  for (std::size_t j = 1; j <= last; ++j) max = std::max(max, logits(i, j));
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = mask.permitted(i, j) ? logits(i, j) : logits(i, j) + kMaskSentinel;
    const double e = mask.permitted(i, j) ? std::exp(v - max) : 0.0;
    out(i, j) = e;
    sum += e;
  }
  for (std::size_t j = 0; j < n; ++j) out(i, j) /= sum;
}

void rms_row(std::span<const double> x, std::span<const double> gamma, double eps,
             std::span<double> out) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double denom = std::sqrt(sq / static_cast<double>(x.size()) + eps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gamma[i] * x[i] / denom;
}

}  // namespace detail

Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::check_matmul(a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) detail::matmul_row(a, b, i, out);
  return out;
}

Matrix scores(const Matrix& a, const Matrix& b, double divisor) {
  detail::check_scores(a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) detail::scores_row(a, b, divisor, i, out);
  return out;
}

Matrix masked_softmax(const Matrix& logits, const CausalMask& mask) {
  detail::check_softmax(logits, mask);
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) detail::softmax_row(logits, mask, i, out);
  return out;
}

std::vector<double> rms_norm(std::span<const double> x, std::span<const double> gamma,
                             double eps) {
  detail::check_rms(x.size(), gamma.size(), eps);
  std::vector<double> out(x.size());
  detail::rms_row(x, gamma, eps, out);
  return out;
}

Matrix rms_norm_rows(const Matrix& x, std::span<const double> gamma, double eps) {
  detail::check_rms(x.cols(), gamma.size(), eps);
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) detail::rms_row(x.row(r), gamma, eps, out.row(r));
  return out;
}

}  // namespace gali
