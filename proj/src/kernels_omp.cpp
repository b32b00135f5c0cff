#include "gali/core_math.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gali::par {

Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::check_matmul(a, b);
  Matrix out(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    detail::matmul_row(a, b, static_cast<std::size_t>(i), out);
  }
  return out;
}

Matrix scores(const Matrix& a, const Matrix& b, double divisor) {
  detail::check_scores(a, b);
  Matrix out(a.rows(), b.rows());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    detail::scores_row(a, b, divisor, static_cast<std::size_t>(i), out);
  }
  return out;
}

Matrix masked_softmax(const Matrix& logits, const CausalMask& mask) {
  detail::check_softmax(logits, mask);
  Matrix out(logits.rows(), logits.cols());
  const auto rows = static_cast<std::ptrdiff_t>(logits.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    detail::softmax_row(logits, mask, static_cast<std::size_t>(i), out);
  }
  return out;
}

Matrix rms_norm_rows(const Matrix& x, std::span<const double> gamma, double eps) {
  detail::check_rms(x.cols(), gamma.size(), eps);
  Matrix out(x.rows(), x.cols());
  const auto rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto i = static_cast<std::size_t>(r);
    detail::rms_row(x.row(i), gamma, eps, out.row(i));
  }
  return out;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace gali::par
