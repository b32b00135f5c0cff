#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gali {

/// Thrown for every violated precondition in the library. The message names
/// the offending operation and the values involved.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error("Matrix: data length " + std::to_string(data_.size()) +
                  " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  /// Copy of rows [first, first + count).
  Matrix slice_rows(std::size_t first, std::size_t count) const;
  /// Copy of columns [first, first + count).
  Matrix slice_cols(std::size_t first, std::size_t count) const;
  /// Writes `block` into columns starting at `first`.
  void set_cols(std::size_t first, const Matrix& block);
  /// Appends the rows of `other` (column counts must agree, or this is empty).
  void append_rows(const Matrix& other);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Causal mask for a block of query rows that are the trailing `query_len`
/// tokens of a sequence of `key_len` tokens. Query row i sits at absolute
/// index `key_len - query_len + i` and may attend keys j at or before it.
struct CausalMask {
  std::size_t key_len = 0;
  std::size_t query_len = 0;

  static CausalMask square(std::size_t n) { return {n, n}; }

  std::size_t offset() const noexcept { return key_len - query_len; }
  bool permitted(std::size_t i, std::size_t j) const noexcept { return j <= i + offset(); }
};

/// Additive surrogate for -inf applied to masked logits before softmax.
inline constexpr double kMaskSentinel = -1e30;

}  // namespace gali
