#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "essaylens/error.hpp"

namespace essaylens {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixXd = Matrix<double>;
using Index = Eigen::Index;

/// Dense tensor of rank 0, 1 or 2 stored row-major.  Rank-1 tensors are kept
/// as 1xN rows and scalars as 1x1 so every op can work on a plain matrix.
template <typename Scalar = double>
class Tensor {
 public:
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;
  Tensor(MatrixType m) : values_(std::move(m)), rank_(2) {}  // NOLINT

  static Tensor scalar(Scalar v) {
    Tensor t(MatrixType::Constant(1, 1, v));
    t.rank_ = 0;
    return t;
  }

  static Tensor vector(std::initializer_list<Scalar> values) {
    return vector(std::vector<Scalar>(values));
  }

  static Tensor vector(const std::vector<Scalar>& values) {
    MatrixType m(1, static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Index>(i)) = values[i];
    Tensor t(std::move(m));
    t.rank_ = 1;
    return t;
  }

  static Tensor matrix(Index rows, Index cols, std::initializer_list<Scalar> values) {
    if (static_cast<Index>(values.size()) != rows * cols)
      fail(ErrorCode::shape_mismatch, "tensor data length does not match its shape");
    MatrixType m(rows, cols);
    std::copy(values.begin(), values.end(), m.data());
    return Tensor(std::move(m));
  }

  static Tensor with_rank(MatrixType m, int rank) {
    Tensor t(std::move(m));
    t.rank_ = rank;
    return t;
  }

  int rank() const { return rank_; }

  std::vector<Index> shape() const {
    switch (rank_) {
      case 0: return {};
      case 1: return {values_.size()};
      default: return {values_.rows(), values_.cols()};
    }
  }

  Index size() const { return values_.size(); }
  const MatrixType& matrix() const { return values_; }
  MatrixType& matrix() { return values_; }
  const Scalar* data() const { return values_.data(); }
  Scalar* data() { return values_.data(); }
  Scalar item() const { return values_(0, 0); }

  bool all_finite() const { return values_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>::with_rank(values_.template cast<Other>(), rank_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rank_ == b.rank_ && a.values_.rows() == b.values_.rows() &&
           a.values_.cols() == b.values_.cols() && a.values_ == b.values_;
  }

 private:
  MatrixType values_;
  int rank_ = 2;
};

}  // namespace essaylens
