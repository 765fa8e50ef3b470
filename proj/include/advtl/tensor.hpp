#pragma once

#include <Eigen/Dense>
#include <fmt/format.h>

#include <string>
#include <type_traits>
#include <vector>

#include "advtl/errors.hpp"

namespace advtl {

// Row-major dense matrix; every tensor in the library is rank <= 2 and a
// scalar is a 1x1 matrix.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

using Tensor = MatrixX<double>;
using Labels = std::vector<int>;

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return fmt::format("[{}x{}]", m.rows(), m.cols());
}

template <typename Scalar>
  requires std::is_arithmetic_v<Scalar>
constexpr Scalar sign(Scalar v) {
  return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0));
}

// Elementwise sign with sign(0) = 0.
template <typename Derived>
MatrixX<typename Derived::Scalar> sign(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  return m.unaryExpr([](Scalar v) { return sign(v); });
}

template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError(fmt::format("matmul: inner dimensions differ, {} x {}",
                                     shape_string(a), shape_string(b)));
  }
  return a * b;
}

// Exact elementwise equality; tensors of different shape compare unequal.
template <typename DerivedA, typename DerivedB>
bool exactly_equal(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace advtl
