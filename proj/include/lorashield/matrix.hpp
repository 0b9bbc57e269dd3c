// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstring>
#include <string>

#include <Eigen/Core>

#include "lorashield/error.hpp"
#include "lorashield/tensor_map.hpp"

namespace lorashield {

// Row-major so that tensor buffers map onto matrices without reordering.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

namespace detail {

template <typename Storage, typename T>
void widen_into(const Tensor& tensor, Mat<T>& out) {
  const auto count = static_cast<Eigen::Index>(tensor.numel());
  for (Eigen::Index i = 0; i < count; ++i) {
    Storage value;
    std::memcpy(&value, tensor.data.data() + i * sizeof(Storage), sizeof(Storage));
    out.data()[i] = static_cast<T>(static_cast<double>(value));
  }
}

template <typename Storage, typename T>
void narrow_into(const Mat<T>& mat, Tensor& out) {
  out.data.resize(static_cast<std::size_t>(mat.size()) * sizeof(Storage));
  for (Eigen::Index i = 0; i < mat.size(); ++i) {
    const auto value = static_cast<Storage>(static_cast<double>(mat.data()[i]));
    std::memcpy(out.data.data() + i * sizeof(Storage), &value, sizeof(Storage));
  }
}

}  // namespace detail

/// Views a rank-0, 1 or 2 tensor as a matrix. Rank-1 tensors become a
/// single row; scalars become 1x1. F16 data is widened.
template <typename T>
Mat<T> to_matrix(const Tensor& tensor) {
  Eigen::Index rows = 1;
  Eigen::Index cols = 1;
  if (tensor.shape.size() == 1) {
    cols = static_cast<Eigen::Index>(tensor.shape[0]);
  } else if (tensor.shape.size() == 2) {
    rows = static_cast<Eigen::Index>(tensor.shape[0]);
    cols = static_cast<Eigen::Index>(tensor.shape[1]);
  } else if (!tensor.shape.empty()) {
    fail(ErrorCode::kShapeMismatch, "expected a tensor of rank <= 2, got rank " + std::to_string(tensor.shape.size()));
  }
  Mat<T> out(rows, cols);
  switch (tensor.dtype) {
    case Dtype::kF16: detail::widen_into<Eigen::half>(tensor, out); break;
    case Dtype::kF32: detail::widen_into<float>(tensor, out); break;
    case Dtype::kF64: detail::widen_into<double>(tensor, out); break;
  }
  return out;
}

template <typename T, typename Derived>
Tensor to_tensor(const Eigen::MatrixBase<Derived>& expr, Dtype dtype) {
  const Mat<T> mat = expr.template cast<T>();
  Tensor out;
  out.dtype = dtype;
  out.shape = {static_cast<std::uint64_t>(mat.rows()), static_cast<std::uint64_t>(mat.cols())};
  switch (dtype) {
    case Dtype::kF16: detail::narrow_into<Eigen::half>(mat, out); break;
    case Dtype::kF32: detail::narrow_into<float>(mat, out); break;
    case Dtype::kF64: detail::narrow_into<double>(mat, out); break;
  }
  return out;
}

inline Tensor scalar_tensor(double value, Dtype dtype) {
  Mat<double> one(1, 1);
  one(0, 0) = value;
  Tensor out = to_tensor<double>(one, dtype);
  out.shape.clear();
  return out;
}

inline double to_scalar(const Tensor& tensor) {
  if (tensor.numel() != 1) fail(ErrorCode::kShapeMismatch, "expected a single-element tensor");
  return to_matrix<double>(tensor)(0, 0);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace lorashield
