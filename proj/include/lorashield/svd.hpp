// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "lorashield/error.hpp"
#include "lorashield/matrix.hpp"

namespace lorashield {

/// Top-r singular triplets of an m x n matrix.
template <typename T>
struct TruncatedSvd {
  Mat<T> u;       // m x r, orthonormal columns
  Vec<T> sigma;   // r, descending, non-negative
  Mat<T> v;       // n x r, orthonormal columns

  Eigen::Index rank() const { return sigma.size(); }

  Mat<T> reconstruct() const { return u * sigma.asDiagonal() * v.transpose(); }
};

/// Truncated SVD with a deterministic sign convention: in every pair
/// (u_i, v_i) the largest-magnitude entry of u_i is non-negative.
template <typename T>
TruncatedSvd<T> svd_truncate(const Mat<T>& m, Eigen::Index r) {
  if (r < 1 || r > std::min(m.rows(), m.cols())) {
    fail(ErrorCode::kRankTooLarge, "rank " + std::to_string(r) + " invalid for a " + shape_string(m.rows(), m.cols()) +
                                       " matrix");
  }
  if (!m.allFinite()) fail(ErrorCode::kNonFiniteInput, "svd input has non-finite entries");

  using Dense = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::BDCSVD<Dense> svd(Dense(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) fail(ErrorCode::kNoConvergence, "svd did not converge");

  TruncatedSvd<T> out;
  out.u = svd.matrixU().leftCols(r);
  out.v = svd.matrixV().leftCols(r);
  out.sigma = svd.singularValues().head(r).cwiseMax(T(0));
  for (Eigen::Index i = 0; i < r; ++i) {
    Eigen::Index pivot = 0;
    out.u.col(i).cwiseAbs().maxCoeff(&pivot);
    if (out.u(pivot, i) < T(0)) {
      out.u.col(i) *= T(-1);
      out.v.col(i) *= T(-1);
    }
  }
  return out;
}

template <typename T>
struct LowRankFactors {
  Mat<T> b;  // m x r
  Mat<T> a;  // r x n
};

/// Balanced split U sqrt(S), sqrt(S) V^T.
template <typename T>
LowRankFactors<T> sqrt_split(const TruncatedSvd<T>& svd) {
  const Vec<T> root = svd.sigma.cwiseSqrt();
  LowRankFactors<T> out;
  out.b = svd.u * root.asDiagonal();
  out.a = root.asDiagonal() * svd.v.transpose();
  return out;
}

}  // namespace lorashield
