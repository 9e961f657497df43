#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace kplab::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  Map(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  Map(c, M, N).noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  Map(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
}

}  // namespace kplab::detail
