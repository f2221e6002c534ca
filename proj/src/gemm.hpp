#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace spatialops::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m, n] += A[m, k] * B[k, n], all dense row-major.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Index = Eigen::Index;
  Eigen::Map<const RowMatrix<T>> A(a, static_cast<Index>(m), static_cast<Index>(k));
  Eigen::Map<const RowMatrix<T>> B(b, static_cast<Index>(k), static_cast<Index>(n));
  Eigen::Map<RowMatrix<T>> C(c, static_cast<Index>(m), static_cast<Index>(n));
  C.noalias() += A * B;
}

// C[m, n] += A[k, m]^T * B[k, n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Index = Eigen::Index;
  Eigen::Map<const RowMatrix<T>> A(a, static_cast<Index>(k), static_cast<Index>(m));
  Eigen::Map<const RowMatrix<T>> B(b, static_cast<Index>(k), static_cast<Index>(n));
  Eigen::Map<RowMatrix<T>> C(c, static_cast<Index>(m), static_cast<Index>(n));
  C.noalias() += A.transpose() * B;
}

// C[m, n] += A[m, k] * B[n, k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  using Index = Eigen::Index;
  Eigen::Map<const RowMatrix<T>> A(a, static_cast<Index>(m), static_cast<Index>(k));
  Eigen::Map<const RowMatrix<T>> B(b, static_cast<Index>(n), static_cast<Index>(k));
  Eigen::Map<RowMatrix<T>> C(c, static_cast<Index>(m), static_cast<Index>(n));
  C.noalias() += A * B.transpose();
}

}  // namespace spatialops::detail
