#pragma once

#include <cstdint>
#include <vector>

namespace gapkit {

// C[m,n] (+)= A[m,k] * B[k,n], row-major, float32 inputs, float64 accumulation.
void gemm_f32(const float* a, const float* b, float* c, int64_t m, int64_t k,
              int64_t n, bool accumulate = false);

// C = A^T * B with A[k,m], B[k,n] row-major (accumulates in float64).
void gemm_at_b(const float* a, const float* b, float* c, int64_t k, int64_t m,
               int64_t n, bool accumulate = false);

// C = A * B^T with A[m,k], B[n,k] row-major.
void gemm_a_bt(const float* a, const float* b, float* c, int64_t m, int64_t k,
               int64_t n, bool accumulate = false);

// Eigendecomposition of a symmetric matrix (row-major, n x n) by cyclic
// Jacobi rotations. Eigenvalues sorted descending; eigenvectors returned
// as columns of `vectors` (also row-major n x n). float64 throughout.
void jacobi_eigh(std::vector<double> matrix, int n, std::vector<double>& values,
                 std::vector<double>& vectors);

}  // namespace gapkit
