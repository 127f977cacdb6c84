#pragma once

#include <cstddef>

namespace flop::kernels {

/// C[i][j] += sum_k A[i][k] * B[k][j] for an m x n block, row-major with
/// leading dimensions lda/ldb/ldc. For every output element the products
/// are added in ascending k, one at a time, so the result is bit-identical
/// to the textbook triple loop started from the incoming C value. When
/// uses_fma() is true each step is a single fused multiply-add,
/// c = fma(a, b, c), instead of c = c + a * b.
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k,
                     const double* a, std::size_t lda, const double* b,
                     std::size_t ldb, double* c, std::size_t ldc);

/// As gemm_accumulate with B given transposed: b points to an n x k matrix.
void gemm_accumulate_nt(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, std::size_t lda, const double* b,
                        std::size_t ldb, double* c, std::size_t ldc);

/// As gemm_accumulate with A given transposed: a points to a k x m matrix.
void gemm_accumulate_tn(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, std::size_t lda, const double* b,
                        std::size_t ldb, double* c, std::size_t ldc);

/// Whether this build's GEMM rounds each step as a fused multiply-add.
bool uses_fma() noexcept;

/// dst (cols x rows) = transpose of src (rows x cols).
void transpose(std::size_t rows, std::size_t cols, const double* src,
               double* dst);

}  // namespace flop::kernels
