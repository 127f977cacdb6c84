#include "flop/gemm.hpp"

#include <algorithm>
#include <vector>

namespace flop::kernels {

namespace {

// Register tile of kRowTile x (kVecs * kLanes). Each output still
// accumulates its k terms in ascending order starting from C, so tile shape
// and packing never change the result.
#if defined(__AVX512F__)
constexpr std::size_t kLanes = 8;
constexpr std::size_t kRowTile = 8;
#elif defined(__AVX__)
constexpr std::size_t kLanes = 4;
constexpr std::size_t kRowTile = 6;
#else
constexpr std::size_t kLanes = 2;
constexpr std::size_t kRowTile = 4;
#endif
constexpr std::size_t kVecs = 2;
constexpr std::size_t kColTile = kVecs * kLanes;

typedef double Vec __attribute__((vector_size(kLanes * sizeof(double))));

inline Vec load(const double* p) {
  Vec v;
  __builtin_memcpy(&v, p, sizeof(Vec));
  return v;
}

inline void store(double* p, Vec v) { __builtin_memcpy(p, &v, sizeof(Vec)); }

// a_pack: k x kRowTile, b_pack: k x kColTile, both contiguous.
inline void tile(std::size_t k, const double* a_pack, const double* b_pack, double* c,
                 std::size_t ldc) {
  Vec acc[kRowTile][kVecs];
  for (std::size_t r = 0; r < kRowTile; ++r)
    for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] = load(c + r * ldc + v * kLanes);

  for (std::size_t p = 0; p < k; ++p) {
    Vec bv[kVecs];
    for (std::size_t v = 0; v < kVecs; ++v) bv[v] = load(b_pack + p * kColTile + v * kLanes);
    const double* av = a_pack + p * kRowTile;
    for (std::size_t r = 0; r < kRowTile; ++r) {
      const Vec ar = Vec{} + av[r];
      for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] += ar * bv[v];
    }
  }

  for (std::size_t r = 0; r < kRowTile; ++r)
    for (std::size_t v = 0; v < kVecs; ++v) store(c + r * ldc + v * kLanes, acc[r][v]);
}

}  // namespace

bool uses_fma() noexcept {
#if defined(FLOP_GEMM_FMA) && defined(__FMA__)
  return true;
#else
  return false;
#endif
}

namespace {

// op(A) is m x k and op(B) is k x n; a transposed operand is stored as its
// transpose, row-major, with the given leading dimension.
template <bool TransA, bool TransB>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  // Cache blocks. Splitting k into consecutive blocks keeps each output's
  // terms in ascending order, with partial sums parked in C between blocks.
  constexpr std::size_t kBlockK = 256;
  constexpr std::size_t kBlockN = 512;
  auto a_at = [&](std::size_t i, std::size_t p) {
    return TransA ? a[p * lda + i] : a[i * lda + p];
  };

  thread_local std::vector<double> a_pack, b_pack;
  double scratch[kRowTile * kColTile];
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t kc = std::min(kBlockK, k - k0);
    for (std::size_t n0 = 0; n0 < n; n0 += kBlockN) {
      const std::size_t nc = std::min(kBlockN, n - n0);
      const std::size_t col_tiles = (nc + kColTile - 1) / kColTile;

      // Panels are zero-padded to whole tiles; padded lanes compute into a
      // scratch tile and are discarded, so edges run the same kernel.
      b_pack.assign(col_tiles * kColTile * kc, 0.0);
      for (std::size_t t = 0; t < col_tiles; ++t) {
        const std::size_t j0 = t * kColTile;
        const std::size_t w = std::min(kColTile, nc - j0);
        double* dst = b_pack.data() + j0 * kc;
        if constexpr (TransB) {
          for (std::size_t jj = 0; jj < w; ++jj) {
            const double* src = b + (n0 + j0 + jj) * ldb + k0;
            for (std::size_t p = 0; p < kc; ++p) dst[p * kColTile + jj] = src[p];
          }
        } else {
          for (std::size_t p = 0; p < kc; ++p)
            std::copy_n(b + (k0 + p) * ldb + n0 + j0, w, dst + p * kColTile);
        }
      }
      a_pack.resize(kRowTile * kc);

      for (std::size_t i = 0; i < m; i += kRowTile) {
        const std::size_t h = std::min(kRowTile, m - i);
        for (std::size_t p = 0; p < kc; ++p) {
          for (std::size_t r = 0; r < h; ++r) a_pack[p * kRowTile + r] = a_at(i + r, k0 + p);
          for (std::size_t r = h; r < kRowTile; ++r) a_pack[p * kRowTile + r] = 0.0;
        }
        for (std::size_t t = 0; t < col_tiles; ++t) {
          const std::size_t j = t * kColTile;
          const std::size_t w = std::min(kColTile, nc - j);
          double* cij = c + i * ldc + n0 + j;
          const double* bp = b_pack.data() + j * kc;
          if (h == kRowTile && w == kColTile) {
            tile(kc, a_pack.data(), bp, cij, ldc);
            continue;
          }
          std::fill(std::begin(scratch), std::end(scratch), 0.0);
          for (std::size_t r = 0; r < h; ++r) std::copy_n(cij + r * ldc, w, scratch + r * kColTile);
          tile(kc, a_pack.data(), bp, scratch, kColTile);
          for (std::size_t r = 0; r < h; ++r) std::copy_n(scratch + r * kColTile, w, cij + r * ldc);
        }
      }
    }
  }
}

}  // namespace

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k,
                     const double* a, std::size_t lda, const double* b,
                     std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl<false, false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_accumulate_nt(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, std::size_t lda, const double* b,
                        std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl<false, true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_accumulate_tn(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, std::size_t lda, const double* b,
                        std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl<true, false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void transpose(std::size_t rows, std::size_t cols, const double* src,
               double* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
    const std::size_t i1 = i0 + kBlock < rows ? i0 + kBlock : rows;
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t j1 = j0 + kBlock < cols ? j0 + kBlock : cols;
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

}  // namespace flop::kernels
