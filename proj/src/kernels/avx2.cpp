// Compiled with -mavx2 -mfma. Only reached after a runtime CPU check.
#include "kernel_table.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#include <cstdint>

namespace xpcb::kernels::detail {
namespace {

// Lane masks for _mm256_maskload/_mm256_maskstore, indexed by lanes in use.
alignas(32) const std::int32_t kMask32[16] = {-1, -1, -1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0};
alignas(32) const std::int64_t kMask64[8] = {-1, -1, -1, -1, 0, 0, 0, 0};

inline __m256i tail_mask_ps(std::size_t lanes) {
    return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kMask32 + 8 - lanes));
}
inline __m256i tail_mask_pd(std::size_t lanes) {
    return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kMask64 + 4 - lanes));
}

// R rows of A against a 16-column stripe of B. Each C lane sees the same
// sequence of FMAs whatever R is, so results do not depend on row blocking.
template <int R>
inline void f32_rows_x16(std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                         std::size_t j) {
    __m256 acc0[R], acc1[R];
    for (int r = 0; r < R; ++r) {
        acc0[r] = _mm256_loadu_ps(c + r * n + j);
        acc1[r] = _mm256_loadu_ps(c + r * n + j + 8);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(b + p * n + j);
        const __m256 b1 = _mm256_loadu_ps(b + p * n + j + 8);
        for (int r = 0; r < R; ++r) {
            const __m256 av = _mm256_broadcast_ss(a + r * k + p);
            acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
            acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
        }
    }
    for (int r = 0; r < R; ++r) {
        _mm256_storeu_ps(c + r * n + j, acc0[r]);
        _mm256_storeu_ps(c + r * n + j + 8, acc1[r]);
    }
}

template <int R>
inline void f32_rows_masked(std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                            std::size_t j, std::size_t lanes) {
    const __m256i mask = tail_mask_ps(lanes);
    __m256 acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_maskload_ps(c + r * n + j, mask);
    for (std::size_t p = 0; p < k; ++p) {
        const __m256 bv = _mm256_maskload_ps(b + p * n + j, mask);
        for (int r = 0; r < R; ++r)
            acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * k + p), bv, acc[r]);
    }
    for (int r = 0; r < R; ++r) _mm256_maskstore_ps(c + r * n + j, mask, acc[r]);
}

template <int R>
inline void f32_row_block(std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) f32_rows_x16<R>(n, k, a, b, c, j);
    for (; j < n; j += 8) f32_rows_masked<R>(n, k, a, b, c, j, n - j < 8 ? n - j : 8);
}

void gemm_nn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                 float* c) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) f32_row_block<4>(n, k, a + i * k, b, c + i * n);
    switch (m - i) {
        case 3: f32_row_block<3>(n, k, a + i * k, b, c + i * n); break;
        case 2: f32_row_block<2>(n, k, a + i * k, b, c + i * n); break;
        case 1: f32_row_block<1>(n, k, a + i * k, b, c + i * n); break;
        default: break;
    }
}

template <int R>
inline void f64_rows_x8(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                        std::size_t j) {
    __m256d acc0[R], acc1[R];
    for (int r = 0; r < R; ++r) {
        acc0[r] = _mm256_loadu_pd(c + r * n + j);
        acc1[r] = _mm256_loadu_pd(c + r * n + j + 4);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
        const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
        for (int r = 0; r < R; ++r) {
            const __m256d av = _mm256_broadcast_sd(a + r * k + p);
            acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
            acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
        }
    }
    for (int r = 0; r < R; ++r) {
        _mm256_storeu_pd(c + r * n + j, acc0[r]);
        _mm256_storeu_pd(c + r * n + j + 4, acc1[r]);
    }
}

template <int R>
inline void f64_rows_masked(std::size_t n, std::size_t k, const double* a, const double* b,
                            double* c, std::size_t j, std::size_t lanes) {
    const __m256i mask = tail_mask_pd(lanes);
    __m256d acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_maskload_pd(c + r * n + j, mask);
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_maskload_pd(b + p * n + j, mask);
        for (int r = 0; r < R; ++r)
            acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * k + p), bv, acc[r]);
    }
    for (int r = 0; r < R; ++r) _mm256_maskstore_pd(c + r * n + j, mask, acc[r]);
}

template <int R>
inline void f64_row_block(std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) f64_rows_x8<R>(n, k, a, b, c, j);
    for (; j < n; j += 4) f64_rows_masked<R>(n, k, a, b, c, j, n - j < 4 ? n - j : 4);
}

void gemm_nn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) f64_row_block<4>(n, k, a + i * k, b, c + i * n);
    switch (m - i) {
        case 3: f64_row_block<3>(n, k, a + i * k, b, c + i * n); break;
        case 2: f64_row_block<2>(n, k, a + i * k, b, c + i * n); break;
        case 1: f64_row_block<1>(n, k, a + i * k, b, c + i * n); break;
        default: break;
    }
}

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

float dot_f32(const float* x, const float* y, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
    if (i < n) {
        const __m256i mask = tail_mask_ps(n - i);
        acc = _mm256_fmadd_ps(_mm256_maskload_ps(x + i, mask), _mm256_maskload_ps(y + i, mask), acc);
    }
    return hsum(acc);
}

double dot_f64(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    if (i < n) {
        const __m256i mask = tail_mask_pd(n - i);
        acc = _mm256_fmadd_pd(_mm256_maskload_pd(x + i, mask), _mm256_maskload_pd(y + i, mask), acc);
    }
    return hsum(acc);
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    if (i < n) {
        const __m256i mask = tail_mask_ps(n - i);
        _mm256_maskstore_ps(y + i, mask,
                            _mm256_fmadd_ps(av, _mm256_maskload_ps(x + i, mask), _mm256_maskload_ps(y + i, mask)));
    }
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    if (i < n) {
        const __m256i mask = tail_mask_pd(n - i);
        _mm256_maskstore_pd(y + i, mask,
                            _mm256_fmadd_pd(av, _mm256_maskload_pd(x + i, mask), _mm256_maskload_pd(y + i, mask)));
    }
}

const KernelTable kAvx2Table{&gemm_nn_f32, &gemm_nn_f64, &dot_f32, &dot_f64, &axpy_f32, &axpy_f64};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2Table; }

}  // namespace xpcb::kernels::detail

#else

namespace xpcb::kernels::detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace xpcb::kernels::detail

#endif
