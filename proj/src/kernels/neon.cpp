#include "kernel_table.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace xpcb::kernels::detail {
namespace {

// Row-at-a-time: each C lane receives the same FMA sequence regardless of m.
void gemm_nn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                 float* c) {
    for (std::size_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            float32x4_t acc = vld1q_f32(crow + j);
            for (std::size_t p = 0; p < k; ++p) acc = vfmaq_n_f32(acc, vld1q_f32(b + p * n + j), a[i * k + p]);
            vst1q_f32(crow + j, acc);
        }
        for (; j < n; ++j) {
            float acc = crow[j];
            for (std::size_t p = 0; p < k; ++p) acc = __builtin_fmaf(a[i * k + p], b[p * n + j], acc);
            crow[j] = acc;
        }
    }
}

void gemm_nn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        std::size_t j = 0;
        for (; j + 2 <= n; j += 2) {
            float64x2_t acc = vld1q_f64(crow + j);
            for (std::size_t p = 0; p < k; ++p) acc = vfmaq_n_f64(acc, vld1q_f64(b + p * n + j), a[i * k + p]);
            vst1q_f64(crow + j, acc);
        }
        for (; j < n; ++j) {
            double acc = crow[j];
            for (std::size_t p = 0; p < k; ++p) acc = __builtin_fma(a[i * k + p], b[p * n + j], acc);
            crow[j] = acc;
        }
    }
}

float dot_f32(const float* x, const float* y, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(x + i), vld1q_f32(y + i));
    float sum = vaddvq_f32(acc);
    for (; i < n; ++i) sum += x[i] * y[i];
    return sum;
}

double dot_f64(const double* x, const double* y, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(x + i), vld1q_f64(y + i));
    double sum = vaddvq_f64(acc);
    for (; i < n; ++i) sum += x[i] * y[i];
    return sum;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_n_f32(vld1q_f32(y + i), vld1q_f32(x + i), alpha));
    for (; i < n; ++i) y[i] = __builtin_fmaf(alpha, x[i], y[i]);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_n_f64(vld1q_f64(y + i), vld1q_f64(x + i), alpha));
    for (; i < n; ++i) y[i] = __builtin_fma(alpha, x[i], y[i]);
}

const KernelTable kNeonTable{&gemm_nn_f32, &gemm_nn_f64, &dot_f32, &dot_f64, &axpy_f32, &axpy_f64};

}  // namespace

const KernelTable* neon_table() { return &kNeonTable; }

}  // namespace xpcb::kernels::detail

#else

namespace xpcb::kernels::detail {
const KernelTable* neon_table() { return nullptr; }
}  // namespace xpcb::kernels::detail

#endif
