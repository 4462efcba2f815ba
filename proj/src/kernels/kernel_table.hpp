#pragma once

#include <cstddef>

namespace xpcb::kernels::detail {

struct KernelTable {
    void (*gemm_nn_f32)(std::size_t m, std::size_t n, std::size_t k, const float* a,
                        const float* b, float* c);
    void (*gemm_nn_f64)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c);
    float (*dot_f32)(const float* x, const float* y, std::size_t n);
    double (*dot_f64)(const double* x, const double* y, std::size_t n);
    void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
    void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
};

extern const KernelTable scalar_table;
// Null when the variant was not compiled for this target.
const KernelTable* avx2_table();
const KernelTable* neon_table();

}  // namespace xpcb::kernels::detail
