#pragma once

// Dense arithmetic kernels used by the encoder and heads.
//
// Every kernel has a portable scalar reference implementation and, where the
// CPU supports it, an AVX2+FMA (x86-64) or NEON (aarch64) variant. The variant
// is selected once at startup from the detected CPU features and can be
// overridden with XPCB_ISA=scalar|avx2|neon or set_active_isa().
//
// All matrices are dense row-major. The gemm kernels accumulate into C.
// Within one ISA, the value written to C[i][j] depends only on row i of A,
// column j of B and the initial C[i][j]; it does not depend on m or n. The
// encoder relies on this when it trims all-padding columns from a batch.

#include <cstddef>
#include <span>
#include <string_view>

namespace xpcb::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa detected_isa();
Isa active_isa();
void set_active_isa(Isa isa);

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
             std::span<const float> b, std::span<float> c);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
             std::span<const float> b, std::span<float> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
             std::span<const float> b, std::span<float> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

float dot(std::span<const float> x, std::span<const float> y);
double dot(std::span<const double> x, std::span<const double> y);

// y += alpha * x
void axpy(float alpha, std::span<const float> x, std::span<float> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// The active ISA's dot and axpy as plain function pointers, for inner loops
// over short vectors where per-call dispatch would dominate. Same arithmetic
// as dot() and axpy(), without the length checks. Fetch again after an ISA
// change.
template <class T>
struct VectorOps {
    T (*dot)(const T* x, const T* y, std::size_t n);
    void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
};
template <class T>
VectorOps<T> vector_ops();

// RAII override of the active ISA, restored on scope exit.
class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
    ~ScopedIsa() { set_active_isa(previous_); }
    ScopedIsa(const ScopedIsa&) = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    Isa previous_;
};

}  // namespace xpcb::kernels
