#include "xpcb/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "kernel_table.hpp"

namespace xpcb::kernels {
namespace {

using detail::KernelTable;

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
    return detail::avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
           __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* table_for(Isa isa) {
    switch (isa) {
        case Isa::scalar: return &detail::scalar_table;
        case Isa::avx2: return cpu_has_avx2() ? detail::avx2_table() : nullptr;
        case Isa::neon: return detail::neon_table();
    }
    return nullptr;
}

Isa initial_isa() {
    if (const char* env = std::getenv("XPCB_ISA")) {
        const std::string want(env);
        for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
            if (want == isa_name(isa) && isa_supported(isa)) return isa;
    }
    return detected_isa();
}

struct ActiveState {
    std::atomic<Isa> isa{initial_isa()};
    std::atomic<const KernelTable*> table{table_for(isa.load())};
};

ActiveState& state() {
    static ActiveState s;
    return s;
}

const KernelTable& table() { return *state().table.load(std::memory_order_relaxed); }

template <class T>
std::vector<T>& scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

template <class T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, std::vector<T>& dst) {
    dst.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("kernel shape mismatch: ") + what);
}

template <class T>
void call_gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    if (m == 0 || n == 0) return;
    if constexpr (std::is_same_v<T, float>)
        table().gemm_nn_f32(m, n, k, a, b, c);
    else
        table().gemm_nn_f64(m, n, k, a, b, c);
}

template <class T>
void gemm_nn_impl(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
                  std::span<const T> b, std::span<T> c) {
    check(a.size() >= m * k && b.size() >= k * n && c.size() >= m * n, "gemm_nn");
    call_gemm_nn(m, n, k, a.data(), b.data(), c.data());
}

template <class T>
void gemm_nt_impl(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
                  std::span<const T> b, std::span<T> c) {
    check(a.size() >= m * k && b.size() >= n * k && c.size() >= m * n, "gemm_nt");
    auto& bt = scratch<T>();
    transpose_into(n, k, b.data(), bt);
    call_gemm_nn(m, n, k, a.data(), bt.data(), c.data());
}

template <class T>
void gemm_tn_impl(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
                  std::span<const T> b, std::span<T> c) {
    check(a.size() >= k * m && b.size() >= k * n && c.size() >= m * n, "gemm_tn");
    auto& at = scratch<T>();
    transpose_into(k, m, a.data(), at);
    call_gemm_nn(m, n, k, at.data(), b.data(), c.data());
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

bool isa_supported(Isa isa) { return table_for(isa) != nullptr; }

Isa detected_isa() {
    if (isa_supported(Isa::avx2)) return Isa::avx2;
    if (isa_supported(Isa::neon)) return Isa::neon;
    return Isa::scalar;
}

Isa active_isa() { return state().isa.load(); }

void set_active_isa(Isa isa) {
    const KernelTable* t = table_for(isa);
    if (t == nullptr)
        throw std::runtime_error("ISA not supported on this CPU: " + std::string(isa_name(isa)));
    state().isa.store(isa);
    state().table.store(t);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
             std::span<const float> b, std::span<float> c) {
    gemm_nn_impl(m, n, k, a, b, c);
}
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    gemm_nn_impl(m, n, k, a, b, c);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
             std::span<const float> b, std::span<float> c) {
    gemm_nt_impl(m, n, k, a, b, c);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    gemm_nt_impl(m, n, k, a, b, c);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
             std::span<const float> b, std::span<float> c) {
    gemm_tn_impl(m, n, k, a, b, c);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
    gemm_tn_impl(m, n, k, a, b, c);
}

template <>
VectorOps<float> vector_ops<float>() {
    const KernelTable& t = table();
    return {t.dot_f32, t.axpy_f32};
}
template <>
VectorOps<double> vector_ops<double>() {
    const KernelTable& t = table();
    return {t.dot_f64, t.axpy_f64};
}

float dot(std::span<const float> x, std::span<const float> y) {
    check(x.size() == y.size(), "dot");
    return table().dot_f32(x.data(), y.data(), x.size());
}
double dot(std::span<const double> x, std::span<const double> y) {
    check(x.size() == y.size(), "dot");
    return table().dot_f64(x.data(), y.data(), x.size());
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
    check(x.size() == y.size(), "axpy");
    table().axpy_f32(alpha, x.data(), y.data(), x.size());
}
void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    check(x.size() == y.size(), "axpy");
    table().axpy_f64(alpha, x.data(), y.data(), x.size());
}

}  // namespace xpcb::kernels
