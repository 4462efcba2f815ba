#include <doctest.h>

#include <cmath>
#include <vector>

#include "xpcb/kernels.hpp"
#include "xpcb/random.hpp"

using namespace xpcb;
using namespace xpcb::kernels;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
    return v;
}

// Naive triple loop, double accumulation.
template <class T>
std::vector<double> oracle(char kind, std::size_t m, std::size_t n, std::size_t k, const std::vector<T>& a,
                           const std::vector<T>& b, const std::vector<T>& c) {
    std::vector<double> out(c.begin(), c.end());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = kind == 't' ? a[p * m + i] : a[i * k + p];
                const double bv = kind == 'n' ? b[p * n + j] : kind == 'T' ? b[j * k + p] : b[p * n + j];
                s += av * bv;
            }
            out[i * n + j] += s;
        }
    return out;
}

std::vector<Isa> available() {
    std::vector<Isa> out;
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
        if (isa_supported(isa)) out.push_back(isa);
    return out;
}

template <class T>
void check_gemms(Isa isa, double tol) {
    ScopedIsa scope(isa);
    Rng rng(42);
    for (std::size_t m : {1u, 3u, 8u, 17u})
        for (std::size_t n : {1u, 5u, 16u, 33u})
            for (std::size_t k : {1u, 7u, 32u, 65u}) {
                const auto a = random_vec<T>(m * k, rng), b = random_vec<T>(k * n, rng);
                const auto bt = random_vec<T>(n * k, rng), at = random_vec<T>(k * m, rng);
                const auto c0 = random_vec<T>(m * n, rng);

                auto c = c0;
                gemm_nn(m, n, k, std::span<const T>(a), std::span<const T>(b), std::span<T>(c));
                auto ref = oracle<T>('n', m, n, k, a, b, c0);
                for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(std::abs(c[i] - ref[i]) <= tol * (1 + k));

                c = c0;
                gemm_nt(m, n, k, std::span<const T>(a), std::span<const T>(bt), std::span<T>(c));
                ref = oracle<T>('T', m, n, k, a, bt, c0);
                for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(std::abs(c[i] - ref[i]) <= tol * (1 + k));

                c = c0;
                gemm_tn(m, n, k, std::span<const T>(at), std::span<const T>(b), std::span<T>(c));
                ref = oracle<T>('t', m, n, k, at, b, c0);
                for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(std::abs(c[i] - ref[i]) <= tol * (1 + k));
            }
}

}  // namespace

TEST_CASE("scalar kernels are always available") {
    CHECK(isa_supported(Isa::scalar));
    CHECK(isa_supported(detected_isa()));
}

TEST_CASE("gemm variants agree with a naive oracle on every available ISA") {
    for (Isa isa : available()) {
        INFO("isa " << isa_name(isa));
        check_gemms<float>(isa, 1e-5);
        check_gemms<double>(isa, 1e-12);
    }
}

TEST_CASE("dot and axpy agree across ISAs") {
    Rng rng(7);
    for (std::size_t n : {0u, 1u, 3u, 8u, 15u, 64u, 101u}) {
        const auto x = random_vec<float>(n, rng), y = random_vec<float>(n, rng);
        const auto xd = random_vec<double>(n, rng), yd = random_vec<double>(n, rng);
        double ref = 0.0, refd = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ref += static_cast<double>(x[i]) * y[i];
            refd += xd[i] * yd[i];
        }
        for (Isa isa : available()) {
            ScopedIsa scope(isa);
            INFO("isa " << isa_name(isa) << " n " << n);
            CHECK(std::abs(dot(std::span<const float>(x), std::span<const float>(y)) - ref) < 1e-4);
            CHECK(std::abs(dot(std::span<const double>(xd), std::span<const double>(yd)) - refd) < 1e-12);
            auto out = y;
            axpy(0.5f, std::span<const float>(x), std::span<float>(out));
            for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(out[i] - (y[i] + 0.5f * x[i])) < 1e-6);
            auto outd = yd;
            axpy(-2.0, std::span<const double>(xd), std::span<double>(outd));
            for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(outd[i] - (yd[i] - 2.0 * xd[i])) < 1e-14);
        }
    }
}

TEST_CASE("vector_ops are the active ISA's dot and axpy, bit for bit") {
    Rng rng(8);
    for (Isa isa : available()) {
        ScopedIsa scope(isa);
        const auto ops = vector_ops<float>();
        const auto opsd = vector_ops<double>();
        for (std::size_t n : {1u, 7u, 16u, 33u}) {
            INFO("isa " << isa_name(isa) << " n " << n);
            const auto x = random_vec<float>(n, rng), y = random_vec<float>(n, rng);
            const auto xd = random_vec<double>(n, rng), yd = random_vec<double>(n, rng);
            CHECK(ops.dot(x.data(), y.data(), n) == dot(std::span<const float>(x), std::span<const float>(y)));
            CHECK(opsd.dot(xd.data(), yd.data(), n) == dot(std::span<const double>(xd), std::span<const double>(yd)));
            auto a = y, b = y;
            ops.axpy(0.25f, x.data(), a.data(), n);
            axpy(0.25f, std::span<const float>(x), std::span<float>(b));
            CHECK(a == b);
        }
    }
}

TEST_CASE("gemm output row depends only on its own inputs") {
    // Trimming relies on C[i][j] being independent of m and n.
    Rng rng(3);
    const std::size_t k = 24;
    const auto a = random_vec<float>(6 * k, rng), b = random_vec<float>(k * 10, rng);
    for (Isa isa : available()) {
        ScopedIsa scope(isa);
        std::vector<float> full(6 * 10, 0.0f), part(2 * 10, 0.0f);
        gemm_nn(6, 10, k, std::span<const float>(a), std::span<const float>(b), std::span<float>(full));
        gemm_nn(2, 10, k, std::span<const float>(a).first(2 * k), std::span<const float>(b), std::span<float>(part));
        for (std::size_t i = 0; i < part.size(); ++i) CHECK(part[i] == full[i]);
    }
}

TEST_CASE("ScopedIsa restores the previous selection") {
    const Isa before = active_isa();
    {
        ScopedIsa scope(Isa::scalar);
        CHECK(active_isa() == Isa::scalar);
    }
    CHECK(active_isa() == before);
}
