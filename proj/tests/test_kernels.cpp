// Scalar reference vs AVX2 kernel equivalence.

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "sdsep/kernels.hpp"

namespace k = sdsep::kernels;
using k::Trans;

namespace {

template <typename T>
std::vector<T> random_vec(std::mt19937_64& g, std::size_t n) {
    std::normal_distribution<double> d;
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(d(g));
    return v;
}

template <typename T>
double tolerance();
template <>
double tolerance<float>() { return 2e-5; }
template <>
double tolerance<double>() { return 1e-12; }

template <typename T>
void check_gemm_equivalence() {
    if (!k::isa_available(k::Isa::avx2)) GTEST_SKIP() << "no AVX2 on this host";
    std::mt19937_64 g(7);
    const std::size_t sizes[][3] = {{1, 1, 1},    {5, 7, 3},     {6, 16, 256}, {13, 29, 300},
                                    {97, 33, 17}, {7, 4100, 5},  {200, 3, 513}, {64, 64, 64}};
    for (const auto& s : sizes) {
        for (int ta = 0; ta < 2; ++ta)
            for (int tb = 0; tb < 2; ++tb)
                for (T beta : {T(0), T(0.5)}) {
                    const std::size_t m = s[0], n = s[1], kk = s[2];
                    const auto a = random_vec<T>(g, m * kk);
                    const auto b = random_vec<T>(g, kk * n);
                    const auto c0 = random_vec<T>(g, m * n);
                    const std::size_t lda = ta ? m : kk, ldb = tb ? kk : n;
                    auto c_ref = c0, c_simd = c0;
                    k::scalar::gemm<T>(Trans(ta), Trans(tb), m, n, kk, T(1.5), a.data(), lda,
                                       b.data(), ldb, beta, c_ref.data(), n);
                    k::avx2::gemm<T>(Trans(ta), Trans(tb), m, n, kk, T(1.5), a.data(), lda,
                                     b.data(), ldb, beta, c_simd.data(), n);
                    for (std::size_t i = 0; i < m * n; ++i) {
                        const double scale = std::sqrt(double(kk)) + std::abs(double(c_ref[i]));
                        ASSERT_NEAR(c_ref[i], c_simd[i], tolerance<T>() * scale * 4)
                            << m << "x" << n << "x" << kk << " ta=" << ta << " tb=" << tb;
                    }
                }
    }
}

}  // namespace

TEST(Kernels, GemmAvx2MatchesScalarFloat) { check_gemm_equivalence<float>(); }
TEST(Kernels, GemmAvx2MatchesScalarDouble) { check_gemm_equivalence<double>(); }

TEST(Kernels, GemmElementIndependentOfProblemExtent) {
    // A row of C must come out bit-identical whether computed alone or as
    // part of a taller/wider product.
    std::mt19937_64 g(11);
    for (auto isa : {k::Isa::scalar, k::Isa::avx2}) {
        if (!k::isa_available(isa)) continue;
        k::set_isa(isa);
        const std::size_t m = 37, n = 53, kk = 300;
        const auto a = random_vec<float>(g, m * kk);
        const auto b = random_vec<float>(g, kk * n);
        std::vector<float> full(m * n);
        k::gemm<float>(Trans::no, Trans::no, m, n, kk, 1.f, a.data(), kk, b.data(), n, 0.f,
                       full.data(), n);
        for (std::size_t row : {0ul, 5ul, 36ul}) {
            std::vector<float> one(n);
            k::gemm<float>(Trans::no, Trans::no, 1, n, kk, 1.f, a.data() + row * kk, kk, b.data(),
                           n, 0.f, one.data(), n);
            for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(one[j], full[row * n + j]);
        }
    }
    k::set_isa(k::isa_available(k::Isa::avx2) ? k::Isa::avx2 : k::Isa::scalar);
}

TEST(Kernels, VectorKernelsMatchScalar) {
    if (!k::isa_available(k::Isa::avx2)) GTEST_SKIP() << "no AVX2 on this host";
    std::mt19937_64 g(3);
    for (std::size_t n : {0ul, 1ul, 7ul, 8ul, 15ul, 16ul, 17ul, 1000ul, 1031ul}) {
        const auto x = random_vec<double>(g, n), y = random_vec<double>(g, n);
        EXPECT_NEAR(k::scalar::dot(x.data(), y.data(), n), k::avx2::dot(x.data(), y.data(), n),
                    1e-12 * (1 + n));
        EXPECT_NEAR(k::scalar::squared_distance(x.data(), y.data(), n),
                    k::avx2::squared_distance(x.data(), y.data(), n), 1e-12 * (1 + n));
        auto y1 = y, y2 = y;
        k::scalar::axpy(n, 0.3, x.data(), y1.data());
        k::avx2::axpy(n, 0.3, x.data(), y2.data());
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-15);

        const auto xf = random_vec<float>(g, n), yf = random_vec<float>(g, n);
        EXPECT_NEAR(k::scalar::dot(xf.data(), yf.data(), n), k::avx2::dot(xf.data(), yf.data(), n),
                    1e-4 * (1 + n));
    }
}

TEST(Kernels, AdamUpdateMatchesScalar) {
    if (!k::isa_available(k::Isa::avx2)) GTEST_SKIP() << "no AVX2 on this host";
    std::mt19937_64 g(5);
    const std::size_t n = 203;
    const k::AdamCoefficients c{0.01, 0.9, 0.999, 1e-8, 1 - 0.9 * 0.9, 1 - 0.999 * 0.999};
    auto p1 = random_vec<float>(g, n), grad = random_vec<float>(g, n);
    auto m1 = random_vec<float>(g, n), v1 = random_vec<float>(g, n);
    for (auto& v : v1) v = v * v;
    auto p2 = p1, m2 = m1, v2 = v1;
    k::scalar::adam_update(n, p1.data(), grad.data(), m1.data(), v1.data(), c);
    k::avx2::adam_update(n, p2.data(), grad.data(), m2.data(), v2.data(), c);
    for (std::size_t i = 0; i < n; ++i) {
        EXPECT_FLOAT_EQ(m1[i], m2[i]);
        EXPECT_FLOAT_EQ(v1[i], v2[i]);
        EXPECT_NEAR(p1[i], p2[i], 1e-6);
    }
}

TEST(Kernels, AdamTailMatchesVectorLanes) {
    // The same value must update identically wherever it sits in the slice.
    if (!k::isa_available(k::Isa::avx2)) GTEST_SKIP() << "no AVX2 on this host";
    const k::AdamCoefficients c{0.01, 0.9, 0.999, 1e-8, 0.1, 0.001};
    std::vector<float> p(11, 0.37f), grad(11, -1.3f), m(11, 0.2f), v(11, 0.05f);
    k::avx2::adam_update(p.size(), p.data(), grad.data(), m.data(), v.data(), c);
    for (float x : p) EXPECT_EQ(x, p[0]);
}
