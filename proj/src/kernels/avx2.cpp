// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the dispatcher has confirmed CPU support.
// Standard-library templates are kept out of it: an inline function emitted
// here with AVX2 encodings could be the copy the linker keeps for every TU.

#include <immintrin.h>

#include <cmath>
#include <cstdlib>
#include <cstring>

#include "sdsep/kernels.hpp"

namespace sdsep::kernels::avx2 {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
    using Reg = __m256;
    static constexpr std::size_t width = 8;
    static Reg zero() { return _mm256_setzero_ps(); }
    static Reg set1(float x) { return _mm256_set1_ps(x); }
    static Reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, Reg r) { _mm256_storeu_ps(p, r); }
    static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
    static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
    static Reg sub(Reg a, Reg b) { return _mm256_sub_ps(a, b); }
    static Reg mul(Reg a, Reg b) { return _mm256_mul_ps(a, b); }
    static Reg div(Reg a, Reg b) { return _mm256_div_ps(a, b); }
    static Reg sqrt(Reg a) { return _mm256_sqrt_ps(a); }
    static float hsum(Reg x) {
        __m128 lo = _mm256_castps256_ps128(x);
        __m128 hi = _mm256_extractf128_ps(x, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 shuf = _mm_movehdup_ps(lo);
        __m128 sums = _mm_add_ps(lo, shuf);
        shuf = _mm_movehl_ps(shuf, sums);
        sums = _mm_add_ss(sums, shuf);
        return _mm_cvtss_f32(sums);
    }
};

template <>
struct Vec<double> {
    using Reg = __m256d;
    static constexpr std::size_t width = 4;
    static Reg zero() { return _mm256_setzero_pd(); }
    static Reg set1(double x) { return _mm256_set1_pd(x); }
    static Reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, Reg r) { _mm256_storeu_pd(p, r); }
    static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
    static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
    static Reg sub(Reg a, Reg b) { return _mm256_sub_pd(a, b); }
    static Reg mul(Reg a, Reg b) { return _mm256_mul_pd(a, b); }
    static Reg div(Reg a, Reg b) { return _mm256_div_pd(a, b); }
    static Reg sqrt(Reg a) { return _mm256_sqrt_pd(a); }
    static double hsum(Reg x) {
        __m128d lo = _mm256_castpd256_pd128(x);
        __m128d hi = _mm256_extractf128_pd(x, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d high64 = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
    }
};

constexpr std::size_t min_size(std::size_t a, std::size_t b) { return a < b ? a : b; }

// Grow-only scratch buffer with internal linkage.
template <typename T>
class Scratch {
  public:
    Scratch() = default;
    Scratch(const Scratch&) = delete;
    Scratch& operator=(const Scratch&) = delete;
    ~Scratch() { std::free(data_); }
    T* reserve(std::size_t n) {
        if (n > capacity_) {
            std::free(data_);
            data_ = static_cast<T*>(std::aligned_alloc(64, ((n * sizeof(T) + 63) / 64) * 64));
            capacity_ = n;
        }
        return data_;
    }

  private:
    T* data_ = nullptr;
    std::size_t capacity_ = 0;
};

constexpr std::size_t kMr = 6;
constexpr std::size_t kMc = 96;
constexpr std::size_t kKc = 256;
constexpr std::size_t kNc = 4096;

template <typename T>
constexpr std::size_t kNr = 2 * Vec<T>::width;

// Packs op(A)[i0:i0+mc, p0:p0+kc] into MR-row panels, zero-padding the last.
template <typename T>
void pack_a(Trans ta, const T* a, std::size_t lda, std::size_t i0, std::size_t mc,
            std::size_t p0, std::size_t kc, T* out) {
    for (std::size_t ir = 0; ir < mc; ir += kMr) {
        const std::size_t rows = min_size(kMr, mc - ir);
        for (std::size_t p = 0; p < kc; ++p) {
            for (std::size_t r = 0; r < kMr; ++r) {
                T val = 0;
                if (r < rows) {
                    const std::size_t i = i0 + ir + r;
                    val = ta == Trans::no ? a[i * lda + p0 + p] : a[(p0 + p) * lda + i];
                }
                *out++ = val;
            }
        }
    }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] into NR-column panels, zero-padding the last.
template <typename T>
void pack_b(Trans tb, const T* b, std::size_t ldb, std::size_t p0, std::size_t kc,
            std::size_t j0, std::size_t nc, T* out) {
    constexpr std::size_t nr = kNr<T>;
    for (std::size_t jr = 0; jr < nc; jr += nr) {
        const std::size_t cols = min_size(nr, nc - jr);
        for (std::size_t p = 0; p < kc; ++p) {
            if (tb == Trans::no && cols == nr) {
                const T* src = b + (p0 + p) * ldb + j0 + jr;
                std::memcpy(out, src, nr * sizeof(T));
                out += nr;
                continue;
            }
            for (std::size_t c = 0; c < nr; ++c) {
                T val = 0;
                if (c < cols) {
                    const std::size_t j = j0 + jr + c;
                    val = tb == Trans::no ? b[(p0 + p) * ldb + j] : b[j * ldb + p0 + p];
                }
                *out++ = val;
            }
        }
    }
}

// acc = sum_p a[p][r] * b[p][c] over one packed panel pair; writes
// alpha*acc + beta*C (first k block) or C + alpha*acc (later blocks).
template <typename T>
void micro_kernel(std::size_t kc, const T* ap, const T* bp, T alpha, T beta, bool first,
                  T* c, std::size_t ldc, std::size_t rows, std::size_t cols) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    typename V::Reg acc[kMr][2];
    for (auto& row : acc) row[0] = row[1] = V::zero();
    for (std::size_t p = 0; p < kc; ++p) {
        const auto b0 = V::load(bp);
        const auto b1 = V::load(bp + w);
        for (std::size_t r = 0; r < kMr; ++r) {
            const auto av = V::set1(ap[r]);
            acc[r][0] = V::fmadd(av, b0, acc[r][0]);
            acc[r][1] = V::fmadd(av, b1, acc[r][1]);
        }
        ap += kMr;
        bp += 2 * w;
    }
    const auto valpha = V::set1(alpha);
    if (rows == kMr && cols == 2 * w) {
        const auto vbeta = V::set1(beta);
        for (std::size_t r = 0; r < kMr; ++r) {
            T* crow = c + r * ldc;
            for (std::size_t h = 0; h < 2; ++h) {
                auto out = V::mul(valpha, acc[r][h]);
                if (!first) {
                    out = V::add(V::load(crow + h * w), out);
                } else if (beta != T(0)) {
                    out = V::add(out, V::mul(vbeta, V::load(crow + h * w)));
                }
                V::store(crow + h * w, out);
            }
        }
        return;
    }
    alignas(32) T tile[kMr][2 * w];
    for (std::size_t r = 0; r < kMr; ++r) {
        V::store(&tile[r][0], V::mul(valpha, acc[r][0]));
        V::store(&tile[r][w], V::mul(valpha, acc[r][1]));
    }
    for (std::size_t r = 0; r < rows; ++r) {
        T* crow = c + r * ldc;
        for (std::size_t j = 0; j < cols; ++j) {
            if (!first) {
                crow[j] = crow[j] + tile[r][j];
            } else if (beta != T(0)) {
                crow[j] = tile[r][j] + beta * crow[j];
            } else {
                crow[j] = tile[r][j];
            }
        }
    }
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
    if (m == 0 || n == 0) return;
    constexpr std::size_t nr = kNr<T>;
    if (k == 0) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                c[i * ldc + j] = beta == T(0) ? T(0) : beta * c[i * ldc + j];
        return;
    }
    thread_local Scratch<T> abuf_storage;
    thread_local Scratch<T> bbuf_storage;
    T* abuf = abuf_storage.reserve(((kMc + kMr - 1) / kMr) * kMr * kKc);
    for (std::size_t jc = 0; jc < n; jc += kNc) {
        const std::size_t nc = min_size(kNc, n - jc);
        const std::size_t nc_padded = ((nc + nr - 1) / nr) * nr;
        for (std::size_t pc = 0; pc < k; pc += kKc) {
            const std::size_t kc = min_size(kKc, k - pc);
            T* bbuf = bbuf_storage.reserve(nc_padded * kc);
            pack_b(tb, b, ldb, pc, kc, jc, nc, bbuf);
            for (std::size_t ic = 0; ic < m; ic += kMc) {
                const std::size_t mc = min_size(kMc, m - ic);
                pack_a(ta, a, lda, ic, mc, pc, kc, abuf);
                for (std::size_t jr = 0; jr < nc; jr += nr) {
                    const std::size_t cols = min_size(nr, nc - jr);
                    const T* bp = bbuf + (jr / nr) * nr * kc;
                    for (std::size_t ir = 0; ir < mc; ir += kMr) {
                        const std::size_t rows = min_size(kMr, mc - ir);
                        const T* ap = abuf + (ir / kMr) * kMr * kc;
                        micro_kernel<T>(kc, ap, bp, alpha, beta, pc == 0,
                                        c + (ic + ir) * ldc + jc + jr, ldc, rows, cols);
                    }
                }
            }
        }
    }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    auto s0 = V::zero(), s1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * w <= n; i += 2 * w) {
        s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
        s1 = V::fmadd(V::load(x + i + w), V::load(y + i + w), s1);
    }
    T s = V::hsum(V::add(s0, s1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    const auto va = V::set1(alpha);
    std::size_t i = 0;
    for (; i + w <= n; i += w) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename T>
T squared_distance(const T* x, const T* y, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    auto s0 = V::zero(), s1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * w <= n; i += 2 * w) {
        const auto d0 = V::sub(V::load(x + i), V::load(y + i));
        const auto d1 = V::sub(V::load(x + i + w), V::load(y + i + w));
        s0 = V::fmadd(d0, d0, s0);
        s1 = V::fmadd(d1, d1, s1);
    }
    T s = V::hsum(V::add(s0, s1));
    for (; i < n; ++i) {
        const T d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

template <typename T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, const AdamCoefficients& c) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    const T b1 = T(c.beta1), b2 = T(c.beta2);
    const T one_b1 = T(1) - b1, one_b2 = T(1) - b2;
    const T inv_bias1 = T(1.0 / c.bias1), inv_bias2 = T(1.0 / c.bias2);
    const T lr = T(c.lr), eps = T(c.eps);
    const auto vb1 = V::set1(b1), vb2 = V::set1(b2);
    const auto vob1 = V::set1(one_b1), vob2 = V::set1(one_b2);
    const auto vib1 = V::set1(inv_bias1), vib2 = V::set1(inv_bias2);
    const auto vlr = V::set1(lr), veps = V::set1(eps);
    std::size_t i = 0;
    for (; i + w <= n; i += w) {
        const auto g = V::load(grad + i);
        const auto mi = V::add(V::mul(vb1, V::load(m + i)), V::mul(vob1, g));
        const auto vi = V::add(V::mul(vb2, V::load(v + i)), V::mul(vob2, V::mul(g, g)));
        V::store(m + i, mi);
        V::store(v + i, vi);
        const auto mhat = V::mul(mi, vib1);
        const auto vhat = V::mul(vi, vib2);
        const auto step = V::div(V::mul(vlr, mhat), V::add(V::sqrt(vhat), veps));
        V::store(param + i, V::sub(V::load(param + i), step));
    }
    for (; i < n; ++i) {
        const T g = grad[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * (g * g);
        const T mhat = m[i] * inv_bias1;
        const T vhat = v[i] * inv_bias2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

#define SDSEP_INSTANTIATE(T)                                                                  \
    template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, T, const T*,   \
                          std::size_t, const T*, std::size_t, T, T*, std::size_t);            \
    template T dot<T>(const T*, const T*, std::size_t);                                       \
    template void axpy<T>(std::size_t, T, const T*, T*);                                      \
    template T squared_distance<T>(const T*, const T*, std::size_t);                          \
    template void adam_update<T>(std::size_t, T*, const T*, T*, T*, const AdamCoefficients&);

SDSEP_INSTANTIATE(float)
SDSEP_INSTANTIATE(double)
#undef SDSEP_INSTANTIATE

}  // namespace sdsep::kernels::avx2
