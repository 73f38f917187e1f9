#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "sdsep/kernels.hpp"

namespace sdsep::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa detect() {
    if (const char* forced = std::getenv("SD_SEP_ISA")) {
        const std::string want(forced);
        if (want == "scalar") return Isa::scalar;
        if (want == "avx2" && cpu_has_avx2()) return Isa::avx2;
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
    static std::atomic<Isa> isa{detect()};
    return isa;
}

}  // namespace

Isa active_isa() { return current().load(std::memory_order_relaxed); }

bool isa_available(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

void set_isa(Isa isa) {
    if (!isa_available(isa)) throw std::runtime_error("requested ISA is not supported by this CPU");
    current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
    if (active_isa() == Isa::avx2) {
        avx2::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    } else {
        scalar::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
    return active_isa() == Isa::avx2 ? avx2::dot(x, y, n) : scalar::dot(x, y, n);
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    if (active_isa() == Isa::avx2) {
        avx2::axpy(n, alpha, x, y);
    } else {
        scalar::axpy(n, alpha, x, y);
    }
}

template <typename T>
T squared_distance(const T* x, const T* y, std::size_t n) {
    return active_isa() == Isa::avx2 ? avx2::squared_distance(x, y, n)
                                     : scalar::squared_distance(x, y, n);
}

template <typename T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, const AdamCoefficients& c) {
    if (active_isa() == Isa::avx2) {
        avx2::adam_update(n, param, grad, m, v, c);
    } else {
        scalar::adam_update(n, param, grad, m, v, c);
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

}  // namespace sdsep::kernels
