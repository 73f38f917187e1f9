#pragma once

// Dense arithmetic kernels behind the tensor library.
//
// Every kernel has a portable scalar reference implementation and an
// AVX2+FMA variant. The variant is chosen once at runtime from CPUID and can
// be forced with the SD_SEP_ISA environment variable ("scalar" | "avx2") or
// set_isa() in tests. Within one ISA, every output element of gemm() is
// accumulated in ascending k order independently of m and n, so batching
// independent problems into one call never changes a result bit.

#include <cstddef>
#include <string_view>

namespace sdsep::kernels {

enum class Isa { scalar, avx2 };

Isa active_isa();
void set_isa(Isa isa);
bool isa_available(Isa isa);
std::string_view isa_name(Isa isa);

enum class Trans : bool { no = false, yes = true };

// C[m x n] = alpha * op(A) * op(B) + beta * C, row-major with leading
// dimensions. op(A) is m x k, op(B) is k x n. beta == 0 ignores C's contents.
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

template <typename T>
T dot(const T* x, const T* y, std::size_t n);

// y += alpha * x
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

// sum_i (x_i - y_i)^2
template <typename T>
T squared_distance(const T* x, const T* y, std::size_t n);

struct AdamCoefficients {
    double lr;
    double beta1;
    double beta2;
    double eps;
    double bias1;  // 1 - beta1^t
    double bias2;  // 1 - beta2^t
};

// In-place Adam moment update and parameter step over one contiguous slice.
template <typename T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, const AdamCoefficients& c);

// Per-ISA entry points. The dispatching functions above forward to one of
// these; tests call them directly to check equivalence.
namespace scalar {
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);
template <typename T>
T dot(const T* x, const T* y, std::size_t n);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
T squared_distance(const T* x, const T* y, std::size_t n);
template <typename T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, const AdamCoefficients& c);
}  // namespace scalar

namespace avx2 {
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);
template <typename T>
T dot(const T* x, const T* y, std::size_t n);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
T squared_distance(const T* x, const T* y, std::size_t n);
template <typename T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, const AdamCoefficients& c);
}  // namespace avx2

}  // namespace sdsep::kernels
