#include <algorithm>
#include <cmath>
#include <vector>

#include "sdsep/kernels.hpp"

namespace sdsep::kernels::scalar {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
    std::vector<T> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = ta == Trans::no ? a[i * lda + p] : a[p * lda + i];
            if (tb == Trans::no) {
                const T* brow = b + p * ldb;
                for (std::size_t j = 0; j < n; ++j) acc[j] += aip * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) acc[j] += aip * b[j * ldb + p];
            }
        }
        T* crow = c + i * ldc;
        if (beta == T(0)) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = alpha * acc[j];
        } else {
            for (std::size_t j = 0; j < n; ++j) crow[j] = alpha * acc[j] + beta * crow[j];
        }
    }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T squared_distance(const T* x, const T* y, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

template <typename T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, const AdamCoefficients& c) {
    const T b1 = T(c.beta1), b2 = T(c.beta2);
    const T one_b1 = T(1) - b1, one_b2 = T(1) - b2;
    const T inv_bias1 = T(1.0 / c.bias1), inv_bias2 = T(1.0 / c.bias2);
    const T lr = T(c.lr), eps = T(c.eps);
    for (std::size_t i = 0; i < n; ++i) {
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

}  // namespace sdsep::kernels::scalar
