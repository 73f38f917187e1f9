#pragma once

// Differentiable operations on Tensor<T>. All functions are defined for
// float and double. Binary elementwise ops accept equal shapes, or one
// single-element operand broadcast against the other.
//
// Convolution layouts follow the NCHW convention:
//   conv2d            input [N,C,H,W], kernel [F,C,kh,kw]  (cross-correlation)
//   conv_transpose2d  input [N,F,H,W], kernel [F,C,kh,kw]  (adjoint of conv2d)
//   convolve_same_per_item  true (flipped-kernel) convolution, one kernel per
//                     image, zero padded so the output keeps the input size.

#include <cstddef>

#include "sdsep/tensor.hpp"

namespace sdsep::ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> neg(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
// log(1 + exp(a)), stable for large |a|.
template <typename T> Tensor<T> softplus(const Tensor<T>& a);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, ConvGeometry g);
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, ConvGeometry g);
// Adds bias[c] to every element of channel c. input [N,C,...], bias [C].
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& input, const Tensor<T>& bias);

enum class BnMode { train, eval };

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
};

// running_mean / running_var are [C] leaves updated in place in train mode
// (momentum update, unbiased variance) and read in eval mode.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, BnMode mode,
                      BatchNormOptions options = {});

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// out[n] = sum_g in[n*groups + g]; input [N*groups, ...] -> [N, ...].
template <typename T> Tensor<T> group_sum(const Tensor<T>& a, std::size_t groups);

// out[n] = alpha[n] * in[n]; input [N, ...], alpha with N elements.
template <typename T>
Tensor<T> scale_per_item(const Tensor<T>& input, const Tensor<T>& alpha);

// input [N,C,H,W], kernel [N,C,kh,kw] with odd kh, kw.
template <typename T>
Tensor<T> convolve_same_per_item(const Tensor<T>& input, const Tensor<T>& kernel);

}  // namespace sdsep::ops
