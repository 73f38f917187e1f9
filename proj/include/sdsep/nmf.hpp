#pragma once

// Euclidean NMF dictionaries and the convolutive variant used as baselines.

#include <cstdint>
#include <span>
#include <vector>

#include "sdsep/checkpoint.hpp"
#include "sdsep/mnist.hpp"

namespace sdsep::baselines {

inline constexpr double kNmfEps = 1e-9;

// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
    double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

struct NmfFactors {
    Matrix W;  // m x R
    Matrix H;  // R x n
    std::vector<double> objective;  // ||V - WH||^2 at start and after each update pair
};

// V is m x n, non-negative. W and H start uniform, scaled to the data.
NmfFactors nmf_train(const Matrix& V, std::size_t R, std::size_t iterations, std::uint64_t seed);

// Unit L2 columns of W, rows of H rescaled so WH is unchanged.
void normalize_columns(NmfFactors& f);

double frobenius_sq(const Matrix& V, const Matrix& W, const Matrix& H);

// Training images [-1,1] -> [0,1].
std::vector<double> to_unit(std::span<const float> image);
// Mixture -> non-negative: (x - median) / 2, clamped at 0.
std::vector<double> shift_mixture(std::span<const float> mixture);
// Per-source estimate back to [-1,1].
std::vector<float> to_signed(std::span<const double> estimate);

struct NmfDictionary {
    Matrix W;  // kPixels x (classes * bases_per_class), unit columns
    std::size_t bases_per_class = 20;
    std::size_t classes = 10;

    std::size_t class_of(std::size_t column) const { return column / bases_per_class; }
};

struct NmfTrainOptions {
    std::size_t bases_per_class = 20;
    std::size_t images_per_class = 1000;
    std::size_t iterations = 200;
    std::uint64_t seed = 0;
};

// One block per digit from the first images_per_class images of that digit.
NmfDictionary train_dictionary(const mnist::ImageSet& train, const NmfTrainOptions& o);

Checkpoint export_dictionary(const NmfDictionary& d);
NmfDictionary load_dictionary(const Checkpoint& ck);

struct NmfResult {
    std::vector<double> H;  // one activation per dictionary column
    std::vector<double> activity;  // L1 of H per class
    std::vector<std::size_t> classes;  // top-K classes, most active first
    std::vector<std::vector<double>> estimates;  // W_c H_c per selected class
    std::vector<double> reconstruction;
    std::vector<double> objective;
    std::vector<std::vector<double>> kernels;  // per class, cNMF only
};

// W fixed, H >= 0 from multiplicative updates starting at 1.
NmfResult nmf_decompose(std::span<const double> mixture, const NmfDictionary& dict, std::size_t K,
                        std::size_t iterations);

struct CnmfOptions {
    std::size_t iterations = 500;  // H updates before any kernel step
    std::size_t kernel_size = 5;
    std::size_t alternations = 50;
    std::size_t kernel_steps = 200;  // projected-gradient steps per alternation
    std::size_t h_updates = 10;
};

// Model sum_c kernel_c * (W_c H_c) with one non-negative kernel per class,
// initialised to a centred delta. Estimates are the unconvolved W_c H_c.
NmfResult cnmf_decompose(std::span<const double> mixture, const NmfDictionary& dict, std::size_t K,
                         const CnmfOptions& o);

// Zero-padded same-size true convolution of an image with a square kernel.
std::vector<double> convolve_same(std::span<const double> image, std::span<const double> kernel,
                                  std::size_t ks, std::size_t side = mnist::kSide);

}  // namespace sdsep::baselines
