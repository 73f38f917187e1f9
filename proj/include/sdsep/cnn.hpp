#pragma once

// Supervised CNN denoiser baseline: regresses clean digits from noisy ones.

#include <array>
#include <cstdint>
#include <functional>

#include "sdsep/checkpoint.hpp"
#include "sdsep/mnist.hpp"
#include "sdsep/nn.hpp"

namespace sdsep::baselines {

struct CnnConfig {
    std::array<std::size_t, 3> widths{32, 64, 128};
    std::size_t kernel = 3;
    std::size_t iterations = 1500;
    std::size_t batch_size = 32;
    nn::AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
    double noise_sigma = 0.3;
    std::uint64_t seed = 0;
    std::size_t log_every = 50;
};

nlohmann::json to_json(const CnnConfig& c);

// conv+BN+ReLU x3, then a linear conv to one channel; same-size output.
class CnnDenoiser {
  public:
    CnnDenoiser(std::array<std::size_t, 3> widths, std::size_t kernel);
    Tensor<float> forward(const Tensor<float>& x, nn::Mode mode) const;
    // Eval mode, [B,1,32,32] -> [B,1,32,32].
    Tensor<float> apply(const Tensor<float>& x) const { return forward(x, nn::Mode::eval); }
    nn::LayerStack<float>& net() { return net_; }
    const nn::LayerStack<float>& net() const { return net_; }
    const std::array<std::size_t, 3>& widths() const { return widths_; }
    std::size_t kernel() const { return kernel_; }

  private:
    std::array<std::size_t, 3> widths_;
    std::size_t kernel_;
    nn::LayerStack<float> net_;
};

struct CnnLogEntry {
    std::size_t iteration;
    double loss;
};

class CnnTrainer {
  public:
    CnnTrainer(const CnnConfig& config, const mnist::ImageSet& data);
    // Runs until `target` iterations have completed (clamped to config).
    void run(std::size_t target, const std::function<void(const CnnLogEntry&)>& on_log = {});
    CnnLogEntry step();
    std::size_t iteration() const { return iteration_; }
    CnnDenoiser& model() { return model_; }

  private:
    CnnConfig config_;
    const mnist::ImageSet* data_;
    mnist::BatchStream batches_;
    CnnDenoiser model_;
    nn::Adam<float> opt_;
    Rng rng_;
    std::size_t iteration_ = 0;
};

Checkpoint export_cnn(const CnnDenoiser& m);
CnnDenoiser load_cnn(const Checkpoint& ck);

// Mean squared error per pixel of the denoiser and of the identity map on
// noisy copies of `images`.
struct DenoiseScore {
    double model_mse;
    double identity_mse;
};
DenoiseScore score_denoiser(const CnnDenoiser& m, const mnist::ImageSet& images, std::size_t count,
                            double sigma, std::uint64_t seed);

}  // namespace sdsep::baselines
