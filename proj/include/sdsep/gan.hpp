#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdsep/checkpoint.hpp"
#include "sdsep/mnist.hpp"
#include "sdsep/nn.hpp"

namespace sdsep::gan {

struct Architecture {
    std::size_t z_dim = 100;
    std::array<std::size_t, 3> g_widths{512, 256, 128};
    std::array<std::size_t, 3> d_widths{128, 256, 512};
    double leaky_slope = 0.2;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

// Parameter counts implied by an architecture (no conv biases; batchnorm
// gamma and beta counted).
std::size_t generator_parameter_count(const Architecture& a);
std::size_t discriminator_parameter_count(const Architecture& a);

constexpr std::size_t kDefaultGeneratorParams = 3'444'480;
constexpr std::size_t kDefaultDiscriminatorParams = 2'633'216;

// z [B, z_dim] -> image [B,1,32,32] in (-1,1).
template <typename T>
class Generator {
  public:
    explicit Generator(const Architecture& arch);
    Tensor<T> forward(const Tensor<T>& z, nn::Mode mode) const;
    // Eval-mode forward: a pure function of z.
    Tensor<T> generate(const Tensor<T>& z) const { return forward(z, nn::Mode::eval); }
    nn::LayerStack<T>& net() { return net_; }
    const nn::LayerStack<T>& net() const { return net_; }
    const Architecture& architecture() const { return arch_; }

  private:
    Architecture arch_;
    nn::LayerStack<T> net_;
};

// image [B,1,32,32] -> logits [B].
template <typename T>
class Discriminator {
  public:
    explicit Discriminator(const Architecture& arch);
    Tensor<T> logits(const Tensor<T>& x, nn::Mode mode) const;
    // Eval-mode probabilities in (0,1).
    Tensor<T> discriminate(const Tensor<T>& x) const;
    nn::LayerStack<T>& net() { return net_; }
    const nn::LayerStack<T>& net() const { return net_; }

  private:
    Architecture arch_;
    nn::LayerStack<T> net_;
};

struct TrainConfig {
    Architecture arch;
    std::size_t iterations = 18750;
    std::size_t batch_size = 64;
    nn::AdamConfig adam{2e-4, 0.5, 0.999, 1e-8};
    bool non_saturating = true;
    std::uint64_t seed = 1;
    std::size_t log_every = 50;
    std::size_t checkpoint_every = 500;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LogEntry {
    std::size_t iteration;
    double d_loss;
    double g_loss_non_saturating;
    double g_loss_literal;
    double mean_d_fake;
};

// Alternating D/G Adam updates. All state needed to continue bit-exactly is
// captured by save().
class Trainer {
  public:
    Trainer(const TrainConfig& config, const mnist::ImageSet& data);

    std::size_t iteration() const { return iteration_; }
    // Runs until `target` iterations have completed (clamped to config).
    // Throws NumericError on a non-finite loss; the trainer must then be
    // restored from its last checkpoint.
    void run(std::size_t target, const std::function<void(const LogEntry&)>& on_log = {});
    LogEntry step();

    Checkpoint save() const;
    void restore(const Checkpoint& ck);

    Generator<float>& generator() { return g_; }
    Discriminator<float>& discriminator() { return d_; }
    const TrainConfig& config() const { return config_; }

  private:
    TrainConfig config_;
    const mnist::ImageSet* data_;
    mnist::BatchStream batches_;
    Generator<float> g_;
    Discriminator<float> d_;
    nn::Adam<float> g_opt_, d_opt_;
    Rng rng_;
    std::size_t iteration_ = 0;
};

// Generator weights plus architecture, for decomposition.
Checkpoint export_generator(const Generator<float>& g);
// Accepts either a full training checkpoint or an exported generator.
Generator<float> load_generator(const Checkpoint& ck);

std::string config_hash(const TrainConfig& c);

}  // namespace sdsep::gan
