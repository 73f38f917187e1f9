#pragma once

// Seed and filter search against a frozen generator.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdsep/gan.hpp"
#include "sdsep/mixer.hpp"
#include "sdsep/nn.hpp"
#include "sdsep/rng.hpp"
#include "sdsep/tensor.hpp"

namespace sdsep::decompose {

struct DecomposeConfig {
    std::size_t K = 1;
    mixer::FilterKind filter_kind = mixer::FilterKind::constant;
    std::size_t filter_size = 5;
    double beta = 1e-3;
    std::size_t iterations = 2000;
    std::size_t restarts = 1;
    nn::AdamConfig adam{0.01, 0.9, 0.999, 1e-8};
    std::uint64_t seed = 0;
    std::size_t trace_every = 50;
    bool select_by_objective = false;

    std::size_t filter_numel() const {
        return filter_kind == mixer::FilterKind::constant ? 1 : filter_size * filter_size;
    }
    void validate() const;
};

nlohmann::json to_json(const DecomposeConfig& c);
DecomposeConfig config_from_json(const nlohmann::json& j);

struct TracePoint {
    std::size_t iteration;
    double objective;
};

template <typename T>
struct Restart {
    std::size_t index = 0;
    bool failed = false;
    std::string diagnostic;
    std::vector<T> seeds;           // K x z_dim
    std::vector<T> filters;         // K x filter_numel
    std::vector<T> sources;         // K x 1024
    std::vector<T> reconstruction;  // 1024
    double reconstruction_error = 0;
    double penalty = 0;  // sum of squared filter entries
    double objective = 0;
    std::vector<TracePoint> trace;
};

template <typename T>
struct Decomposition {
    DecomposeConfig config;
    std::vector<Restart<T>> restarts;
    std::size_t chosen = 0;

    const Restart<T>& best() const { return restarts.at(chosen); }
};

// seeds [K, z_dim]; filters [K] (constant) or [K,1,s,s]. Returns [1,1,32,32].
template <typename T>
Tensor<T> reconstruct(const gan::Generator<T>& g, const Tensor<T>& seeds, const Tensor<T>& filters);

// ||x - reconstruct||^2 + beta * ||filters||^2 as a scalar tensor.
template <typename T>
Tensor<T> objective(const Tensor<T>& x, const gan::Generator<T>& g, const Tensor<T>& seeds,
                    const Tensor<T>& filters, double beta);

// The generator must be frozen (net().set_trainable(false)).
// Initial seeds then filters are drawn N(0,1) from `rng`.
template <typename T>
Restart<T> decompose_once(const Tensor<T>& x, const gan::Generator<T>& g,
                          const DecomposeConfig& config, Rng& rng);

// Restart i draws from Rng(derive_seed(config.seed, i)) whatever the restart count.
template <typename T>
Decomposition<T> decompose(const Tensor<T>& x, const gan::Generator<T>& g,
                           const DecomposeConfig& config);

// Re-selects among the first `restarts` entries; throws NumericError if all failed.
template <typename T>
Decomposition<T> first_restarts(const Decomposition<T>& d, std::size_t restarts);

template <typename T>
std::size_t select_restart(const std::vector<Restart<T>>& restarts, bool by_objective);

// manifest.json plus f32 tensors and PGM previews of the chosen restart.
void save_decomposition(const Decomposition<float>& d, const std::filesystem::path& dir);
Decomposition<float> load_decomposition(const std::filesystem::path& dir);

}  // namespace sdsep::decompose
