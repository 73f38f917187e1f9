#pragma once

// Experiment configuration, read from TOML.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdsep/gan.hpp"

namespace sdsep {

struct DataConfig {
    std::filesystem::path dir = "data";
    std::size_t train_limit = 0;  // 0 = whole split
};

struct GanSection {
    std::array<std::size_t, 3> g_widths{128, 64, 32};
    std::array<std::size_t, 3> d_widths{32, 64, 128};
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double lr = 2e-4, beta1 = 0.5, beta2 = 0.999;
    bool non_saturating = true;
    std::size_t log_every = 50;
    std::size_t checkpoint_every = 500;
};

struct CnnSection {
    std::array<std::size_t, 3> widths{32, 64, 128};
    std::size_t kernel = 3;
    std::size_t iterations = 1500;
    std::size_t batch_size = 32;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999;
    double noise_sigma = 0.3;
    std::size_t log_every = 50;
};

struct NmfSection {
    std::size_t bases_per_class = 20;
    std::size_t images_per_class = 1000;
    std::size_t train_iterations = 200;
    std::size_t decompose_iterations = 500;
    std::size_t cnmf_kernel_size = 5;
    std::size_t cnmf_alternations = 50;
};

struct DecomposeSection {
    std::size_t iterations = 2000;
    double beta = 1e-3;
    double lr = 0.01, beta1 = 0.9, beta2 = 0.999;
    std::vector<std::size_t> restarts{1, 8, 32};
    std::size_t trace_every = 50;
    bool select_by_objective = false;
};

struct ScenarioSection {
    std::size_t count = 20;
    std::vector<std::string> kinds{"denoising",     "inpainting", "completion",
                                   "deconvolution", "separation", "separation_deconvolution"};
    std::size_t separation_sources = 2;
    double gaussian_sigma = 0.3;
    std::size_t bar_first_row = 12;
    std::size_t bar_rows = 8;
    double bar_value = 1.0;
    std::string half_side = "right";
    double half_value = -1.0;
    std::size_t filter_size = 5;
    double filter_std = 0.2;
    double constant_filter = 1.0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "runs";
    std::size_t threads = 0;  // 0 = hardware concurrency
    DataConfig data;
    GanSection gan;
    CnnSection cnn;
    NmfSection nmf;
    DecomposeSection decompose;
    ScenarioSection scenarios;
    // method -> scenario kinds it is evaluated on
    std::map<std::string, std::vector<std::string>> methods{
        {"sd", {"denoising", "inpainting", "completion", "deconvolution", "separation",
                "separation_deconvolution"}},
        {"nmf", {"denoising", "inpainting", "completion", "deconvolution", "separation",
                 "separation_deconvolution"}},
        {"cnmf", {"deconvolution", "separation", "separation_deconvolution"}},
        {"cnn", {"denoising", "inpainting", "completion"}}};
};

// Parses and validates; throws ParseError / ContractError with the offending key.
ExperimentConfig parse_config(const std::string& toml_text, const std::string& source = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const ExperimentConfig& c);

// Hash of every field that influences results (output location excluded).
std::string experiment_hash(const ExperimentConfig& c);

gan::TrainConfig gan_train_config(const ExperimentConfig& c, std::size_t train_size);

// Worker count: SD_SEP_THREADS, else the config value, else hardware threads.
std::size_t worker_count(const ExperimentConfig& c);

}  // namespace sdsep
