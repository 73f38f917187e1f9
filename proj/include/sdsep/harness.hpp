#pragma once

// Experiment orchestration shared by the CLI subcommands.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include "sdsep/cnn.hpp"
#include "sdsep/config.hpp"
#include "sdsep/decompose.hpp"
#include "sdsep/evalmetrics.hpp"
#include "sdsep/mixer.hpp"
#include "sdsep/mnist.hpp"
#include "sdsep/nmf.hpp"

namespace sdsep::harness {

namespace fs = std::filesystem;

// Artifact directories, each keyed by a hash of the settings that shape it.
fs::path gan_dir(const ExperimentConfig& c);
fs::path cnn_dir(const ExperimentConfig& c);
fs::path nmf_dir(const ExperimentConfig& c);
fs::path eval_dir(const ExperimentConfig& c);

mnist::ImageSet load_train(const ExperimentConfig& c);
mnist::ImageSet load_test(const ExperimentConfig& c);

// Trains (or resumes) the GAN; returns the exported generator path.
fs::path train_gan(const ExperimentConfig& c, std::size_t max_iterations = 0);

fs::path train_cnn(const ExperimentConfig& c);
fs::path train_nmf(const ExperimentConfig& c);

baselines::CnnConfig cnn_train_config(const ExperimentConfig& c);
baselines::NmfTrainOptions nmf_train_options(const ExperimentConfig& c);
baselines::CnmfOptions cnmf_options(const ExperimentConfig& c);
mixer::ScenarioSettings scenario_settings(const ExperimentConfig& c);

// Kinds in canonical table order, restricted to the config.
std::vector<mixer::ScenarioKind> configured_kinds(const ExperimentConfig& c);

std::uint64_t scenario_seed(const ExperimentConfig& c, mixer::ScenarioKind kind, std::size_t index);
fs::path scenario_path(const ExperimentConfig& c, mixer::ScenarioKind kind, std::size_t index);

// Writes any missing scenario directories; returns how many were created.
std::size_t make_scenarios(const ExperimentConfig& c);

// S-D settings for one scenario; `restarts` is the largest L requested.
decompose::DecomposeConfig sd_config(const ExperimentConfig& c, const mixer::Scenario& s,
                                     std::size_t restarts);

// Per-source estimates in [-1,1], plus filters where the method estimates them.
struct MethodOutput {
    std::vector<mixer::Image> estimates;
    std::vector<std::vector<float>> filters;
};

MethodOutput run_nmf(const mixer::Scenario& s, const baselines::NmfDictionary& d, std::size_t iterations);
MethodOutput run_cnmf(const mixer::Scenario& s, const baselines::NmfDictionary& d,
                      const baselines::CnmfOptions& o);
MethodOutput run_cnn(const mixer::Scenario& s, const baselines::CnnDenoiser& m);
MethodOutput sd_output(const decompose::Decomposition<float>& d);

// PSNR row for one method on one scenario ([0,1] intensities).
eval::Row score(const std::string& method, const mixer::Scenario& s, std::size_t index,
                const MethodOutput& out);

struct LoadedModels {
    std::unique_ptr<gan::Generator<float>> generator;
    std::unique_ptr<baselines::CnnDenoiser> cnn;
    std::unique_ptr<baselines::NmfDictionary> nmf;
};

// Loads every checkpoint the configured methods need; missing files throw
// MissingArtifact.
LoadedModels load_models(const ExperimentConfig& c);

struct MissingArtifact : std::runtime_error {
    explicit MissingArtifact(const fs::path& p)
        : std::runtime_error("missing checkpoint: " + p.string()), path(p) {}
    fs::path path;
};

// Runs every pending (method, kind, scenario) cell on a worker pool. Each cell
// result is an atomically written JSON under eval_dir/results; finished cells
// are skipped.
void run_cells(const ExperimentConfig& c, const LoadedModels& models);

// Reads cell results back (ordered), aggregates and writes report.json,
// report.txt and figure strips.
eval::Report evaluate(const ExperimentConfig& c);

// Trains what is missing, then scenarios, cells and the report.
eval::Report reproduce(const ExperimentConfig& c);

void log(const std::string& line);

}  // namespace sdsep::harness
