#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdsep/mnist.hpp"
#include "sdsep/rng.hpp"

namespace sdsep::mixer {

using Image = std::vector<float>;  // row-major, kSide x kSide unless noted

enum class FilterKind { constant, tensor };

struct MixFilter {
    FilterKind kind = FilterKind::constant;
    float value = 1.0f;          // constant filters
    std::size_t size = 0;        // tensor filters: size x size, odd
    std::vector<float> kernel;   // tensor filters, row-major

    static MixFilter constant(float v) { return {FilterKind::constant, v, 0, {}}; }
    static MixFilter tensor(std::size_t size, std::vector<float> k);
    std::size_t numel() const { return kind == FilterKind::constant ? 1 : kernel.size(); }
    std::vector<float> values() const {
        return kind == FilterKind::constant ? std::vector<float>{value} : kernel;
    }
};

enum class NoiseKind { none, gaussian, bar, half };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double sigma = 0.0;            // gaussian
    std::size_t first_row = 0;     // bar rows [first_row, first_row + rows)
    std::size_t rows = 0;
    std::string side = "right";    // half: left | right | top | bottom
    double value = 0.0;            // bar / half fill value
};

enum class ScenarioKind { denoising, inpainting, completion, deconvolution, separation, separation_deconvolution };

std::string kind_name(ScenarioKind k);
ScenarioKind parse_kind(const std::string& name);
// Kind -> (sources, filters, noise, mask) mapping.
std::size_t default_sources(ScenarioKind k, std::size_t separation_sources);
FilterKind filter_kind_of(ScenarioKind k);

struct Scenario {
    ScenarioKind kind = ScenarioKind::denoising;
    std::size_t K = 1;
    std::uint64_t seed = 0;
    Image mixture;
    std::vector<Image> sources;
    std::vector<MixFilter> filters;
    Image noise;
    NoiseSpec noise_spec;
    std::vector<std::uint8_t> labels;
    std::vector<std::size_t> source_indices;
};

// Zero-padded, same-size true convolution; constant filters scale.
Image convolve2d_same(std::span<const float> image, const MixFilter& filter,
                      std::size_t height = mnist::kSide, std::size_t width = mnist::kSide);

// `clean` is the noise-free mixture; bar and half noise are defined relative to it.
Image make_noise(const NoiseSpec& spec, std::span<const float> clean, Rng& rng,
                 std::size_t height = mnist::kSide, std::size_t width = mnist::kSide);

Scenario mix(const std::vector<Image>& sources, const std::vector<MixFilter>& filters,
             const NoiseSpec& noise, Rng& rng);

struct ScenarioSettings {
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

NoiseSpec noise_for(ScenarioKind kind, const ScenarioSettings& s);

// Draws sources from `pool` (distinct labels when K > 1), filters and noise.
Scenario make_scenario(ScenarioKind kind, const mnist::ImageSet& pool, const ScenarioSettings& s,
                       std::uint64_t seed);

// Directory form: manifest.json, mixture.f32, sources.f32, noise.f32,
// filters.f32 plus PGM previews.
void save_scenario(const Scenario& s, const std::filesystem::path& dir);
Scenario load_scenario(const std::filesystem::path& dir);

std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expect);
void write_f32(const std::filesystem::path& path, std::span<const float> values);

nlohmann::json noise_json(const NoiseSpec& n);

}  // namespace sdsep::mixer
