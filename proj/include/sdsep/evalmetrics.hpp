#pragma once

// MSE/PSNR, estimate-to-truth matching and table-shaped reports.

#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace sdsep::eval {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

template <typename T>
double mse(std::span<const T> a, std::span<const T> b);

// 20 log10(max / sqrt(mse)); +infinity when the images are identical.
template <typename T>
double psnr(std::span<const T> a, std::span<const T> b, double max_i = 1.0);

// [-1,1] -> [0,1], clamped.
std::vector<double> unit_range(std::span<const float> image);

struct Match {
    std::vector<std::size_t> permutation;  // estimate index matched to truth i
    std::vector<double> psnr;              // per truth
    double mean = 0;                       // infinity if every source is exact
};

// Mean over finite values; infinity when none are finite, NaN when empty.
double finite_mean(std::span<const double> values);

// Tries all K! pairings (K <= 4) and keeps the one with the highest mean PSNR,
// where more exact matches beat any finite score; ties go to the first in
// lexicographic order.
Match match_sources(const std::vector<std::vector<double>>& estimates,
                    const std::vector<std::vector<double>>& truths, double max_i = 1.0);

struct Row {
    std::string method;  // cell key, e.g. "sd-L8", "nmf"
    std::string kind;    // scenario kind name
    std::size_t scenario = 0;
    std::size_t K = 1;
    bool failed = false;
    std::string error;
    std::vector<double> psnr;
    std::vector<std::size_t> permutation;
    double mean = 0;
};

struct Cell {
    std::string method, kind;
    double mean = 0;  // over rows with a finite mean
    std::size_t rows = 0;
    std::size_t infinities = 0;
    std::size_t failures = 0;
};

struct Report {
    std::vector<Row> rows;
    std::vector<Cell> cells;  // sorted by method order, then kind order

    const Cell* find(const std::string& method, const std::string& kind) const;
};

Report aggregate(std::vector<Row> rows);

// Display order and labels.
const std::vector<std::string>& method_order();
std::string method_label(const std::string& method);
const std::vector<std::string>& restoration_kinds();  // denoising, inpainting, completion
const std::vector<std::string>& mixing_kinds();  // deconvolution, separation, separation_deconvolution

nlohmann::json to_json(const Row& row);
Row row_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Report& r);
std::string render_text(const Report& r);

}  // namespace sdsep::eval
