#pragma once

// Central finite-difference checks for tape gradients, plus the battery that
// exercises every differentiable op (used by the CLI `gradcheck` command and
// the acceptance suite).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdsep/tensor.hpp"

namespace sdsep {

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares d loss / d leaf from backward() against central differences with
// step h for every element of every leaf. `loss` rebuilds the scalar from
// the leaves' current values. Returns the maximum relative error.
inline double max_gradient_error(const std::function<Tensor<double>()>& loss,
                                 std::vector<Tensor<double>> leaves, double h = 1e-5) {
    for (auto& leaf : leaves) leaf.zero_grad();
    loss().backward();
    double worst = 0;
    for (auto& leaf : leaves) {
        std::vector<double> analytic(leaf.numel(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        auto values = leaf.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = loss().item();
            values[i] = saved - h;
            const double down = loss().item();
            values[i] = saved;
            worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
        }
    }
    return worst;
}

struct GradCheckRow {
    std::string op;
    int instances = 0;
    double max_error = 0;
    double tolerance = 0;
    bool passed() const { return max_error <= tolerance; }
};

// Runs `instances` random small problems per differentiable op (64-bit,
// h = 1e-5) and the conv2d/conv_transpose2d adjoint identity.
std::vector<GradCheckRow> run_gradcheck_battery(std::uint64_t seed, int instances = 20);

}  // namespace sdsep
