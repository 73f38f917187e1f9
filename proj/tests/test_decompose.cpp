#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "sdsep/decompose.hpp"
#include "sdsep/errors.hpp"
#include "sdsep/gradcheck.hpp"

using namespace sdsep;
using decompose::DecomposeConfig;
using mixer::FilterKind;

namespace {

constexpr std::size_t P = mnist::kPixels, S = mnist::kSide;

gan::Architecture tiny() {
    gan::Architecture a;
    a.z_dim = 8;
    a.g_widths = {8, 4, 2};
    a.d_widths = {2, 4, 8};
    return a;
}

template <typename T>
gan::Generator<T> frozen_generator(std::uint64_t seed = 1) {
    gan::Generator<T> g(tiny());
    Rng rng(seed);
    g.net().initialize(rng);
    g.net().set_trainable(false);
    return g;
}

template <typename T>
Tensor<T> randn(Rng& rng, Shape shape, bool grad = false, double sd = 1.0) {
    std::vector<T> v(shape_numel(shape));
    rng.fill_normal<T>(v, 0.0, sd);
    return Tensor<T>::from(std::move(shape), std::move(v), grad);
}

// Zero-padded true convolution, straight loops.
std::vector<double> brute_convolve(std::span<const double> img, std::span<const double> k,
                                   std::size_t ks) {
    std::vector<double> out(P, 0.0);
    const long r = long(ks / 2);
    for (long y = 0; y < long(S); ++y)
        for (long x = 0; x < long(S); ++x) {
            double acc = 0;
            for (long i = -r; i <= r; ++i)
                for (long j = -r; j <= r; ++j) {
                    const long sy = y - i, sx = x - j;
                    if (sy < 0 || sx < 0 || sy >= long(S) || sx >= long(S)) continue;
                    acc += k[(i + r) * ks + (j + r)] * img[sy * S + sx];
                }
            out[y * S + x] = acc;
        }
    return out;
}

DecomposeConfig small_config(std::size_t K, FilterKind kind, std::size_t iters,
                             std::size_t restarts = 1) {
    DecomposeConfig c;
    c.K = K;
    c.filter_kind = kind;
    c.iterations = iters;
    c.restarts = restarts;
    c.seed = 77;
    c.trace_every = 10;
    return c;
}

// A mixture the tiny generator can roughly explain, plus some noise.
template <typename T>
Tensor<T> synthetic_mixture(const gan::Generator<T>& g, std::size_t K, Rng& rng) {
    auto z = randn<T>(rng, {K, tiny().z_dim});
    std::vector<T> a(K, T(1));
    auto x = decompose::reconstruct(g, z, Tensor<T>::from({K}, a));
    std::vector<T> v(x.data().begin(), x.data().end());
    for (auto& p : v) p += T(rng.normal(0, 0.05));
    return Tensor<T>::from({1, 1, S, S}, v);
}

template <typename T>
bool bit_equal(const std::vector<T>& a, const std::vector<T>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
bool same_restart(const decompose::Restart<T>& a, const decompose::Restart<T>& b) {
    return bit_equal(a.seeds, b.seeds) && bit_equal(a.filters, b.filters) &&
           bit_equal(a.sources, b.sources) && bit_equal(a.reconstruction, b.reconstruction) &&
           a.objective == b.objective && a.failed == b.failed;
}

}  // namespace

TEST(Reconstruct, ZeroConstantFilterGivesZeroImage) {
    auto g = frozen_generator<float>();
    Rng rng(2);
    const auto y = decompose::reconstruct(g, randn<float>(rng, {1, 8}), Tensor<float>::from({1}, {0.f}));
    EXPECT_EQ(y.shape(), (Shape{1, 1, S, S}));
    for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Reconstruct, UnitConstantFilterIsGenerateExactly) {
    auto g = frozen_generator<float>();
    Rng rng(3);
    const auto z = randn<float>(rng, {1, 8});
    const auto y = decompose::reconstruct(g, z, Tensor<float>::from({1}, {1.f}));
    const auto ref = g.generate(z);
    ASSERT_EQ(y.numel(), ref.numel());
    EXPECT_EQ(std::memcmp(y.data().data(), ref.data().data(), y.numel() * sizeof(float)), 0);
}

TEST(Reconstruct, ShapeMismatchThrows) {
    auto g = frozen_generator<float>();
    Rng rng(4);
    const auto z = randn<float>(rng, {2, 8});
    EXPECT_THROW(decompose::reconstruct(g, z, Tensor<float>::from({1}, {1.f})), ShapeError);
    EXPECT_THROW(decompose::reconstruct(g, randn<float>(rng, {2, 7}), Tensor<float>::from({2}, {1.f, 1.f})),
                 ShapeError);
    EXPECT_THROW(decompose::reconstruct(g, z, Tensor<float>::zeros({2, 1, 5, 3})), ShapeError);
}

TEST(Reconstruct, FilterGradientMatchesFiniteDifferences) {
    auto g = frozen_generator<double>();
    Rng rng(5);
    const auto z = randn<double>(rng, {1, 8});
    auto k = randn<double>(rng, {1, 1, 5, 5}, true);
    const auto x = randn<double>(rng, {1, 1, S, S});
    const auto loss = [&] {
        return ops::sum(ops::square(ops::sub(x, decompose::reconstruct(g, z, k))));
    };
    EXPECT_LT(max_gradient_error(loss, {k}), 1e-3);
}

TEST(Objective, FullGradientMatchesFiniteDifferences) {
    auto g = frozen_generator<double>();
    for (auto kind : {FilterKind::constant, FilterKind::tensor}) {
        Rng rng(6);
        auto z = randn<double>(rng, {2, 8}, true);
        auto a = kind == FilterKind::constant ? randn<double>(rng, {2}, true)
                                              : randn<double>(rng, {2, 1, 5, 5}, true);
        const auto x = randn<double>(rng, {1, 1, S, S});
        const auto loss = [&] { return decompose::objective(x, g, z, a, 1e-3); };
        EXPECT_LT(max_gradient_error(loss, {z, a}), 1e-3);
    }
}

TEST(Objective, PerfectReconstructionWithoutPenaltyIsZero) {
    auto g = frozen_generator<double>();
    Rng rng(7);
    const auto z = randn<double>(rng, {2, 8});
    const auto a = randn<double>(rng, {2, 1, 5, 5});
    const auto x = decompose::reconstruct(g, z, a);
    EXPECT_EQ(decompose::objective(x, g, z, a, 0.0).item(), 0.0);
}

TEST(Objective, PenaltyOfConstantTwo) {
    auto g = frozen_generator<double>();
    Rng rng(8);
    const auto z = randn<double>(rng, {1, 8});
    const auto a = Tensor<double>::from({1}, {2.0});
    const auto x = decompose::reconstruct(g, z, a);
    EXPECT_NEAR(decompose::objective(x, g, z, a, 0.001).item(), 0.004, 1e-15);
}

TEST(Objective, AgreesWithStraightLineEvaluator) {
    auto g = frozen_generator<double>();
    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t K = 1 + trial % 3;
        const auto z = randn<double>(rng, {K, 8});
        const auto a = randn<double>(rng, {K, 1, 5, 5});
        const auto x = randn<double>(rng, {1, 1, S, S});
        const double beta = 0.01 * (trial + 1);

        std::vector<double> recon(P, 0.0);
        double pen = 0;
        for (std::size_t k = 0; k < K; ++k) {
            std::vector<double> zk(z.data().begin() + k * 8, z.data().begin() + (k + 1) * 8);
            const auto src = g.generate(Tensor<double>::from({1, 8}, zk));
            const auto conv = brute_convolve(src.data(), a.data().subspan(k * 25, 25), 5);
            for (std::size_t i = 0; i < P; ++i) recon[i] += conv[i];
        }
        for (double v : a.data()) pen += v * v;
        double expect = beta * pen;
        for (std::size_t i = 0; i < P; ++i) expect += (x.data()[i] - recon[i]) * (x.data()[i] - recon[i]);
        const double got = decompose::objective(x, g, z, a, beta).item();
        EXPECT_NEAR(got, expect, 1e-6 * std::max(1.0, std::abs(expect)));
    }
}

TEST(Decompose, ZeroIterationsReturnsInitialization) {
    auto g = frozen_generator<float>();
    Rng mrng(10);
    const auto x = synthetic_mixture(g, 1, mrng);
    const auto c = small_config(1, FilterKind::constant, 0);
    Rng rng(11), probe(11);
    const auto r = decompose::decompose_once(x, g, c, rng);
    std::vector<float> z0(8), a0(1);
    probe.fill_normal<float>(z0);
    probe.fill_normal<float>(a0);
    EXPECT_TRUE(bit_equal(r.seeds, z0));
    EXPECT_TRUE(bit_equal(r.filters, a0));
    ASSERT_EQ(r.trace.size(), 1u);
    EXPECT_EQ(r.trace[0].iteration, 0u);
    EXPECT_NEAR(r.trace[0].objective, r.objective, 1e-9 * r.objective);
}

TEST(Decompose, IdenticalStreamsAreBitIdentical) {
    auto g = frozen_generator<float>();
    Rng mrng(12);
    const auto x = synthetic_mixture(g, 2, mrng);
    const auto c = small_config(2, FilterKind::tensor, 40);
    Rng a(13), b(13);
    EXPECT_TRUE(same_restart(decompose::decompose_once(x, g, c, a),
                             decompose::decompose_once(x, g, c, b)));
}

TEST(Decompose, SingleRestartEqualsStreamZero) {
    auto g = frozen_generator<float>();
    Rng mrng(14);
    const auto x = synthetic_mixture(g, 1, mrng);
    const auto c = small_config(1, FilterKind::constant, 30);
    const auto d = decompose::decompose(x, g, c);
    Rng s0(derive_seed(c.seed, 0));
    EXPECT_TRUE(same_restart(d.best(), decompose::decompose_once(x, g, c, s0)));
}

TEST(Decompose, RestartsAreIndependentOfBatch) {
    auto g = frozen_generator<float>();
    Rng mrng(15);
    const auto x = synthetic_mixture(g, 2, mrng);
    const auto c = small_config(2, FilterKind::tensor, 20, 4);
    const auto d = decompose::decompose(x, g, c);
    for (std::size_t i = 0; i < 4; ++i) {
        Rng si(derive_seed(c.seed, i));
        EXPECT_TRUE(same_restart(d.restarts[i], decompose::decompose_once(x, g, c, si))) << i;
    }
}

TEST(Decompose, MoreRestartsNeverWorse) {
    auto g = frozen_generator<float>();
    Rng mrng(16);
    const auto x = synthetic_mixture(g, 1, mrng);
    double prev = std::numeric_limits<double>::infinity();
    decompose::Decomposition<float> d32;
    for (std::size_t L : {1, 8, 32}) {
        auto c = small_config(1, FilterKind::constant, 25, L);
        const auto d = decompose::decompose(x, g, c);
        EXPECT_LE(d.best().reconstruction_error, prev);
        prev = d.best().reconstruction_error;
        if (L == 32) d32 = d;
    }
    // Selecting among a prefix of a larger run gives the smaller run.
    const auto d8 = decompose::decompose(x, g, small_config(1, FilterKind::constant, 25, 8));
    const auto sub = decompose::first_restarts(d32, 8);
    EXPECT_EQ(sub.chosen, d8.chosen);
    EXPECT_TRUE(same_restart(sub.best(), d8.best()));
}

TEST(Decompose, SelectionUsesReconstructionErrorWithLowestIndexTies) {
    std::vector<decompose::Restart<float>> rs(4);
    rs[0].reconstruction_error = 3, rs[0].objective = 3.5;
    rs[1].reconstruction_error = 2, rs[1].objective = 9;
    rs[2].reconstruction_error = 2, rs[2].objective = 2.1;
    rs[3].reconstruction_error = 1, rs[3].failed = true;
    EXPECT_EQ(decompose::select_restart(rs, false), 1u);
    EXPECT_EQ(decompose::select_restart(rs, true), 2u);
}

TEST(Decompose, StoredFieldsAreConsistent) {
    auto g = frozen_generator<float>();
    Rng mrng(17);
    const auto x = synthetic_mixture(g, 2, mrng);
    auto c = small_config(2, FilterKind::tensor, 30, 3);
    c.beta = 0.05;
    const auto d = decompose::decompose(x, g, c);
    for (const auto& r : d.restarts) {
        double err = 0, pen = 0;
        for (std::size_t i = 0; i < P; ++i) {
            const double e = double(x.data()[i]) - r.reconstruction[i];
            err += e * e;
        }
        for (float a : r.filters) pen += double(a) * a;
        EXPECT_NEAR(r.objective, err + c.beta * pen, 1e-5 * r.objective);
        // Doubling the filters adds 3 beta ||a||^2 to the penalty term.
        double pen2 = 0;
        for (float a : r.filters) pen2 += (2.0 * a) * (2.0 * a);
        EXPECT_NEAR(c.beta * pen2 - c.beta * pen, 3 * c.beta * pen, 1e-9 * pen);
        const auto src = g.generate(Tensor<float>::from({2, 8}, r.seeds));
        EXPECT_TRUE(bit_equal(r.sources, std::vector<float>(src.data().begin(), src.data().end())));
        ASSERT_FALSE(r.trace.empty());
        EXPECT_EQ(r.trace.back().iteration, 30u);
    }
}

TEST(Decompose, DescendsOnMostInstances) {
    auto g = frozen_generator<float>();
    Rng rng(18);
    int descended = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t K = 1 + i % 2;
        const auto x = synthetic_mixture(g, K, rng);
        auto c = small_config(K, i % 3 == 0 ? FilterKind::tensor : FilterKind::constant, 100);
        Rng r(derive_seed(99, i));
        const auto res = decompose::decompose_once(x, g, c, r);
        descended += res.trace.back().objective <= res.trace.front().objective;
    }
    EXPECT_GE(descended, 95);
}

TEST(Decompose, RecoversPlantedSeedReasonably) {
    // The planted mixture is reachable, so some restart should fit it well.
    auto g = frozen_generator<float>();
    Rng rng(19);
    const auto z = randn<float>(rng, {1, 8});
    const auto x = decompose::reconstruct(g, z, Tensor<float>::from({1}, {1.f}));
    auto c = small_config(1, FilterKind::constant, 400, 8);
    c.beta = 0;
    const auto d = decompose::decompose(x, g, c);
    double energy = 0;
    for (float v : x.data()) energy += double(v) * v;
    EXPECT_LT(d.best().reconstruction_error, 0.05 * energy);
}

TEST(Decompose, AllFailedRestartsThrow) {
    auto g = frozen_generator<float>();
    std::vector<float> v(P, 0.f);
    v[5] = std::numeric_limits<float>::quiet_NaN();
    const auto x = Tensor<float>::from({1, 1, S, S}, v);
    EXPECT_THROW(decompose::decompose(x, g, small_config(1, FilterKind::constant, 5, 3)),
                 NumericError);
    Rng rng(20);
    const auto r = decompose::decompose_once(x, g, small_config(1, FilterKind::constant, 5), rng);
    EXPECT_TRUE(r.failed);
    EXPECT_FALSE(r.diagnostic.empty());
}

TEST(Decompose, RejectsTrainableGeneratorAndBadConfig) {
    gan::Generator<float> g(tiny());
    Rng rng(21);
    g.net().initialize(rng);
    const auto x = Tensor<float>::zeros({1, 1, S, S});
    EXPECT_THROW(decompose::decompose(x, g, small_config(1, FilterKind::constant, 1)), ContractError);
    g.net().set_trainable(false);
    auto c = small_config(1, FilterKind::constant, 1);
    c.restarts = 0;
    EXPECT_THROW(decompose::decompose(x, g, c), ContractError);
    c = small_config(0, FilterKind::constant, 1);
    EXPECT_THROW(decompose::decompose(x, g, c), ContractError);
    c = small_config(1, FilterKind::constant, 1);
    c.beta = -1;
    EXPECT_THROW(decompose::decompose(x, g, c), ContractError);
    EXPECT_THROW(decompose::decompose(Tensor<float>::zeros({1, 1, 28, 28}), g,
                                      small_config(1, FilterKind::constant, 1)),
                 ShapeError);
}

TEST(Decompose, SaveLoadRoundTrip) {
    auto g = frozen_generator<float>();
    Rng mrng(22);
    const auto x = synthetic_mixture(g, 2, mrng);
    const auto d = decompose::decompose(x, g, small_config(2, FilterKind::tensor, 10, 3));
    const auto dir = std::filesystem::temp_directory_path() / "sdsep_test_decomp";
    std::filesystem::remove_all(dir);
    decompose::save_decomposition(d, dir);
    EXPECT_TRUE(std::filesystem::exists(dir / "source1.pgm"));
    const auto back = decompose::load_decomposition(dir);
    EXPECT_EQ(back.chosen, d.chosen);
    ASSERT_EQ(back.restarts.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_TRUE(same_restart(back.restarts[i], d.restarts[i]));
        EXPECT_EQ(back.restarts[i].trace.size(), d.restarts[i].trace.size());
    }
    EXPECT_EQ(back.config.filter_kind, FilterKind::tensor);
    std::filesystem::remove_all(dir);
}
