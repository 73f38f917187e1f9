#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "sdsep/errors.hpp"
#include "sdsep/mixer.hpp"

using namespace sdsep;
using namespace sdsep::mixer;

namespace {

constexpr std::size_t S = mnist::kSide;

// Direct evaluation of y(u) = sum_v a(u - v) s(v) with zero padding.
std::vector<double> brute_convolve(const Image& x, const std::vector<float>& k, std::size_t ks) {
    const long c = static_cast<long>(ks / 2);
    std::vector<double> y(S * S, 0.0);
    for (long i = 0; i < long(S); ++i)
        for (long j = 0; j < long(S); ++j) {
            double acc = 0;
            for (long vi = 0; vi < long(S); ++vi)
                for (long vj = 0; vj < long(S); ++vj) {
                    const long a = i - vi + c, b = j - vj + c;
                    if (a < 0 || b < 0 || a >= long(ks) || b >= long(ks)) continue;
                    acc += double(k[a * ks + b]) * x[vi * S + vj];
                }
            y[i * S + j] = acc;
        }
    return y;
}

Image random_image(Rng& rng) {
    Image x(S * S);
    rng.fill_uniform<float>(x, -1, 1);
    return x;
}

MixFilter random_filter(Rng& rng, std::size_t size = 5, double std = 0.2) {
    std::vector<float> k(size * size);
    rng.fill_normal<float>(k, 0, std);
    return MixFilter::tensor(size, k);
}

}  // namespace

TEST(Convolve, ConstantFiltersScaleExactly) {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const auto x = random_image(rng);
        const float c = static_cast<float>(rng.normal());
        const auto y = convolve2d_same(x, MixFilter::constant(c));
        for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(y[i], c * x[i]);
    }
    const auto x = random_image(rng);
    EXPECT_EQ(convolve2d_same(x, MixFilter::constant(1.0f)), x);
}

TEST(Convolve, OffsetTapShiftsImage) {
    Rng rng(2);
    const auto x = random_image(rng);
    std::vector<float> k(25, 0.0f);
    k[3 * 5 + 3] = 1.0f;  // (+1,+1) from the centre
    const auto y = convolve2d_same(x, MixFilter::tensor(5, k));
    const auto oracle = brute_convolve(x, k, 5);
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j) {
            EXPECT_EQ(y[i * S + j], oracle[i * S + j]);
            const float expect = (i >= 1 && j >= 1) ? x[(i - 1) * S + j - 1] : 0.0f;
            EXPECT_EQ(y[i * S + j], expect);
        }
}

TEST(Convolve, MatchesBruteForceOnRandomPairs) {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const auto x = random_image(rng);
        const auto f = random_filter(rng, 5, 1.0);
        const auto y = convolve2d_same(x, f);
        const auto oracle = brute_convolve(x, f.kernel, 5);
        for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], oracle[i], 1e-6);
    }
}

TEST(Mix, SingleSourceIdentity) {
    Rng rng(4);
    const auto x = random_image(rng);
    const auto s = mix({x}, {MixFilter::constant(1)}, {}, rng);
    EXPECT_EQ(s.mixture, x);
}

TEST(Mix, TwoConstantSourcesAdd) {
    Rng rng(5);
    const auto a = random_image(rng), b = random_image(rng);
    const auto s = mix({a, b}, {MixFilter::constant(1), MixFilter::constant(1)}, {}, rng);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(s.mixture[i], a[i] + b[i]);
}

TEST(Mix, ReconstructionIdentityWithRandomFilters) {
    Rng rng(6);
    for (int t = 0; t < 20; ++t) {
        const auto a = random_image(rng), b = random_image(rng);
        const auto fa = random_filter(rng), fb = random_filter(rng);
        NoiseSpec n{NoiseKind::gaussian, 0.3};
        const auto s = mix({a, b}, {fa, fb}, n, rng);
        const auto ya = brute_convolve(a, fa.kernel, 5), yb = brute_convolve(b, fb.kernel, 5);
        for (std::size_t i = 0; i < a.size(); ++i)
            ASSERT_NEAR(s.mixture[i], ya[i] + yb[i] + s.noise[i], 1e-6);
    }
}

TEST(Mix, LinearityOverSourceLists) {
    Rng rng(7);
    const auto a = random_image(rng), b = random_image(rng);
    const auto fa = random_filter(rng), fb = random_filter(rng);
    const auto sa = mix({a}, {fa}, {}, rng), sb = mix({b}, {fb}, {}, rng);
    const auto sab = mix({a, b}, {fa, fb}, {}, rng);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(sab.mixture[i], sa.mixture[i] + sb.mixture[i]);
}

TEST(Mix, EmptyOrMismatchedListsAreContractErrors) {
    Rng rng(8);
    EXPECT_THROW(mix({}, {}, {}, rng), ContractError);
    EXPECT_THROW(mix({random_image(rng)}, {}, {}, rng), ContractError);
}

TEST(Noise, GaussianZeroSigmaIsZero) {
    Rng rng(9);
    const Image clean(S * S, 0.5f);
    for (float v : make_noise({NoiseKind::gaussian, 0.0}, clean, rng)) EXPECT_EQ(v, 0.0f);
}

TEST(Noise, BarForcesRowsToValue) {
    Rng rng(10);
    const auto x = random_image(rng);
    NoiseSpec bar{NoiseKind::bar, 0, 12, 8, "right", 1.0};
    const auto s = mix({x}, {MixFilter::constant(1)}, bar, rng);
    for (std::size_t r = 0; r < S; ++r)
        for (std::size_t c = 0; c < S; ++c) {
            const bool in = r >= 12 && r < 20;
            EXPECT_EQ(s.mixture[r * S + c], in ? 1.0f : x[r * S + c]);
            EXPECT_NEAR(s.mixture[r * S + c], x[r * S + c] + s.noise[r * S + c], 1e-6);
        }
    NoiseSpec outside{NoiseKind::bar, 0, 28, 8, "right", 1.0};
    EXPECT_THROW(make_noise(outside, x, rng), ContractError);
}

TEST(Noise, HalfRemovesRightHalf) {
    Rng rng(11);
    const auto x = random_image(rng);
    NoiseSpec half{NoiseKind::half, 0, 0, 0, "right", -1.0};
    const auto s = mix({x}, {MixFilter::constant(1)}, half, rng);
    for (std::size_t r = 0; r < S; ++r)
        for (std::size_t c = 0; c < S; ++c) EXPECT_EQ(s.mixture[r * S + c], c >= 16 ? -1.0f : x[r * S + c]);
}

TEST(Noise, GaussianStatistics) {
    Rng rng(12);
    const Image clean(S * S, 0.0f);
    double sum = 0, sq = 0;
    const std::size_t n = 100 * S * S;
    for (int i = 0; i < 100; ++i)
        for (float v : make_noise({NoiseKind::gaussian, 0.3}, clean, rng)) sum += v, sq += double(v) * v;
    const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
    EXPECT_LT(std::abs(mean), 0.02);
    EXPECT_GE(sd, 0.28);
    EXPECT_LE(sd, 0.32);
}

TEST(Scenario, KindMappingAndRoundTrip) {
    Rng rng(13);
    std::vector<float> px(40 * S * S);
    rng.fill_uniform<float>(px, -1, 1);
    std::vector<std::uint8_t> labels(40);
    for (std::size_t i = 0; i < 40; ++i) labels[i] = static_cast<std::uint8_t>(i % 10);
    const mnist::ImageSet pool(px, labels, "synthetic");
    ScenarioSettings st;
    const auto dir = std::filesystem::temp_directory_path() / ("sdsep_scn_" + std::to_string(::getpid()));
    for (auto kind : {ScenarioKind::denoising, ScenarioKind::inpainting, ScenarioKind::completion,
                      ScenarioKind::deconvolution, ScenarioKind::separation,
                      ScenarioKind::separation_deconvolution}) {
        const auto s = make_scenario(kind, pool, st, 99);
        const bool multi = kind == ScenarioKind::separation || kind == ScenarioKind::separation_deconvolution;
        EXPECT_EQ(s.K, multi ? 2u : 1u);
        for (const auto& f : s.filters) EXPECT_EQ(f.kind, filter_kind_of(kind));
        if (multi) EXPECT_NE(s.labels[0], s.labels[1]);
        save_scenario(s, dir / kind_name(kind));
        const auto back = load_scenario(dir / kind_name(kind));
        EXPECT_EQ(back.mixture, s.mixture);
        EXPECT_EQ(back.sources, s.sources);
        EXPECT_EQ(back.noise, s.noise);
        EXPECT_EQ(back.kind, kind);
        for (std::size_t k = 0; k < s.K; ++k) EXPECT_EQ(back.filters[k].values(), s.filters[k].values());
        const auto again = make_scenario(kind, pool, st, 99);
        EXPECT_EQ(again.mixture, s.mixture);
    }
    std::filesystem::remove_all(dir);
}
