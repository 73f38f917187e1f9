#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sdsep/cnn.hpp"
#include "sdsep/errors.hpp"
#include "sdsep/nmf.hpp"

using namespace sdsep;
using namespace sdsep::baselines;

namespace {

constexpr std::size_t P = mnist::kPixels, S = mnist::kSide;

// Ten fixed "digit" prototypes made of a few bright rectangles, jittered per image.
mnist::ImageSet prototype_digits(std::size_t per_class, std::uint64_t seed) {
    Rng proto_rng(1234);
    std::vector<std::vector<int>> boxes(10);
    for (auto& b : boxes)
        for (int r = 0; r < 3; ++r) {
            const int y = int(proto_rng.uniform(2, 22)), x = int(proto_rng.uniform(2, 22));
            b.insert(b.end(), {y, x, 3 + int(proto_rng.uniform(0, 6)), 2 + int(proto_rng.uniform(0, 6))});
        }
    Rng rng(seed);
    std::vector<float> px;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < per_class * 10; ++i) {
        const std::size_t c = i % 10;
        std::vector<float> img(P, -1.f);
        const int dy = int(rng.uniform(-1, 2)), dx = int(rng.uniform(-1, 2));
        for (std::size_t r = 0; r < boxes[c].size(); r += 4)
            for (int y = boxes[c][r] + dy; y < boxes[c][r] + dy + boxes[c][r + 2]; ++y)
                for (int x = boxes[c][r + 1] + dx; x < boxes[c][r + 1] + dx + boxes[c][r + 3]; ++x)
                    if (y >= 0 && x >= 0 && y < int(S) && x < int(S)) img[y * S + x] = float(rng.uniform(0.6, 1));
        px.insert(px.end(), img.begin(), img.end());
        labels.push_back(std::uint8_t(c));
    }
    return mnist::ImageSet(std::move(px), std::move(labels), "prototypes");
}

NmfDictionary small_dictionary() {
    static const NmfDictionary d = [] {
        NmfTrainOptions o;
        o.bases_per_class = 4;
        o.images_per_class = 30;
        o.iterations = 100;
        o.seed = 5;
        return train_dictionary(prototype_digits(30, 9), o);
    }();
    return d;
}

double ncc(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= a.size(), mb /= b.size();
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += (a[i] - ma) * (b[i] - mb);
        aa += (a[i] - ma) * (a[i] - ma);
        bb += (b[i] - mb) * (b[i] - mb);
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(Nmf, RankOneRecoveredToOnePercent) {
    Rng rng(1);
    std::vector<double> u(40), w(30);
    rng.fill_uniform<double>(u, 0.1, 1);
    rng.fill_uniform<double>(w, 0.1, 1);
    Matrix V(40, 30);
    for (std::size_t i = 0; i < 40; ++i)
        for (std::size_t j = 0; j < 30; ++j) V(i, j) = u[i] * w[j];
    const auto f = nmf_train(V, 1, 500, 2);
    double norm = 0;
    for (double x : V.v) norm += x * x;
    EXPECT_LT(std::sqrt(f.objective.back() / norm), 1e-2);
}

TEST(Nmf, ZeroIterationsKeepsInitialisation) {
    Matrix V(10, 6, 0.5);
    const auto f = nmf_train(V, 3, 0, 42);
    Rng probe(42);
    std::vector<double> w(30);
    probe.fill_uniform<double>(w, 0.0, std::sqrt(0.5 / 3));
    EXPECT_EQ(f.W.v, w);
    ASSERT_EQ(f.objective.size(), 1u);
}

TEST(Nmf, ObjectiveMonotoneAndFactorsNonNegative) {
    const auto data = prototype_digits(20, 3);
    Matrix V(P, 60);
    for (std::size_t j = 0; j < 60; ++j) {
        const auto img = to_unit(data.image(j));
        for (std::size_t i = 0; i < P; ++i) V(i, j) = img[i];
    }
    for (std::size_t iters : {1, 7, 200}) {
        const auto f = nmf_train(V, 10, iters, 11);
        for (double x : f.W.v) ASSERT_GE(x, 0.0);
        for (double x : f.H.v) ASSERT_GE(x, 0.0);
        if (iters != 200) continue;
        ASSERT_EQ(f.objective.size(), 201u);
        for (std::size_t t = 1; t < f.objective.size(); ++t)
            EXPECT_LE(f.objective[t], f.objective[t - 1] * (1 + 1e-7)) << t;
    }
}

TEST(Nmf, NegativeInputRejected) {
    Matrix V(3, 3, 0.2);
    V(1, 1) = -0.1;
    EXPECT_THROW(nmf_train(V, 2, 5, 1), ContractError);
    std::vector<double> mix(P, 0.0);
    mix[3] = -1;
    EXPECT_THROW(nmf_decompose(mix, small_dictionary(), 1, 5), ContractError);
}

TEST(Nmf, NormalisationKeepsProduct) {
    Matrix V(12, 8);
    Rng rng(4);
    rng.fill_uniform<double>(V.v);
    auto f = nmf_train(V, 3, 20, 5);
    const double before = frobenius_sq(V, f.W, f.H);
    normalize_columns(f);
    EXPECT_NEAR(frobenius_sq(V, f.W, f.H), before, 1e-12);
    for (std::size_t j = 0; j < 3; ++j) {
        double n = 0;
        for (std::size_t i = 0; i < 12; ++i) n += f.W(i, j) * f.W(i, j);
        EXPECT_NEAR(n, 1.0, 1e-12);
    }
}

TEST(Nmf, DictionaryColumnsAreUnitAndNonNegative) {
    const auto d = small_dictionary();
    ASSERT_EQ(d.W.rows, P);
    ASSERT_EQ(d.W.cols, 40u);
    for (std::size_t j = 0; j < d.W.cols; ++j) {
        double n = 0;
        for (std::size_t i = 0; i < P; ++i) {
            ASSERT_GE(d.W(i, j), 0.0);
            n += d.W(i, j) * d.W(i, j);
        }
        EXPECT_NEAR(n, 1.0, 1e-9);
    }
    const auto back = load_dictionary(Checkpoint::deserialize(export_dictionary(d).serialize()));
    EXPECT_EQ(back.W.v, d.W.v);
    EXPECT_EQ(back.bases_per_class, 4u);
}

TEST(Nmf, DictionaryColumnSelectsItsClass) {
    const auto d = small_dictionary();
    for (std::size_t j = 0; j < d.W.cols; ++j) {
        std::vector<double> mix(P);
        for (std::size_t i = 0; i < P; ++i) mix[i] = d.W(i, j);
        const auto r = nmf_decompose(mix, d, 1, 300);
        EXPECT_EQ(r.classes[0], d.class_of(j)) << "column " << j;
    }
}

TEST(Nmf, ZeroMixtureGivesZeroActivations) {
    const auto d = small_dictionary();
    const auto r = nmf_decompose(std::vector<double>(P, 0.0), d, 2, 50);
    for (double h : r.H) EXPECT_LE(h, 1e-9);
    for (double v : r.reconstruction) EXPECT_LE(std::abs(v), 1e-9);
    EXPECT_EQ(r.estimates.size(), 2u);
}

TEST(Nmf, DigitPairMostlyAttributedToRightClasses) {
    const auto d = small_dictionary();
    const auto test = prototype_digits(10, 77);
    Rng rng(8);
    int right = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t a = rng.next_u64() % test.size();
        std::size_t b;
        do b = rng.next_u64() % test.size(); while (test.labels()[b] == test.labels()[a]);
        std::vector<float> mix(P);
        for (std::size_t i = 0; i < P; ++i) mix[i] = test.image(a)[i] + test.image(b)[i];
        const auto r = nmf_decompose(shift_mixture(mix), d, 2, 300);
        std::vector<std::size_t> want{test.labels()[a], test.labels()[b]}, got = r.classes;
        std::sort(want.begin(), want.end());
        std::sort(got.begin(), got.end());
        right += want == got;
    }
    EXPECT_GT(right, 25);
}

TEST(Nmf, ShiftHelpers) {
    std::vector<float> mix(P, -2.f);
    mix[0] = 1.f;
    const auto s = shift_mixture(mix);
    EXPECT_EQ(s[0], 1.5);
    EXPECT_EQ(s[1], 0.0);
    const auto back = to_signed(std::vector<double>{0.0, 0.5, 1.0});
    EXPECT_EQ(back, (std::vector<float>{-1.f, 0.f, 1.f}));
}

TEST(Cnmf, DeltaKernelsWithoutKernelStepsEqualNmf) {
    const auto d = small_dictionary();
    const auto test = prototype_digits(2, 5);
    const auto mix = shift_mixture(test.image(3));
    CnmfOptions o;
    o.iterations = 120;
    o.alternations = 0;
    const auto a = nmf_decompose(mix, d, 1, 120);
    const auto b = cnmf_decompose(mix, d, 1, o);
    EXPECT_EQ(a.H, b.H);
    EXPECT_EQ(a.classes, b.classes);
    EXPECT_EQ(a.estimates, b.estimates);
    EXPECT_EQ(a.objective, b.objective);
}

TEST(Cnmf, RecoversKnownKernelAndNeverIncreasesObjective) {
    const auto d = small_dictionary();
    Rng rng(21);
    int good = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = trial % 10;
        std::vector<double> h(d.bases_per_class);
        rng.fill_uniform<double>(h, 0.2, 1.0);
        std::vector<double> src(P, 0.0);
        for (std::size_t i = 0; i < P; ++i)
            for (std::size_t j = 0; j < d.bases_per_class; ++j)
                src[i] += d.W(i, c * d.bases_per_class + j) * h[j];
        std::vector<double> kernel(25);
        rng.fill_uniform<double>(kernel, 0.0, 1.0);
        const auto mix = convolve_same(src, kernel, 5);
        CnmfOptions o;
        o.iterations = 100;
        o.alternations = 50;
        o.h_updates = 10;
        const auto r = cnmf_decompose(mix, d, 1, o);
        EXPECT_LE(r.objective.back(), r.objective[o.iterations]);
        for (const auto& k : r.kernels)
            for (double v : k) ASSERT_GE(v, 0.0);
        if (r.classes[0] == c && ncc(r.kernels[c], kernel) > 0.7) ++good;
    }
    EXPECT_GE(good, 12);
}

TEST(Cnn, UntrainedModelIsDeterministicAndShapePreserving) {
    CnnConfig cfg;
    cfg.widths = {4, 4, 4};
    cfg.iterations = 0;
    const auto data = prototype_digits(4, 1);
    CnnTrainer a(cfg, data), b(cfg, data);
    a.run(10);
    EXPECT_EQ(a.iteration(), 0u);
    for (Shape s : {Shape{2, 1, 32, 32}, Shape{1, 1, 28, 28}, Shape{3, 1, 16, 20}}) {
        Rng rng(2);
        std::vector<float> v(shape_numel(s));
        rng.fill_normal<float>(v);
        const auto x = Tensor<float>::from(s, v);
        const auto ya = a.model().apply(x), yb = b.model().apply(x);
        EXPECT_EQ(ya.shape(), s);
        ASSERT_EQ(std::memcmp(ya.data().data(), yb.data().data(), ya.numel() * 4), 0);
    }
    EXPECT_THROW(a.model().apply(Tensor<float>::zeros({1, 2, 8, 8})), ShapeError);
}

TEST(Cnn, TrainingBeatsIdentityAndRoundTrips) {
    CnnConfig cfg;
    cfg.widths = {8, 8, 8};
    cfg.iterations = 150;
    cfg.batch_size = 8;
    cfg.seed = 3;
    const auto train = prototype_digits(20, 4), val = prototype_digits(3, 99);
    CnnTrainer t(cfg, train);
    t.run(cfg.iterations);
    const auto score = score_denoiser(t.model(), val, 30, 0.3, 7);
    EXPECT_LT(score.model_mse, score.identity_mse);
    const auto back = load_cnn(Checkpoint::deserialize(export_cnn(t.model()).serialize()));
    const auto again = score_denoiser(back, val, 30, 0.3, 7);
    EXPECT_EQ(again.model_mse, score.model_mse);
}
