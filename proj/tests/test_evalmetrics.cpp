#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdsep/errors.hpp"
#include "sdsep/evalmetrics.hpp"
#include "sdsep/rng.hpp"

using namespace sdsep;

namespace {

std::vector<double> random_image(Rng& rng, std::size_t n = 1024) {
    std::vector<double> v(n);
    rng.fill_uniform<double>(v);
    return v;
}

double oracle_mse(const std::vector<double>& a, const std::vector<double>& b, std::size_t h,
                  std::size_t w) {
    double s = 0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double d = a[y * w + x] - b[y * w + x];
            s += d * d;
        }
    return s / double(h * w);
}

eval::Row row(std::string method, std::string kind, std::size_t idx, double mean) {
    eval::Row r;
    r.method = std::move(method);
    r.kind = std::move(kind);
    r.scenario = idx;
    r.psnr = {mean};
    r.permutation = {0};
    r.mean = mean;
    return r;
}

}  // namespace

TEST(Metrics, MseBasics) {
    Rng rng(1);
    const auto a = random_image(rng);
    EXPECT_EQ(eval::mse<double>(a, a), 0.0);
    std::vector<double> b(a);
    for (auto& v : b) v += 0.1;
    EXPECT_NEAR(eval::mse<double>(a, b), 0.01, 1e-15);
    for (int t = 0; t < 20; ++t) {
        const auto x = random_image(rng, 32 * 28), y = random_image(rng, 32 * 28);
        EXPECT_NEAR(eval::mse<double>(x, y), oracle_mse(x, y, 32, 28), 1e-10);
    }
    EXPECT_THROW(eval::mse<double>(a, std::vector<double>(10)), ShapeError);
}

TEST(Metrics, PsnrOfConstantOffsetIsExactlyTwenty) {
    std::vector<double> a(1024, 0.1), b(1024, 0.0);
    EXPECT_EQ(eval::psnr<double>(a, b), 20.0);
    std::vector<float> fa(1024, 0.1f), fb(1024, 0.0f);
    EXPECT_NEAR(eval::psnr<float>(fa, fb), 20.0, 1e-5);
}

TEST(Metrics, PsnrIdenticalIsInfinite) {
    Rng rng(2);
    const auto a = random_image(rng);
    EXPECT_TRUE(std::isinf(eval::psnr<double>(a, a)));
    EXPECT_GT(eval::psnr<double>(a, a), 0);
}

TEST(Metrics, PsnrSymmetricAndMonotoneInMse) {
    Rng rng(3);
    std::vector<std::pair<double, double>> pairs;
    for (int t = 0; t < 200; ++t) {
        const auto a = random_image(rng), b = random_image(rng);
        EXPECT_EQ(eval::psnr<double>(a, b), eval::psnr<double>(b, a));
        pairs.push_back({eval::mse<double>(a, b), eval::psnr<double>(a, b)});
    }
    std::sort(pairs.begin(), pairs.end());
    for (std::size_t i = 1; i < pairs.size(); ++i)
        if (pairs[i].first > pairs[i - 1].first) EXPECT_LT(pairs[i].second, pairs[i - 1].second);
}

TEST(Metrics, UnitRangeClamps) {
    const auto u = eval::unit_range(std::vector<float>{-1.f, 0.f, 1.f, 3.f, -2.f});
    EXPECT_EQ(u, (std::vector<double>{0, 0.5, 1, 1, 0}));
}

TEST(Match, SwappedEstimatesAreMatched) {
    Rng rng(4);
    const auto a = random_image(rng), b = random_image(rng);
    const auto m = eval::match_sources({b, a}, {a, b});
    EXPECT_EQ(m.permutation, (std::vector<std::size_t>{1, 0}));
    EXPECT_TRUE(std::isinf(m.psnr[0]) && std::isinf(m.psnr[1]));
    EXPECT_TRUE(std::isinf(m.mean));
}

TEST(Match, SingleSourceIsIdentity) {
    Rng rng(5);
    const auto m = eval::match_sources({random_image(rng)}, {random_image(rng)});
    EXPECT_EQ(m.permutation, (std::vector<std::size_t>{0}));
}

TEST(Match, ArgmaxOverAllPermutations) {
    Rng rng(6);
    for (int t = 0; t < 30; ++t) {
        const std::size_t K = 2 + t % 3;
        std::vector<std::vector<double>> est, truth;
        for (std::size_t k = 0; k < K; ++k) est.push_back(random_image(rng)), truth.push_back(random_image(rng));
        const auto m = eval::match_sources(est, truth);
        std::vector<std::size_t> perm(K);
        std::iota(perm.begin(), perm.end(), 0);
        double best = -1e300, identity = 0;
        bool first = true;
        do {
            double s = 0;
            for (std::size_t k = 0; k < K; ++k) s += eval::psnr<double>(est[perm[k]], truth[k]);
            if (first) identity = s / double(K), first = false;
            best = std::max(best, s / double(K));
        } while (std::next_permutation(perm.begin(), perm.end()));
        EXPECT_NEAR(m.mean, best, 1e-12);
        EXPECT_GE(m.mean, identity);

        // A common reordering of both lists leaves the score unchanged.
        std::vector<std::vector<double>> est2(est.rbegin(), est.rend()), truth2(truth.rbegin(), truth.rend());
        EXPECT_NEAR(eval::match_sources(est2, truth2).mean, m.mean, 1e-12);
    }
}

TEST(Match, Errors) {
    Rng rng(7);
    const auto a = random_image(rng);
    EXPECT_THROW(eval::match_sources({a, a}, {a}), ShapeError);
    EXPECT_THROW(eval::match_sources(std::vector<std::vector<double>>(5, a),
                                     std::vector<std::vector<double>>(5, a)),
                 ContractError);
}

TEST(Report, SingleRowAndMean) {
    auto r1 = eval::aggregate({row("nmf", "denoising", 0, 17.5)});
    ASSERT_EQ(r1.cells.size(), 1u);
    EXPECT_EQ(r1.cells[0].mean, 17.5);
    EXPECT_EQ(r1.cells[0].rows, 1u);
    auto r2 = eval::aggregate({row("nmf", "denoising", 0, 10), row("nmf", "denoising", 1, 20)});
    EXPECT_EQ(r2.cells[0].mean, 15.0);
    EXPECT_TRUE(eval::aggregate({}).cells.empty());
}

TEST(Report, InfinitiesAndFailuresCountedSeparately) {
    auto bad = row("cnn", "inpainting", 2, 0);
    bad.failed = true;
    bad.error = "boom";
    const auto r = eval::aggregate({row("cnn", "inpainting", 0, 12), row("cnn", "inpainting", 1, eval::kInfinity), bad});
    ASSERT_EQ(r.cells.size(), 1u);
    EXPECT_EQ(r.cells[0].mean, 12.0);
    EXPECT_EQ(r.cells[0].infinities, 1u);
    EXPECT_EQ(r.cells[0].failures, 1u);
    const auto j = eval::to_json(r);
    EXPECT_EQ(j["infinities"]["cnn"]["inpainting"], 1);
    EXPECT_TRUE(j["rows"][1]["mean"].is_null());
    EXPECT_EQ(j["rows"][2]["error"], "boom");
}

TEST(Report, AggregateEqualsRowMeanAndKindOrder) {
    Rng rng(8);
    std::vector<eval::Row> rows;
    for (const std::string kind : {"separation_deconvolution", "deconvolution", "separation"})
        for (const std::string m : {"sd-L32", "cnmf", "sd-L1", "nmf", "sd-L8"})
            for (std::size_t i = 0; i < 5; ++i) rows.push_back(row(m, kind, i, rng.uniform(5, 30)));
    const auto r = eval::aggregate(rows);
    for (const auto& c : r.cells) {
        double s = 0;
        std::size_t n = 0;
        for (const auto& x : r.rows)
            if (x.method == c.method && x.kind == c.kind) s += x.mean, ++n;
        EXPECT_NEAR(c.mean, s / double(n), 1e-12);
    }
    EXPECT_EQ(r.cells[0].method, "nmf");
    EXPECT_EQ(r.cells[0].kind, "deconvolution");
    EXPECT_EQ(r.cells[1].kind, "separation");
    EXPECT_EQ(r.cells[2].kind, "separation_deconvolution");
    EXPECT_EQ(r.cells.back().method, "sd-L32");
    const auto text = eval::render_text(r);
    const auto header = text.find("\nmethod", text.find("Deconvolution /"));
    const auto p1 = text.find("deconvolution", header), p2 = text.find(" separation ", header),
               p3 = text.find("separation_deconvolution", header);
    EXPECT_LT(p1, p2);
    EXPECT_LT(p2, p3);
    EXPECT_NE(text.find("S-D with 32 init."), std::string::npos);
    EXPECT_NE(text.find("Convolutive NMF"), std::string::npos);
}
