#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "sdsep/errors.hpp"
#include "sdsep/nn.hpp"

using namespace sdsep;
using nn::Mode;

namespace {

nn::AdamConfig adam(double lr, double b1 = 0.9, double b2 = 0.999) { return {lr, b1, b2, 1e-8}; }

void set_grad(Tensor<double>& p, std::vector<double> g) {
    p.zero_grad();
    auto dst = p.mutable_grad();
    std::copy(g.begin(), g.end(), dst.begin());
}

}  // namespace

TEST(Adam, ZeroGradientFreshStateLeavesParameters) {
    auto p = Tensor<double>::from({3}, {0.5, -1, 2}, true);
    nn::Adam<double> opt({p}, adam(0.1));
    set_grad(p, {0, 0, 0});
    ASSERT_TRUE(opt.step());
    EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()),
              (std::vector<double>{0.5, -1, 2}));
}

TEST(Adam, FirstStepHandEvaluated) {
    auto p = Tensor<double>::from({1}, {0.0}, true);
    nn::Adam<double> opt({p}, adam(0.1));
    set_grad(p, {1});
    opt.step();
    EXPECT_NEAR(p.data()[0], -0.1 / (1 + 1e-8), 1e-12);
}

TEST(Adam, ConstantGradientDecreasesEachStep) {
    auto p = Tensor<double>::from({1}, {0.0}, true);
    nn::Adam<double> opt({p}, adam(0.1));
    double prev = p.data()[0];
    for (int i = 0; i < 2; ++i) {
        set_grad(p, {1});
        opt.step();
        EXPECT_LT(p.data()[0], prev);
        prev = p.data()[0];
    }
    EXPECT_EQ(opt.iteration(), 2u);
}

TEST(Adam, ZeroLearningRateIsBitIdentical) {
    Rng rng(1);
    std::vector<double> v(50);
    rng.fill_normal<double>(v);
    auto p = Tensor<double>::from({50}, v, true);
    nn::Adam<double> opt({p}, adam(0.0));
    for (int s = 0; s < 5; ++s) {
        std::vector<double> g(50);
        rng.fill_normal<double>(g);
        set_grad(p, g);
        opt.step();
    }
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(p.data()[i], v[i]);
}

TEST(Adam, SecondMomentIgnoresGradientSign) {
    Rng rng(2);
    std::vector<double> g(20);
    rng.fill_normal<double>(g);
    std::vector<double> ng(g);
    for (auto& x : ng) x = -x;
    auto a = Tensor<double>::zeros({20}, true), b = Tensor<double>::zeros({20}, true);
    nn::Adam<double> oa({a}, adam(0.01)), ob({b}, adam(0.01));
    set_grad(a, g);
    set_grad(b, ng);
    oa.step();
    ob.step();
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(oa.second_moments()[0].data()[i], ob.second_moments()[0].data()[i]);
        EXPECT_GE(oa.second_moments()[0].data()[i], 0.0);
    }
}

TEST(Adam, StepOnConvexQuadraticReducesObjective) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> theta(8), c(8);
        rng.fill_normal<double>(theta);
        rng.fill_normal<double>(c);
        auto p = Tensor<double>::from({8}, theta, true);
        auto target = Tensor<double>::from({8}, c);
        auto objective = [&] {
            return ops::scale(ops::sum(ops::square(ops::sub(p, target))), 0.5);
        };
        nn::Adam<double> opt({p}, adam(1e-3));
        const double before = objective().item();
        objective().backward();
        opt.step();
        EXPECT_LT(objective().item(), before);
    }
}

TEST(Adam, NonFiniteGradientSkipsStep) {
    auto p = Tensor<double>::from({2}, {1.0, 2.0}, true);
    nn::Adam<double> opt({p}, adam(0.1));
    set_grad(p, {0.5, std::numeric_limits<double>::quiet_NaN()});
    EXPECT_FALSE(opt.step());
    EXPECT_FALSE(opt.last_diagnostic().empty());
    EXPECT_EQ(opt.iteration(), 0u);
    EXPECT_EQ(p.data()[0], 1.0);
    EXPECT_EQ(opt.first_moments()[0].data()[0], 0.0);
}

TEST(LayerStack, EmptyStackIsIdentity) {
    nn::LayerStack<double> stack;
    auto x = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    auto y = stack.forward(x, Mode::eval);
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
              (std::vector<double>{1, 2, 3, 4}));
}

TEST(LayerStack, SingleRelu) {
    nn::LayerStack<double> stack;
    stack.add<nn::Activation<double>>(nn::ActivationKind::relu);
    auto y = stack.forward(Tensor<double>::from({2}, {-1, 1}), Mode::eval);
    EXPECT_EQ(y.data()[0], 0.0);
    EXPECT_EQ(y.data()[1], 1.0);
}

TEST(LayerStack, GeneratorShapeChainReaches32x32) {
    nn::LayerStack<float> g("g");
    g.add<nn::Reshape<float>>(Shape{100, 1, 1});
    g.add<nn::ConvTranspose2d<float>>(100, 16, 4, ops::ConvGeometry{1, 0});
    g.add<nn::ConvTranspose2d<float>>(16, 8, 4, ops::ConvGeometry{2, 1});
    g.add<nn::ConvTranspose2d<float>>(8, 4, 4, ops::ConvGeometry{2, 1});
    g.add<nn::ConvTranspose2d<float>>(4, 1, 4, ops::ConvGeometry{2, 1});
    g.add<nn::Activation<float>>(nn::ActivationKind::tanh);
    Rng rng(4);
    g.initialize(rng);
    const auto chain = g.shape_chain({1, 100});
    EXPECT_EQ(chain[2], (Shape{1, 16, 4, 4}));
    EXPECT_EQ(chain.back(), (Shape{1, 1, 32, 32}));
    auto y = g.forward(Tensor<float>::zeros({1, 100, 1, 1}), Mode::eval);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 32, 32}));
}

TEST(LayerStack, ShapeMismatchThrows) {
    nn::LayerStack<float> s;
    s.add<nn::Conv2d<float>>(3, 4, 3, ops::ConvGeometry{1, 1});
    EXPECT_THROW(s.forward(Tensor<float>::zeros({1, 1, 8, 8}), Mode::eval), ShapeError);
    EXPECT_THROW(s.shape_chain({1, 1, 8, 8}), ShapeError);
}

TEST(LayerStack, InitialisationFollowsConvention) {
    nn::LayerStack<double> s("s");
    s.add<nn::Conv2d<double>>(8, 64, 4, ops::ConvGeometry{2, 1});
    s.add<nn::BatchNorm2d<double>>(64);
    Rng rng(5);
    s.initialize(rng);
    const auto params = s.parameters();
    ASSERT_EQ(params.size(), 3u);
    EXPECT_EQ(params[0].name, "s.0.weight");
    double mean = 0, sq = 0;
    for (double w : params[0].tensor.data()) mean += w, sq += w * w;
    const double n = double(params[0].tensor.numel());
    mean /= n;
    EXPECT_NEAR(mean, 0.0, 0.002);
    EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 0.02, 0.002);
    double gmean = 0;
    for (double g : params[1].tensor.data()) gmean += g;
    EXPECT_NEAR(gmean / 64, 1.0, 0.01);
    for (double b : params[2].tensor.data()) EXPECT_EQ(b, 0.0);
    EXPECT_EQ(s.buffers().size(), 2u);
    EXPECT_EQ(s.parameter_count(), 8u * 64 * 16 + 128);
}
