#include "sdsep/gradcheck.hpp"

#include "sdsep/ops.hpp"
#include "sdsep/rng.hpp"

namespace sdsep {
namespace {

using T = double;
using Tn = Tensor<double>;

Tn random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    rng.fill_uniform<double>(v, lo, hi);
    return Tn::from(std::move(shape), std::move(v), grad);
}

// Weighted sum with fixed random weights, so every output element carries a
// distinct upstream gradient.
Tn weighted_sum(const Tn& y, const Tn& weights) { return ops::sum(ops::mul(y, weights)); }

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.next_u64() % (hi - lo + 1));
}

// Registers one op: make(rng) returns the leaves plus a function computing the
// op output from them.
struct Case {
    std::vector<Tn> leaves;
    std::function<Tn()> output;
};

GradCheckRow check_op(const std::string& name, Rng& rng, int instances, double tol,
                      const std::function<Case(Rng&)>& make) {
    GradCheckRow row{name, instances, 0.0, tol};
    for (int i = 0; i < instances; ++i) {
        Case c = make(rng);
        const Tn probe = c.output();
        const Tn weights = random_tensor(rng, probe.shape(), -1.0, 1.0, false);
        auto loss = [&] { return weighted_sum(c.output(), weights); };
        row.max_error = std::max(row.max_error, max_gradient_error(loss, c.leaves));
    }
    return row;
}

// Values bounded away from 0 so finite differences never straddle a kink.
Tn away_from_zero(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        const double mag = rng.uniform(0.1, 1.0);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tn::from(std::move(shape), std::move(v), true);
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_battery(std::uint64_t seed, int instances) {
    Rng rng(seed);
    std::vector<GradCheckRow> rows;
    constexpr double tol = 1e-4;
    constexpr double bn_tol = 1e-3;

    auto small_shape = [](Rng& r) { return Shape{pick(r, 1, 3), pick(r, 2, 5)}; };

    rows.push_back(check_op("add", rng, instances, tol, [&](Rng& r) {
        auto s = small_shape(r);
        Tn a = random_tensor(r, s), b = random_tensor(r, s);
        return Case{{a, b}, [=] { return ops::add(a, b); }};
    }));
    rows.push_back(check_op("sub", rng, instances, tol, [&](Rng& r) {
        auto s = small_shape(r);
        Tn a = random_tensor(r, s), b = random_tensor(r, s);
        return Case{{a, b}, [=] { return ops::sub(a, b); }};
    }));
    rows.push_back(check_op("mul", rng, instances, tol, [&](Rng& r) {
        auto s = small_shape(r);
        Tn a = random_tensor(r, s), b = random_tensor(r, s);
        return Case{{a, b}, [=] { return ops::mul(a, b); }};
    }));
    rows.push_back(check_op("mul_scalar_broadcast", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r)), b = random_tensor(r, {});
        return Case{{a, b}, [=] { return ops::mul(b, a); }};
    }));
    rows.push_back(check_op("scale", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r));
        const double f = r.uniform(-2, 2);
        return Case{{a}, [=] { return ops::scale(a, f); }};
    }));
    rows.push_back(check_op("add_scalar", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r));
        return Case{{a}, [=] { return ops::add_scalar(a, 0.5); }};
    }));
    rows.push_back(check_op("relu", rng, instances, tol, [&](Rng& r) {
        Tn a = away_from_zero(r, small_shape(r));
        return Case{{a}, [=] { return ops::relu(a); }};
    }));
    rows.push_back(check_op("leaky_relu", rng, instances, tol, [&](Rng& r) {
        Tn a = away_from_zero(r, small_shape(r));
        return Case{{a}, [=] { return ops::leaky_relu(a, 0.2); }};
    }));
    rows.push_back(check_op("tanh", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r), -2, 2);
        return Case{{a}, [=] { return ops::tanh(a); }};
    }));
    rows.push_back(check_op("sigmoid", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r), -3, 3);
        return Case{{a}, [=] { return ops::sigmoid(a); }};
    }));
    rows.push_back(check_op("square", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r));
        return Case{{a}, [=] { return ops::square(a); }};
    }));
    rows.push_back(check_op("log", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r), 0.2, 2.0);
        return Case{{a}, [=] { return ops::log(a); }};
    }));
    rows.push_back(check_op("softplus", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r), -4, 4);
        return Case{{a}, [=] { return ops::softplus(a); }};
    }));
    rows.push_back(check_op("matmul", rng, instances, tol, [&](Rng& r) {
        const auto m = pick(r, 1, 4), k = pick(r, 1, 5), n = pick(r, 1, 4);
        Tn a = random_tensor(r, {m, k}), b = random_tensor(r, {k, n});
        return Case{{a, b}, [=] { return ops::matmul(a, b); }};
    }));
    rows.push_back(check_op("conv2d", rng, instances, tol, [&](Rng& r) {
        const auto n = pick(r, 1, 2), c = pick(r, 1, 3), f = pick(r, 1, 3);
        const auto h = pick(r, 4, 7), w = pick(r, 4, 7), k = pick(r, 1, 3);
        const ops::ConvGeometry g{pick(r, 1, 2), pick(r, 0, 1)};
        Tn x = random_tensor(r, {n, c, h, w}), kern = random_tensor(r, {f, c, k, k});
        return Case{{x, kern}, [=] { return ops::conv2d(x, kern, g); }};
    }));
    rows.push_back(check_op("conv_transpose2d", rng, instances, tol, [&](Rng& r) {
        const auto n = pick(r, 1, 2), fin = pick(r, 1, 3), cout = pick(r, 1, 3);
        const auto h = pick(r, 1, 4), w = pick(r, 1, 4), k = pick(r, 2, 4);
        const ops::ConvGeometry g{pick(r, 1, 2), 0};
        Tn x = random_tensor(r, {n, fin, h, w}), kern = random_tensor(r, {fin, cout, k, k});
        return Case{{x, kern}, [=] { return ops::conv_transpose2d(x, kern, g); }};
    }));
    rows.push_back(check_op("add_channel_bias", rng, instances, tol, [&](Rng& r) {
        const auto c = pick(r, 1, 3);
        Tn x = random_tensor(r, {pick(r, 1, 2), c, 3, 3}), b = random_tensor(r, {c});
        return Case{{x, b}, [=] { return ops::add_channel_bias(x, b); }};
    }));
    rows.push_back(check_op("batchnorm2d_train", rng, instances, bn_tol, [&](Rng& r) {
        const auto c = pick(r, 1, 3);
        Tn x = random_tensor(r, {2, c, 4, 4}, -2, 2);
        Tn gamma = random_tensor(r, {c}, 0.5, 1.5), beta = random_tensor(r, {c});
        auto rm = std::make_shared<Tn>(Tn::zeros({c}));
        auto rv = std::make_shared<Tn>(Tn::full({c}, 1.0));
        return Case{{x, gamma, beta}, [=] {
                        return ops::batchnorm2d(x, gamma, beta, *rm, *rv, ops::BnMode::train);
                    }};
    }));
    rows.push_back(check_op("batchnorm2d_eval", rng, instances, bn_tol, [&](Rng& r) {
        const auto c = pick(r, 1, 3);
        Tn x = random_tensor(r, {2, c, 3, 3}, -2, 2);
        Tn gamma = random_tensor(r, {c}, 0.5, 1.5), beta = random_tensor(r, {c});
        auto rm = std::make_shared<Tn>(random_tensor(r, {c}, -0.5, 0.5, false));
        auto rv = std::make_shared<Tn>(random_tensor(r, {c}, 0.5, 1.5, false));
        return Case{{x, gamma, beta}, [=] {
                        return ops::batchnorm2d(x, gamma, beta, *rm, *rv, ops::BnMode::eval);
                    }};
    }));
    rows.push_back(check_op("sum", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r));
        return Case{{a}, [=] { return ops::sum(a); }};
    }));
    rows.push_back(check_op("mean", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, small_shape(r));
        return Case{{a}, [=] { return ops::mean(a); }};
    }));
    rows.push_back(check_op("reshape", rng, instances, tol, [&](Rng& r) {
        Tn a = random_tensor(r, {2, 6});
        return Case{{a}, [=] { return ops::reshape(a, {3, 4}); }};
    }));
    rows.push_back(check_op("group_sum", rng, instances, tol, [&](Rng& r) {
        const auto groups = pick(r, 1, 3);
        Tn a = random_tensor(r, {2 * groups, 3, 2});
        return Case{{a}, [=] { return ops::group_sum(a, groups); }};
    }));
    rows.push_back(check_op("scale_per_item", rng, instances, tol, [&](Rng& r) {
        const auto n = pick(r, 1, 3);
        Tn x = random_tensor(r, {n, 1, 3, 3}), a = random_tensor(r, {n});
        return Case{{x, a}, [=] { return ops::scale_per_item(x, a); }};
    }));
    rows.push_back(check_op("convolve_same_per_item", rng, instances, tol, [&](Rng& r) {
        const auto n = pick(r, 1, 2), k = 2 * pick(r, 0, 2) + 1;
        Tn x = random_tensor(r, {n, 1, pick(r, 3, 6), pick(r, 3, 6)});
        Tn kern = random_tensor(r, {n, 1, k, k});
        return Case{{x, kern}, [=] { return ops::convolve_same_per_item(x, kern); }};
    }));

    // <conv2d(x, k), y> == <x, conv_transpose2d(y, k)>
    GradCheckRow adjoint{"conv_adjoint_identity", instances, 0.0, 1e-6};
    for (int i = 0; i < instances; ++i) {
        const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), f = pick(rng, 1, 3);
        const auto k = pick(rng, 1, 4), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
        // Sizes for which the transpose reproduces the input extent exactly.
        const auto out_h = pick(rng, 1, 4), out_w = pick(rng, 1, 4);
        const auto hs = static_cast<std::ptrdiff_t>((out_h - 1) * stride + k) -
                        static_cast<std::ptrdiff_t>(2 * pad);
        const auto ws = static_cast<std::ptrdiff_t>((out_w - 1) * stride + k) -
                        static_cast<std::ptrdiff_t>(2 * pad);
        if (hs <= 0 || ws <= 0) {
            --i;
            continue;
        }
        const auto h = static_cast<std::size_t>(hs), w = static_cast<std::size_t>(ws);
        Tn x = random_tensor(rng, {n, c, h, w}, -1, 1, false);
        Tn kern = random_tensor(rng, {f, c, k, k}, -1, 1, false);
        const Tn cx = ops::conv2d(x, kern, {stride, pad});
        Tn y = random_tensor(rng, cx.shape(), -1, 1, false);
        const Tn ty = ops::conv_transpose2d(y, kern, {stride, pad});
        double lhs = 0, rhs = 0;
        for (std::size_t j = 0; j < cx.numel(); ++j) lhs += cx.data()[j] * y.data()[j];
        for (std::size_t j = 0; j < x.numel(); ++j) rhs += x.data()[j] * ty.data()[j];
        adjoint.max_error =
            std::max(adjoint.max_error, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    }
    rows.push_back(adjoint);
    return rows;
}

}  // namespace sdsep
