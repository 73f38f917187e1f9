#include "sdsep/cnn.hpp"

#include <cmath>

#include "sdsep/errors.hpp"

namespace sdsep::baselines {

nlohmann::json to_json(const CnnConfig& c) {
    return {{"widths", c.widths},     {"kernel", c.kernel},
            {"iterations", c.iterations}, {"batch_size", c.batch_size},
            {"lr", c.adam.lr},        {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},  {"eps", c.adam.eps},
            {"noise_sigma", c.noise_sigma}, {"seed", c.seed}};
}

CnnDenoiser::CnnDenoiser(std::array<std::size_t, 3> widths, std::size_t kernel)
    : widths_(widths), kernel_(kernel), net_("cnn") {
    if (kernel % 2 == 0) throw ContractError("cnn: kernel size must be odd");
    const ops::ConvGeometry same{1, kernel / 2};
    std::size_t in = 1;
    for (std::size_t w : widths) {
        net_.add<nn::Conv2d<float>>(in, w, kernel, same);
        net_.add<nn::BatchNorm2d<float>>(w);
        net_.add<nn::Activation<float>>(nn::ActivationKind::relu);
        in = w;
    }
    net_.add<nn::Conv2d<float>>(in, 1, kernel, same, true);
}

Tensor<float> CnnDenoiser::forward(const Tensor<float>& x, nn::Mode mode) const {
    if (x.rank() != 4 || x.size(1) != 1)
        throw ShapeError("cnn: expected [B,1,H,W], got " + shape_string(x.shape()));
    return net_.forward(x, mode);
}

namespace {

Tensor<float> add_noise(const Tensor<float>& clean, double sigma, Rng& rng) {
    std::vector<float> v(clean.data().begin(), clean.data().end());
    for (auto& p : v) p += float(rng.normal(0.0, sigma));
    return Tensor<float>::from(clean.shape(), std::move(v));
}

}  // namespace

CnnTrainer::CnnTrainer(const CnnConfig& config, const mnist::ImageSet& data)
    : config_(config),
      data_(&data),
      batches_(data, config.batch_size, derive_seed(config.seed, 1)),
      model_(config.widths, config.kernel),
      opt_(nn::tensors_of(model_.net().parameters()), config.adam),
      rng_(derive_seed(config.seed, 2)) {
    Rng init(derive_seed(config.seed, 0));
    model_.net().initialize(init);
}

CnnLogEntry CnnTrainer::step() {
    const auto clean = batches_.at_iteration(iteration_);
    const auto noisy = add_noise(clean, config_.noise_sigma, rng_);
    const auto loss = ops::mean(ops::square(ops::sub(model_.forward(noisy, nn::Mode::train), clean)));
    if (!std::isfinite(loss.item()))
        throw NumericError("cnn: non-finite loss at iteration " + std::to_string(iteration_));
    opt_.zero_grad();
    loss.backward();
    if (!opt_.step()) throw NumericError("cnn: " + opt_.last_diagnostic());
    ++iteration_;
    return {iteration_, loss.item()};
}

void CnnTrainer::run(std::size_t target, const std::function<void(const CnnLogEntry&)>& on_log) {
    target = std::min(target, config_.iterations);
    while (iteration_ < target) {
        const auto e = step();
        if (on_log && (iteration_ % config_.log_every == 0 || iteration_ == target)) on_log(e);
    }
}

Checkpoint export_cnn(const CnnDenoiser& m) {
    Checkpoint ck;
    ck.meta() = {{"kind", "cnn"}, {"widths", m.widths()}, {"kernel", m.kernel()}};
    for (const auto& t : m.net().state()) ck.put(t.name, t.tensor);
    return ck;
}

CnnDenoiser load_cnn(const Checkpoint& ck) {
    if (ck.meta().value("kind", "") != "cnn") throw ContractError("checkpoint is not a CNN denoiser");
    CnnDenoiser m(ck.meta().at("widths").get<std::array<std::size_t, 3>>(),
                  ck.meta().at("kernel").get<std::size_t>());
    for (auto t : m.net().state()) ck.load_into(t.name, t.tensor);
    return m;
}

DenoiseScore score_denoiser(const CnnDenoiser& m, const mnist::ImageSet& images, std::size_t count,
                            double sigma, std::uint64_t seed) {
    count = std::min(count, images.size());
    Rng rng(seed);
    double model = 0, identity = 0;
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < count; start += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(count, start + chunk); ++i) idx.push_back(i);
        const auto clean = images.gather(idx);
        const auto noisy = add_noise(clean, sigma, rng);
        const auto out = m.apply(noisy);
        for (std::size_t i = 0; i < clean.numel(); ++i) {
            const double c = clean.data()[i];
            model += (out.data()[i] - c) * (out.data()[i] - c);
            identity += (noisy.data()[i] - c) * (noisy.data()[i] - c);
        }
    }
    const double n = double(count * mnist::kPixels);
    return {model / n, identity / n};
}

}  // namespace sdsep::baselines
