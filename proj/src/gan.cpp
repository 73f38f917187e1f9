#include "sdsep/gan.hpp"

#include <cmath>

#include "sdsep/errors.hpp"
#include "sdsep/io.hpp"

namespace sdsep::gan {

using nn::ActivationKind;
using ops::ConvGeometry;

void to_json(nlohmann::json& j, const Architecture& a) {
    j = {{"z_dim", a.z_dim},
         {"g_widths", a.g_widths},
         {"d_widths", a.d_widths},
         {"leaky_slope", a.leaky_slope}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
    a.z_dim = j.at("z_dim");
    a.g_widths = j.at("g_widths");
    a.d_widths = j.at("d_widths");
    a.leaky_slope = j.at("leaky_slope");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"arch", c.arch},
         {"iterations", c.iterations},
         {"batch_size", c.batch_size},
         {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2},
                   {"eps", c.adam.eps}}},
         {"non_saturating", c.non_saturating},
         {"seed", c.seed},
         {"log_every", c.log_every},
         {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.arch = j.at("arch");
    c.iterations = j.at("iterations");
    c.batch_size = j.at("batch_size");
    const auto& a = j.at("adam");
    c.adam = {a.at("lr"), a.at("beta1"), a.at("beta2"), a.at("eps")};
    c.non_saturating = j.at("non_saturating");
    c.seed = j.at("seed");
    c.log_every = j.at("log_every");
    c.checkpoint_every = j.at("checkpoint_every");
}

std::size_t generator_parameter_count(const Architecture& a) {
    const auto& w = a.g_widths;
    return a.z_dim * w[0] * 16 + w[0] * w[1] * 16 + w[1] * w[2] * 16 + w[2] * 16 +
           2 * (w[0] + w[1] + w[2]);
}

std::size_t discriminator_parameter_count(const Architecture& a) {
    const auto& w = a.d_widths;
    return 16 * w[0] + w[0] * w[1] * 16 + w[1] * w[2] * 16 + w[2] * 16 + 2 * (w[1] + w[2]);
}

template <typename T>
Generator<T>::Generator(const Architecture& arch) : arch_(arch), net_("g") {
    const auto& w = arch.g_widths;
    net_.template add<nn::Reshape<T>>(Shape{arch.z_dim, 1, 1});
    net_.template add<nn::ConvTranspose2d<T>>(arch.z_dim, w[0], 4, ConvGeometry{1, 0});
    net_.template add<nn::BatchNorm2d<T>>(w[0]);
    net_.template add<nn::Activation<T>>(ActivationKind::relu);
    net_.template add<nn::ConvTranspose2d<T>>(w[0], w[1], 4, ConvGeometry{2, 1});
    net_.template add<nn::BatchNorm2d<T>>(w[1]);
    net_.template add<nn::Activation<T>>(ActivationKind::relu);
    net_.template add<nn::ConvTranspose2d<T>>(w[1], w[2], 4, ConvGeometry{2, 1});
    net_.template add<nn::BatchNorm2d<T>>(w[2]);
    net_.template add<nn::Activation<T>>(ActivationKind::relu);
    net_.template add<nn::ConvTranspose2d<T>>(w[2], 1, 4, ConvGeometry{2, 1});
    net_.template add<nn::Activation<T>>(ActivationKind::tanh);

    const auto chain = net_.shape_chain({1, arch.z_dim});
    const std::size_t expect[] = {1, 4, 4, 4, 8, 8, 8, 16, 16, 16, 32, 32};
    for (std::size_t i = 1; i < chain.size(); ++i) {
        if (chain[i][2] != expect[i - 1])
            throw ContractError("generator shape chain broken at layer " + std::to_string(i));
    }
    if (net_.parameter_count() != generator_parameter_count(arch))
        throw ContractError("generator parameter count drifted from its architecture");
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& z, nn::Mode mode) const {
    if (z.rank() != 2 || z.size(1) != arch_.z_dim) {
        throw ShapeError("generator expects seeds [B," + std::to_string(arch_.z_dim) + "], got " +
                         shape_string(z.shape()));
    }
    return net_.forward(z, mode);
}

template <typename T>
Discriminator<T>::Discriminator(const Architecture& arch) : arch_(arch), net_("d") {
    const auto& w = arch.d_widths;
    const T slope = static_cast<T>(arch.leaky_slope);
    net_.template add<nn::Conv2d<T>>(1, w[0], 4, ConvGeometry{2, 1});
    net_.template add<nn::Activation<T>>(ActivationKind::leaky_relu, slope);
    net_.template add<nn::Conv2d<T>>(w[0], w[1], 4, ConvGeometry{2, 1});
    net_.template add<nn::BatchNorm2d<T>>(w[1]);
    net_.template add<nn::Activation<T>>(ActivationKind::leaky_relu, slope);
    net_.template add<nn::Conv2d<T>>(w[1], w[2], 4, ConvGeometry{2, 1});
    net_.template add<nn::BatchNorm2d<T>>(w[2]);
    net_.template add<nn::Activation<T>>(ActivationKind::leaky_relu, slope);
    net_.template add<nn::Conv2d<T>>(w[2], 1, 4, ConvGeometry{1, 0});
    net_.template add<nn::Reshape<T>>(Shape{});

    const auto chain = net_.shape_chain({1, 1, mnist::kSide, mnist::kSide});
    if (chain.back() != Shape{1}) throw ContractError("discriminator does not reduce to a scalar");
    if (net_.parameter_count() != discriminator_parameter_count(arch))
        throw ContractError("discriminator parameter count drifted from its architecture");
}

template <typename T>
Tensor<T> Discriminator<T>::logits(const Tensor<T>& x, nn::Mode mode) const {
    if (x.rank() != 4 || x.size(1) != 1 || x.size(2) != mnist::kSide || x.size(3) != mnist::kSide)
        throw ShapeError("discriminator expects [B,1,32,32], got " + shape_string(x.shape()));
    return net_.forward(x, mode);
}

template <typename T>
Tensor<T> Discriminator<T>::discriminate(const Tensor<T>& x) const {
    return ops::sigmoid(logits(x, nn::Mode::eval));
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

namespace {

std::vector<Tensor<float>> trainable(const nn::LayerStack<float>& net) {
    return nn::tensors_of(net.parameters());
}

Tensor<float> sample_seeds(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<float> z(n * dim);
    rng.fill_normal<float>(z);
    return Tensor<float>::from({n, dim}, std::move(z));
}

void put_state(Checkpoint& ck, const nn::LayerStack<float>& net) {
    for (const auto& t : net.state()) ck.put(t.name, t.tensor);
}

void get_state(const Checkpoint& ck, const nn::LayerStack<float>& net) {
    for (auto t : net.state()) ck.load_into(t.name, t.tensor);
}

void put_optimizer(Checkpoint& ck, const std::string& prefix, const nn::Adam<float>& opt) {
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
        ck.put(prefix + ".m." + std::to_string(i), opt.first_moments()[i]);
        ck.put(prefix + ".v." + std::to_string(i), opt.second_moments()[i]);
    }
    ck.meta()[prefix + ".t"] = opt.iteration();
}

void get_optimizer(const Checkpoint& ck, const std::string& prefix, nn::Adam<float>& opt) {
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
        ck.load_into(prefix + ".m." + std::to_string(i), opt.first_moments()[i]);
        ck.load_into(prefix + ".v." + std::to_string(i), opt.second_moments()[i]);
    }
    opt.set_iteration(ck.meta().at(prefix + ".t"));
}

}  // namespace

Trainer::Trainer(const TrainConfig& config, const mnist::ImageSet& data)
    : config_(config),
      data_(&data),
      batches_(data, config.batch_size, derive_seed(config.seed, 1)),
      g_(config.arch),
      d_(config.arch),
      g_opt_(trainable(g_.net()), config.adam),
      d_opt_(trainable(d_.net()), config.adam),
      rng_(derive_seed(config.seed, 2)) {
    Rng init(derive_seed(config.seed, 0));
    g_.net().initialize(init);
    d_.net().initialize(init);
}

LogEntry Trainer::step() {
    const std::size_t m = config_.batch_size;
    const auto real = batches_.at_iteration(iteration_);

    // Discriminator: minimise -log D(x) - log(1 - D(G(z))).
    const auto fake = g_.forward(sample_seeds(rng_, m, config_.arch.z_dim), nn::Mode::train).detach();
    const auto l_real = d_.logits(real, nn::Mode::train);
    const auto l_fake = d_.logits(fake, nn::Mode::train);
    const auto d_loss = ops::add(ops::mean(ops::softplus(ops::neg(l_real))),
                                 ops::mean(ops::softplus(l_fake)));
    if (!std::isfinite(d_loss.item()))
        throw NumericError("non-finite discriminator loss at iteration " + std::to_string(iteration_));
    d_opt_.zero_grad();
    d_loss.backward();
    if (!d_opt_.step()) throw NumericError("discriminator: " + d_opt_.last_diagnostic());

    // Generator on fresh seeds.
    const auto gen = g_.forward(sample_seeds(rng_, m, config_.arch.z_dim), nn::Mode::train);
    const auto l_gen = d_.logits(gen, nn::Mode::train);
    const auto non_saturating = ops::mean(ops::softplus(ops::neg(l_gen)));
    const auto literal = ops::neg(ops::mean(ops::softplus(l_gen)));
    const auto& g_loss = config_.non_saturating ? non_saturating : literal;
    if (!std::isfinite(g_loss.item()))
        throw NumericError("non-finite generator loss at iteration " + std::to_string(iteration_));
    g_opt_.zero_grad();
    g_loss.backward();
    if (!g_opt_.step()) throw NumericError("generator: " + g_opt_.last_diagnostic());
    d_opt_.zero_grad();

    double mean_fake = 0;
    for (float l : l_gen.data()) mean_fake += 1.0 / (1.0 + std::exp(-double(l)));
    ++iteration_;
    return {iteration_, d_loss.item(), non_saturating.item(), literal.item(),
            mean_fake / double(m)};
}

void Trainer::run(std::size_t target, const std::function<void(const LogEntry&)>& on_log) {
    target = std::min(target, config_.iterations);
    while (iteration_ < target) {
        const auto entry = step();
        if (on_log && (iteration_ % config_.log_every == 0 || iteration_ == target)) on_log(entry);
    }
}

std::string config_hash(const TrainConfig& c) {
    const std::string text = nlohmann::json(c).dump();
    return io::sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Checkpoint Trainer::save() const {
    Checkpoint ck;
    ck.meta()["kind"] = "gan";
    ck.meta()["config"] = config_;
    ck.meta()["config_hash"] = config_hash(config_);
    ck.meta()["iteration"] = iteration_;
    ck.meta()["rng"] = rng_.state();
    put_state(ck, g_.net());
    put_state(ck, d_.net());
    put_optimizer(ck, "opt.g", g_opt_);
    put_optimizer(ck, "opt.d", d_opt_);
    return ck;
}

void Trainer::restore(const Checkpoint& ck) {
    if (ck.meta().value("kind", "") != "gan") throw ContractError("not a GAN training checkpoint");
    const TrainConfig saved = ck.meta().at("config");
    if (nlohmann::json(saved).dump() != nlohmann::json(config_).dump()) {
        // The iteration budget may be extended on resume; nothing else may change.
        TrainConfig a = saved, b = config_;
        a.iterations = b.iterations = 0;
        if (nlohmann::json(a).dump() != nlohmann::json(b).dump())
            throw ContractError("checkpoint was written with a different training config");
    }
    get_state(ck, g_.net());
    get_state(ck, d_.net());
    get_optimizer(ck, "opt.g", g_opt_);
    get_optimizer(ck, "opt.d", d_opt_);
    iteration_ = ck.meta().at("iteration");
    rng_.restore(ck.meta().at("rng"));
}

Checkpoint export_generator(const Generator<float>& g) {
    Checkpoint ck;
    ck.meta()["kind"] = "generator";
    ck.meta()["arch"] = g.architecture();
    put_state(ck, g.net());
    return ck;
}

Generator<float> load_generator(const Checkpoint& ck) {
    const auto kind = ck.meta().value("kind", "");
    Architecture arch;
    if (kind == "gan") {
        arch = ck.meta().at("config").at("arch").get<Architecture>();
    } else if (kind == "generator") {
        arch = ck.meta().at("arch").get<Architecture>();
    } else {
        throw ContractError("checkpoint holds no generator (kind '" + kind + "')");
    }
    Generator<float> g(arch);
    get_state(ck, g.net());
    return g;
}

}  // namespace sdsep::gan
