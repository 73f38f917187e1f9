#include "sdsep/nn.hpp"

#include <cmath>

#include "sdsep/errors.hpp"
#include "sdsep/kernels.hpp"

namespace sdsep::nn {

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, ops::ConvGeometry g, const char* what) {
    if (in + 2 * g.padding < k) {
        throw ShapeError(std::string(what) + ": kernel " + std::to_string(k) +
                         " exceeds padded input " + std::to_string(in + 2 * g.padding));
    }
    return (in + 2 * g.padding - k) / g.stride + 1;
}

std::size_t convt_out(std::size_t in, std::size_t k, ops::ConvGeometry g) {
    const auto full = static_cast<std::ptrdiff_t>((in - 1) * g.stride + k) -
                      2 * static_cast<std::ptrdiff_t>(g.padding);
    if (full <= 0) throw ShapeError("conv_transpose2d: non-positive output size");
    return static_cast<std::size_t>(full);
}

void expect_channels(const Shape& s, std::size_t rank, std::size_t c, const char* what) {
    if (s.size() != rank || s[1] != c) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(c) +
                         " channels in rank-" + std::to_string(rank) + " input, got " +
                         shape_string(s));
    }
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double mean, double stddev) {
    rng.fill_normal<T>(t.mutable_data(), mean, stddev);
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, ops::ConvGeometry g,
                  bool bias)
    : in_(in), out_(out), k_(kernel), g_(g) {
    weight_ = Tensor<T>::zeros({out, in, kernel, kernel}, true);
    if (bias) bias_ = Tensor<T>::zeros({out}, true);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode) {
    auto y = ops::conv2d(x, weight_, g_);
    return bias_.defined() ? ops::add_channel_bias(y, bias_) : y;
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& s) const {
    expect_channels(s, 4, in_, "conv2d");
    return {s[0], out_, conv_out(s[2], k_, g_, "conv2d"), conv_out(s[3], k_, g_, "conv2d")};
}

template <typename T>
void Conv2d<T>::parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    out.push_back({prefix + "weight", weight_});
    if (bias_.defined()) out.push_back({prefix + "bias", bias_});
}

template <typename T>
void Conv2d<T>::initialize(Rng& rng) {
    fill_normal(weight_, rng, 0.0, 0.02);
    if (bias_.defined()) std::fill(bias_.mutable_data().begin(), bias_.mutable_data().end(), T(0));
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel,
                                    ops::ConvGeometry g)
    : in_(in), out_(out), k_(kernel), g_(g) {
    weight_ = Tensor<T>::zeros({in, out, kernel, kernel}, true);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, Mode) {
    return ops::conv_transpose2d(x, weight_, g_);
}

template <typename T>
Shape ConvTranspose2d<T>::output_shape(const Shape& s) const {
    expect_channels(s, 4, in_, "conv_transpose2d");
    return {s[0], out_, convt_out(s[2], k_, g_), convt_out(s[3], k_, g_)};
}

template <typename T>
void ConvTranspose2d<T>::parameters(const std::string& prefix,
                                    std::vector<NamedTensor<T>>& out) {
    out.push_back({prefix + "weight", weight_});
}

template <typename T>
void ConvTranspose2d<T>::initialize(Rng& rng) {
    fill_normal(weight_, rng, 0.0, 0.02);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels) : c_(channels) {
    gamma_ = Tensor<T>::full({channels}, T(1), true);
    beta_ = Tensor<T>::zeros({channels}, true);
    running_mean_ = Tensor<T>::zeros({channels});
    running_var_ = Tensor<T>::full({channels}, T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
    return ops::batchnorm2d(x, gamma_, beta_, running_mean_, running_var_, mode);
}

template <typename T>
Shape BatchNorm2d<T>::output_shape(const Shape& s) const {
    if ((s.size() != 4 && s.size() != 2) || s[1] != c_) {
        throw ShapeError("batchnorm2d: expected " + std::to_string(c_) + " channels, got " +
                         shape_string(s));
    }
    return s;
}

template <typename T>
void BatchNorm2d<T>::parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    out.push_back({prefix + "gamma", gamma_});
    out.push_back({prefix + "beta", beta_});
}

template <typename T>
void BatchNorm2d<T>::buffers(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    out.push_back({prefix + "running_mean", running_mean_});
    out.push_back({prefix + "running_var", running_var_});
}

template <typename T>
void BatchNorm2d<T>::initialize(Rng& rng) {
    fill_normal(gamma_, rng, 1.0, 0.02);
    auto b = beta_.mutable_data();
    std::fill(b.begin(), b.end(), T(0));
    auto rm = running_mean_.mutable_data();
    std::fill(rm.begin(), rm.end(), T(0));
    auto rv = running_var_.mutable_data();
    std::fill(rv.begin(), rv.end(), T(1));
}

template <typename T>
Dense<T>::Dense(std::size_t in, std::size_t out) : in_(in), out_(out) {
    weight_ = Tensor<T>::zeros({in, out}, true);
    bias_ = Tensor<T>::zeros({out}, true);
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x, Mode) {
    return ops::add_channel_bias(ops::matmul(x, weight_), bias_);
}

template <typename T>
Shape Dense<T>::output_shape(const Shape& s) const {
    if (s.size() != 2 || s[1] != in_) {
        throw ShapeError("dense: expected [N," + std::to_string(in_) + "], got " +
                         shape_string(s));
    }
    return {s[0], out_};
}

template <typename T>
void Dense<T>::parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    out.push_back({prefix + "weight", weight_});
    out.push_back({prefix + "bias", bias_});
}

template <typename T>
void Dense<T>::initialize(Rng& rng) {
    fill_normal(weight_, rng, 0.0, 0.02);
    auto b = bias_.mutable_data();
    std::fill(b.begin(), b.end(), T(0));
}

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& x, Mode) {
    switch (kind_) {
        case ActivationKind::relu: return ops::relu(x);
        case ActivationKind::leaky_relu: return ops::leaky_relu(x, slope_);
        case ActivationKind::tanh: return ops::tanh(x);
        case ActivationKind::sigmoid: return ops::sigmoid(x);
    }
    return x;
}

template <typename T>
std::string Activation<T>::kind() const {
    switch (kind_) {
        case ActivationKind::relu: return "relu";
        case ActivationKind::leaky_relu: return "leaky_relu";
        case ActivationKind::tanh: return "tanh";
        case ActivationKind::sigmoid: return "sigmoid";
    }
    return "activation";
}

template <typename T>
Tensor<T> Reshape<T>::forward(const Tensor<T>& x, Mode) {
    return ops::reshape(x, output_shape(x.shape()));
}

template <typename T>
Shape Reshape<T>::output_shape(const Shape& s) const {
    if (s.empty() || shape_numel(s) != s[0] * shape_numel(item_)) {
        throw ShapeError("reshape: cannot view " + shape_string(s) + " as items of " +
                         shape_string(item_));
    }
    Shape out{s[0]};
    out.insert(out.end(), item_.begin(), item_.end());
    return out;
}

template <typename T>
Tensor<T> LayerStack<T>::forward(const Tensor<T>& x, Mode mode) const {
    Tensor<T> h = x;
    for (const auto& layer : layers_) {
        layer->output_shape(h.shape());
        h = layer->forward(h, mode);
    }
    return h;
}

template <typename T>
std::vector<Shape> LayerStack<T>::shape_chain(const Shape& input) const {
    std::vector<Shape> chain{input};
    for (const auto& layer : layers_) chain.push_back(layer->output_shape(chain.back()));
    return chain;
}

template <typename T>
std::vector<NamedTensor<T>> LayerStack<T>::parameters() const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->parameters(name_ + "." + std::to_string(i) + ".", out);
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> LayerStack<T>::buffers() const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->buffers(name_ + "." + std::to_string(i) + ".", out);
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> LayerStack<T>::state() const {
    auto out = parameters();
    auto b = buffers();
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

template <typename T>
std::size_t LayerStack<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

template <typename T>
void LayerStack<T>::initialize(Rng& rng) {
    for (auto& layer : layers_) layer->initialize(rng);
}

template <typename T>
void LayerStack<T>::set_trainable(bool on) {
    for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

template <typename T>
bool LayerStack<T>::trainable() const {
    for (const auto& p : parameters())
        if (p.tensor.requires_grad()) return true;
    return false;
}

template <typename T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, std::size_t t,
                 const AdamConfig& c) {
    const double td = static_cast<double>(t);
    const kernels::AdamCoefficients k{c.lr, c.beta1, c.beta2, c.eps,
                                      1.0 - std::pow(c.beta1, td), 1.0 - std::pow(c.beta2, td)};
    kernels::adam_update<T>(n, param, grad, m, v, k);
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        if (!p.node().is_leaf() || !p.requires_grad()) {
            throw ContractError("Adam parameters must be leaves that require grad");
        }
        m_.push_back(Tensor<T>::zeros(p.shape()));
        v_.push_back(Tensor<T>::zeros(p.shape()));
    }
}

template <typename T>
bool Adam<T>::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto g = params_[i].grad();
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (!std::isfinite(g[j])) {
                diagnostic_ = "non-finite gradient in parameter " + std::to_string(i) +
                              " element " + std::to_string(j) + "; step " +
                              std::to_string(t_ + 1) + " skipped";
                return false;
            }
        }
    }
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        const T* g = p.mutable_grad().data();
        adam_update<T>(p.numel(), p.mutable_data().data(), g, m_[i].mutable_data().data(),
                       v_[i].mutable_data().data(), t_, config_);
    }
    diagnostic_.clear();
    return true;
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template <typename T>
std::vector<Tensor<T>> tensors_of(const std::vector<NamedTensor<T>>& named) {
    std::vector<Tensor<T>> out;
    out.reserve(named.size());
    for (const auto& n : named) out.push_back(n.tensor);
    return out;
}

#define SDSEP_INSTANTIATE(T)                                                              \
    template class Conv2d<T>;                                                             \
    template class ConvTranspose2d<T>;                                                    \
    template class BatchNorm2d<T>;                                                        \
    template class Dense<T>;                                                              \
    template class Activation<T>;                                                         \
    template class Reshape<T>;                                                            \
    template class LayerStack<T>;                                                         \
    template class Adam<T>;                                                               \
    template void adam_update<T>(std::size_t, T*, const T*, T*, T*, std::size_t,          \
                                 const AdamConfig&);                                      \
    template std::vector<Tensor<T>> tensors_of<T>(const std::vector<NamedTensor<T>>&);

SDSEP_INSTANTIATE(float)
SDSEP_INSTANTIATE(double)
#undef SDSEP_INSTANTIATE

}  // namespace sdsep::nn
