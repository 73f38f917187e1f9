#pragma once

// Layer stacks and the Adam optimiser.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "sdsep/ops.hpp"
#include "sdsep/rng.hpp"
#include "sdsep/tensor.hpp"

namespace sdsep::nn {

using Mode = ops::BnMode;

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
class Layer {
  public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
    // Shape after this layer for a given input shape; throws ShapeError.
    virtual Shape output_shape(const Shape& input) const = 0;
    virtual std::string kind() const = 0;
    // Trainable tensors.
    virtual void parameters(const std::string&, std::vector<NamedTensor<T>>&) {}
    // Non-trainable state that must survive a checkpoint (running stats).
    virtual void buffers(const std::string&, std::vector<NamedTensor<T>>&) {}
    virtual void initialize(Rng&) {}
};

template <typename T>
class Conv2d final : public Layer<T> {
  public:
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, ops::ConvGeometry g,
           bool bias = false);
    Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
    Shape output_shape(const Shape& input) const override;
    std::string kind() const override { return "conv2d"; }
    void parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
    void initialize(Rng& rng) override;

  private:
    std::size_t in_, out_, k_;
    ops::ConvGeometry g_;
    Tensor<T> weight_, bias_;
};

template <typename T>
class ConvTranspose2d final : public Layer<T> {
  public:
    ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, ops::ConvGeometry g);
    Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
    Shape output_shape(const Shape& input) const override;
    std::string kind() const override { return "conv_transpose2d"; }
    void parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
    void initialize(Rng& rng) override;

  private:
    std::size_t in_, out_, k_;
    ops::ConvGeometry g_;
    Tensor<T> weight_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
  public:
    explicit BatchNorm2d(std::size_t channels);
    Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
    Shape output_shape(const Shape& input) const override;
    std::string kind() const override { return "batchnorm2d"; }
    void parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
    void buffers(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
    void initialize(Rng& rng) override;

  private:
    std::size_t c_;
    Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

template <typename T>
class Dense final : public Layer<T> {
  public:
    Dense(std::size_t in, std::size_t out);
    Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
    Shape output_shape(const Shape& input) const override;
    std::string kind() const override { return "dense"; }
    void parameters(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
    void initialize(Rng& rng) override;

  private:
    std::size_t in_, out_;
    Tensor<T> weight_, bias_;
};

enum class ActivationKind { relu, leaky_relu, tanh, sigmoid };

template <typename T>
class Activation final : public Layer<T> {
  public:
    explicit Activation(ActivationKind kind, T slope = T(0.2)) : kind_(kind), slope_(slope) {}
    Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
    Shape output_shape(const Shape& input) const override { return input; }
    std::string kind() const override;

  private:
    ActivationKind kind_;
    T slope_;
};

// Reshapes every batch item to `item_shape`.
template <typename T>
class Reshape final : public Layer<T> {
  public:
    explicit Reshape(Shape item_shape) : item_(std::move(item_shape)) {}
    Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
    Shape output_shape(const Shape& input) const override;
    std::string kind() const override { return "reshape"; }

  private:
    Shape item_;
};

template <typename T>
class LayerStack {
  public:
    LayerStack() = default;
    explicit LayerStack(std::string name) : name_(std::move(name)) {}

    template <typename L, typename... Args>
    L& add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) const;
    // Shape after each layer, starting with `input`; throws on a bad chain.
    std::vector<Shape> shape_chain(const Shape& input) const;

    std::vector<NamedTensor<T>> parameters() const;
    std::vector<NamedTensor<T>> buffers() const;
    std::vector<NamedTensor<T>> state() const;  // parameters then buffers
    std::size_t parameter_count() const;
    void initialize(Rng& rng);
    // Frozen stacks build no parameter gradients.
    void set_trainable(bool on);
    bool trainable() const;

    std::size_t size() const { return layers_.size(); }
    const std::string& name() const { return name_; }

  private:
    std::string name_ = "net";
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class Adam {
  public:
    Adam(std::vector<Tensor<T>> params, AdamConfig config);

    // Applies one update from the accumulated grads. Returns false and leaves
    // parameters and state untouched when any gradient is non-finite.
    bool step();
    void zero_grad();

    const AdamConfig& config() const { return config_; }
    std::size_t iteration() const { return t_; }
    const std::string& last_diagnostic() const { return diagnostic_; }

    // Moment buffers, exposed for checkpointing.
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }
    void set_iteration(std::size_t t) { t_ = t; }

  private:
    std::vector<Tensor<T>> params_, m_, v_;
    AdamConfig config_;
    std::size_t t_ = 0;
    std::string diagnostic_;
};

// In-place Adam update on a contiguous slice; shared by Adam and callers
// that keep per-slice optimiser state.
template <typename T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, std::size_t t,
                 const AdamConfig& config);

template <typename T>
std::vector<Tensor<T>> tensors_of(const std::vector<NamedTensor<T>>& named);

}  // namespace sdsep::nn
