#include "sdsep/ops.hpp"

#include <algorithm>
#include <cmath>

#include "sdsep/errors.hpp"
#include "sdsep/kernels.hpp"

namespace sdsep::ops {
namespace {

using kernels::Trans;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Creates a result node; wires inputs and the backward rule only when some
// input participates in differentiation.
template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> value,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->inputs.push_back(in.ptr());
        node->backward = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
Node<T>& input(Node<T>& self, std::size_t i) {
    return *self.inputs[i];
}

void require_rank(const Shape& s, std::size_t rank, std::string_view what) {
    if (s.size() != rank) {
        throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) +
                         ", got " + shape_string(s));
    }
}

enum class Broadcast { none, left_scalar, right_scalar };

template <typename T>
Broadcast check_binary(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (b.numel() == 1) return Broadcast::right_scalar;
    if (a.numel() == 1) return Broadcast::left_scalar;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
}

// Generic elementwise binary op with scalar broadcast. da/db give the local
// partial derivatives at (x, y).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(std::string_view name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da,
                 DB db) {
    const Broadcast bc = check_binary(a, b, name);
    const Shape shape = bc == Broadcast::left_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(shape);
    const auto av = a.data();
    const auto bv = b.data();
    auto at = [&, bc](std::size_t i) { return bc == Broadcast::left_scalar ? av[0] : av[i]; };
    auto bt = [&, bc](std::size_t i) { return bc == Broadcast::right_scalar ? bv[0] : bv[i]; };
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(at(i), bt(i));
    return make_result<T>(name, shape, std::move(out), {a, b}, [bc, da, db](Node<T>& self) {
        Node<T>& na = input(self, 0);
        Node<T>& nb = input(self, 1);
        const std::size_t n = self.value.size();
        const bool ls = bc == Broadcast::left_scalar, rs = bc == Broadcast::right_scalar;
        if (na.requires_grad) {
            T* ga = na.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                const T x = ls ? na.value[0] : na.value[i];
                const T y = rs ? nb.value[0] : nb.value[i];
                ga[ls ? 0 : i] += self.grad[i] * da(x, y);
            }
        }
        if (nb.requires_grad) {
            T* gb = nb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                const T x = ls ? na.value[0] : na.value[i];
                const T y = rs ? nb.value[0] : nb.value[i];
                gb[rs ? 0 : i] += self.grad[i] * db(x, y);
            }
        }
    });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename T, typename F, typename D>
Tensor<T> unary(std::string_view name, const Tensor<T>& a, F f, D d) {
    const auto av = a.data();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return make_result<T>(name, a.shape(), std::move(out), {a}, [d](Node<T>& self) {
        Node<T>& na = input(self, 0);
        T* ga = na.grad_buffer();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            ga[i] += self.grad[i] * d(na.value[i], self.value[i]);
        }
    });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                     [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                     [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                     [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    return unary<T>("scale", a, [factor](T x) { return factor * x; },
                    [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
    return unary<T>("add_scalar", a, [offset](T x) { return x + offset; },
                    [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return unary<T>("neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                    [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    return unary<T>("leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
                    [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return unary<T>("tanh", a, [](T x) { return std::tanh(x); },
                    [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary<T>(
        "sigmoid", a,
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
    return unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    return unary<T>(
        "softplus", a,
        [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
        [](T x, T) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 2, "matmul lhs");
    require_rank(b.shape(), 2, "matmul rhs");
    const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
    if (b.size(0) != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    }
    std::vector<T> out(m * n);
    kernels::gemm<T>(Trans::no, Trans::no, m, n, k, T(1), a.data().data(), k, b.data().data(), n,
                     T(0), out.data(), n);
    return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        Node<T>& na = input(self, 0);
        Node<T>& nb = input(self, 1);
        if (na.requires_grad) {
            kernels::gemm<T>(Trans::no, Trans::yes, m, k, n, T(1), self.grad.data(), n,
                             nb.value.data(), n, T(1), na.grad_buffer(), k);
        }
        if (nb.requires_grad) {
            kernels::gemm<T>(Trans::yes, Trans::no, k, n, m, T(1), na.value.data(), k,
                             self.grad.data(), n, T(1), nb.grad_buffer(), n);
        }
    });
}

namespace {

// Patch geometry shared by conv2d and conv_transpose2d. "src" is the larger
// (input of conv2d) image, "dst" the one produced by sliding the kernel.
struct Patch {
    std::size_t channels, src_h, src_w, kh, kw, stride, padding, dst_h, dst_w;
    std::size_t rows() const { return channels * kh * kw; }
    std::size_t dst_plane() const { return dst_h * dst_w; }
    std::size_t src_plane() const { return src_h * src_w; }
};

// cols[(c*kh+ky)*kw+kx, (n-n0)*dst_plane + oy*dst_w + ox] = src[n, c, iy, ix]
template <typename T>
void im2col(const T* src, const Patch& p, std::size_t n0, std::size_t nb, T* cols) {
    const std::size_t ncols = nb * p.dst_plane();
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (std::size_t ky = 0; ky < p.kh; ++ky) {
            for (std::size_t kx = 0; kx < p.kw; ++kx) {
                T* row = cols + ((c * p.kh + ky) * p.kw + kx) * ncols;
                for (std::size_t n = 0; n < nb; ++n) {
                    const T* plane = src + ((n0 + n) * p.channels + c) * p.src_plane();
                    T* out = row + n * p.dst_plane();
                    for (std::size_t oy = 0; oy < p.dst_h; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky) -
                                        static_cast<std::ptrdiff_t>(p.padding);
                        T* o = out + oy * p.dst_w;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(p.src_h)) {
                            std::fill(o, o + p.dst_w, T(0));
                            continue;
                        }
                        const T* line = plane + static_cast<std::size_t>(iy) * p.src_w;
                        for (std::size_t ox = 0; ox < p.dst_w; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx) -
                                            static_cast<std::ptrdiff_t>(p.padding);
                            o[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(p.src_w))
                                        ? T(0)
                                        : line[ix];
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates cols back into src-shaped images.
template <typename T>
void col2im(const T* cols, const Patch& p, std::size_t n0, std::size_t nb, T* src) {
    const std::size_t ncols = nb * p.dst_plane();
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (std::size_t ky = 0; ky < p.kh; ++ky) {
            for (std::size_t kx = 0; kx < p.kw; ++kx) {
                const T* row = cols + ((c * p.kh + ky) * p.kw + kx) * ncols;
                for (std::size_t n = 0; n < nb; ++n) {
                    T* plane = src + ((n0 + n) * p.channels + c) * p.src_plane();
                    const T* in = row + n * p.dst_plane();
                    for (std::size_t oy = 0; oy < p.dst_h; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky) -
                                        static_cast<std::ptrdiff_t>(p.padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(p.src_h)) continue;
                        T* line = plane + static_cast<std::size_t>(iy) * p.src_w;
                        const T* i_row = in + oy * p.dst_w;
                        for (std::size_t ox = 0; ox < p.dst_w; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx) -
                                            static_cast<std::ptrdiff_t>(p.padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(p.src_w)) continue;
                            line[ix] += i_row[ox];
                        }
                    }
                }
            }
        }
    }
}

// [N, C, plane] <-> [C, nb*plane] channel-major batch gather/scatter.
template <typename T>
void gather_channels(const T* src, std::size_t channels, std::size_t plane, std::size_t n0,
                     std::size_t nb, T* dst) {
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t n = 0; n < nb; ++n)
            std::copy_n(src + ((n0 + n) * channels + c) * plane, plane,
                        dst + (c * nb + n) * plane);
}

template <typename T>
void scatter_channels(const T* src, std::size_t channels, std::size_t plane, std::size_t n0,
                      std::size_t nb, T* dst, bool accumulate) {
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t n = 0; n < nb; ++n) {
            const T* s = src + (c * nb + n) * plane;
            T* d = dst + ((n0 + n) * channels + c) * plane;
            if (accumulate) {
                for (std::size_t i = 0; i < plane; ++i) d[i] += s[i];
            } else {
                std::copy_n(s, plane, d);
            }
        }
    }
}

// Samples per im2col chunk so that the column buffer stays under ~16M values.
std::size_t chunk_size(std::size_t per_sample, std::size_t batch) {
    constexpr std::size_t budget = std::size_t{1} << 24;
    return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_sample, 1), 1, batch);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, ConvGeometry g) {
    require_rank(x.shape(), 4, "conv2d input");
    require_rank(w.shape(), 4, "conv2d kernel");
    const std::size_t n = x.size(0), c = x.size(1), h = x.size(2), wd = x.size(3);
    const std::size_t f = w.size(0), kh = w.size(2), kw = w.size(3);
    if (w.size(1) != c) {
        throw ShapeError("conv2d: kernel channels " + shape_string(w.shape()) +
                         " do not match input " + shape_string(x.shape()));
    }
    if (g.stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (kh > h + 2 * g.padding || kw > wd + 2 * g.padding) {
        throw ShapeError("conv2d: kernel " + shape_string(w.shape()) +
                         " larger than padded input " + shape_string(x.shape()));
    }
    const Patch p{c,  h, wd, kh, kw, g.stride, g.padding, (h + 2 * g.padding - kh) / g.stride + 1,
                  (wd + 2 * g.padding - kw) / g.stride + 1};
    const std::size_t chunk = chunk_size(p.rows() * p.dst_plane(), n);
    std::vector<T> out(n * f * p.dst_plane());
    {
        std::vector<T> cols(p.rows() * chunk * p.dst_plane());
        std::vector<T> res(f * chunk * p.dst_plane());
        for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
            const std::size_t nb = std::min(chunk, n - n0);
            const std::size_t ncols = nb * p.dst_plane();
            im2col(x.data().data(), p, n0, nb, cols.data());
            kernels::gemm<T>(Trans::no, Trans::no, f, ncols, p.rows(), T(1), w.data().data(),
                             p.rows(), cols.data(), ncols, T(0), res.data(), ncols);
            scatter_channels(res.data(), f, p.dst_plane(), n0, nb, out.data(), false);
        }
    }
    return make_result<T>(
        "conv2d", {n, f, p.dst_h, p.dst_w}, std::move(out), {x, w},
        [p, n, f, chunk](Node<T>& self) {
            Node<T>& nx = input(self, 0);
            Node<T>& nw = input(self, 1);
            std::vector<T> cols(p.rows() * chunk * p.dst_plane());
            std::vector<T> dy(f * chunk * p.dst_plane());
            for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
                const std::size_t nb = std::min(chunk, n - n0);
                const std::size_t ncols = nb * p.dst_plane();
                gather_channels(self.grad.data(), f, p.dst_plane(), n0, nb, dy.data());
                if (nw.requires_grad) {
                    im2col(nx.value.data(), p, n0, nb, cols.data());
                    kernels::gemm<T>(Trans::no, Trans::yes, f, p.rows(), ncols, T(1), dy.data(),
                                     ncols, cols.data(), ncols, T(1), nw.grad_buffer(), p.rows());
                }
                if (nx.requires_grad) {
                    kernels::gemm<T>(Trans::yes, Trans::no, p.rows(), ncols, f, T(1),
                                     nw.value.data(), p.rows(), dy.data(), ncols, T(0),
                                     cols.data(), ncols);
                    col2im(cols.data(), p, n0, nb, nx.grad_buffer());
                }
            }
        });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, ConvGeometry g) {
    require_rank(x.shape(), 4, "conv_transpose2d input");
    require_rank(w.shape(), 4, "conv_transpose2d kernel");
    const std::size_t n = x.size(0), fin = x.size(1), h = x.size(2), wd = x.size(3);
    const std::size_t cout = w.size(1), kh = w.size(2), kw = w.size(3);
    if (w.size(0) != fin) {
        throw ShapeError("conv_transpose2d: kernel " + shape_string(w.shape()) +
                         " does not match input channels " + shape_string(x.shape()));
    }
    if (g.stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
    const auto oh = static_cast<std::ptrdiff_t>((h - 1) * g.stride + kh) -
                    static_cast<std::ptrdiff_t>(2 * g.padding);
    const auto ow = static_cast<std::ptrdiff_t>((wd - 1) * g.stride + kw) -
                    static_cast<std::ptrdiff_t>(2 * g.padding);
    if (oh <= 0 || ow <= 0) {
        throw ShapeError("conv_transpose2d: non-positive output size for input " +
                         shape_string(x.shape()) + " and kernel " + shape_string(w.shape()));
    }
    // The output plays the role of conv2d's input; x is conv2d's output.
    const Patch p{cout, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), kh, kw,
                  g.stride, g.padding, h, wd};
    const std::size_t chunk = chunk_size(p.rows() * p.dst_plane(), n);
    std::vector<T> out(n * cout * p.src_plane(), T(0));
    {
        std::vector<T> xc(fin * chunk * p.dst_plane());
        std::vector<T> cols(p.rows() * chunk * p.dst_plane());
        for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
            const std::size_t nb = std::min(chunk, n - n0);
            const std::size_t ncols = nb * p.dst_plane();
            gather_channels(x.data().data(), fin, p.dst_plane(), n0, nb, xc.data());
            kernels::gemm<T>(Trans::yes, Trans::no, p.rows(), ncols, fin, T(1), w.data().data(),
                             p.rows(), xc.data(), ncols, T(0), cols.data(), ncols);
            col2im(cols.data(), p, n0, nb, out.data());
        }
    }
    return make_result<T>(
        "conv_transpose2d", {n, cout, p.src_h, p.src_w}, std::move(out), {x, w},
        [p, n, fin, chunk](Node<T>& self) {
            Node<T>& nx = input(self, 0);
            Node<T>& nw = input(self, 1);
            std::vector<T> cols(p.rows() * chunk * p.dst_plane());
            std::vector<T> buf(fin * chunk * p.dst_plane());
            for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
                const std::size_t nb = std::min(chunk, n - n0);
                const std::size_t ncols = nb * p.dst_plane();
                im2col(self.grad.data(), p, n0, nb, cols.data());
                if (nw.requires_grad) {
                    gather_channels(nx.value.data(), fin, p.dst_plane(), n0, nb, buf.data());
                    kernels::gemm<T>(Trans::no, Trans::yes, fin, p.rows(), ncols, T(1),
                                     buf.data(), ncols, cols.data(), ncols, T(1),
                                     nw.grad_buffer(), p.rows());
                }
                if (nx.requires_grad) {
                    kernels::gemm<T>(Trans::no, Trans::no, fin, ncols, p.rows(), T(1),
                                     nw.value.data(), p.rows(), cols.data(), ncols, T(0),
                                     buf.data(), ncols);
                    scatter_channels(buf.data(), fin, p.dst_plane(), n0, nb, nx.grad_buffer(),
                                     true);
                }
            }
        });
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() < 2 || bias.numel() != x.size(1)) {
        throw ShapeError("add_channel_bias: bias " + shape_string(bias.shape()) +
                         " does not match channels of " + shape_string(x.shape()));
    }
    const std::size_t n = x.size(0), c = x.size(1), plane = x.numel() / (n * c);
    std::vector<T> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t j = 0; j < plane; ++j) out[(i * c + ch) * plane + j] += bias.data()[ch];
    return make_result<T>("add_channel_bias", x.shape(), std::move(out), {x, bias},
                          [n, c, plane](Node<T>& self) {
                              Node<T>& nx = input(self, 0);
                              Node<T>& nb = input(self, 1);
                              if (nx.requires_grad) {
                                  T* gx = nx.grad_buffer();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      gx[i] += self.grad[i];
                              }
                              if (nb.requires_grad) {
                                  T* gb = nb.grad_buffer();
                                  for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t ch = 0; ch < c; ++ch) {
                                          double s = 0;
                                          const T* gr = self.grad.data() + (i * c + ch) * plane;
                                          for (std::size_t j = 0; j < plane; ++j) s += gr[j];
                                          gb[ch] += static_cast<T>(s);
                                      }
                              }
                          });
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, BnMode mode,
                      BatchNormOptions opt) {
    if (x.rank() != 4 && x.rank() != 2) {
        throw ShapeError("batchnorm2d expects [N,C,H,W] or [N,C], got " + shape_string(x.shape()));
    }
    const std::size_t n = x.size(0), c = x.size(1), plane = x.numel() / (n * c);
    const Tensor<T>* per_channel[] = {&gamma, &beta, &running_mean, &running_var};
    for (const Tensor<T>* t : per_channel) {
        if (t->numel() != c) {
            throw ShapeError("batchnorm2d: per-channel tensor " + shape_string(t->shape()) +
                             " does not match " + std::to_string(c) + " channels");
        }
    }
    const std::size_t count = n * plane;
    const auto xv = x.data();
    std::vector<T> mean_c(c), inv_std(c);
    if (mode == BnMode::train) {
        auto rm = running_mean.mutable_data();
        auto rv = running_var.mutable_data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < plane; ++j) s += xv[(i * c + ch) * plane + j];
            const double mu = s / static_cast<double>(count);
            double ss = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < plane; ++j) {
                    const double d = xv[(i * c + ch) * plane + j] - mu;
                    ss += d * d;
                }
            const double var = ss / static_cast<double>(count);
            const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
            mean_c[ch] = static_cast<T>(mu);
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
            rm[ch] = static_cast<T>((1.0 - opt.momentum) * rm[ch] + opt.momentum * mu);
            rv[ch] = static_cast<T>((1.0 - opt.momentum) * rv[ch] + opt.momentum * unbiased);
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean_c[ch] = running_mean.data()[ch];
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(double(running_var.data()[ch]) + opt.eps));
        }
    }
    std::vector<T> xhat(x.numel()), out(x.numel());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T g = gamma.data()[ch], b = beta.data()[ch];
            for (std::size_t j = 0; j < plane; ++j) {
                const std::size_t idx = (i * c + ch) * plane + j;
                xhat[idx] = (xv[idx] - mean_c[ch]) * inv_std[ch];
                out[idx] = g * xhat[idx] + b;
            }
        }
    const bool train = mode == BnMode::train;
    return make_result<T>(
        train ? "batchnorm2d_train" : "batchnorm2d_eval", x.shape(), std::move(out),
        {x, gamma, beta},
        [n, c, plane, count, train, xhat = std::move(xhat), inv_std](Node<T>& self) {
            Node<T>& nx = input(self, 0);
            Node<T>& ng = input(self, 1);
            Node<T>& nb = input(self, 2);
            const T* dy = self.grad.data();
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_dy = 0, sum_dy_xhat = 0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < plane; ++j) {
                        const std::size_t idx = (i * c + ch) * plane + j;
                        sum_dy += dy[idx];
                        sum_dy_xhat += double(dy[idx]) * xhat[idx];
                    }
                if (ng.requires_grad) ng.grad_buffer()[ch] += static_cast<T>(sum_dy_xhat);
                if (nb.requires_grad) nb.grad_buffer()[ch] += static_cast<T>(sum_dy);
                if (!nx.requires_grad) continue;
                T* gx = nx.grad_buffer();
                const T scale = ng.value[ch] * inv_std[ch];
                const T mean_dy = static_cast<T>(sum_dy / double(count));
                const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / double(count));
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < plane; ++j) {
                        const std::size_t idx = (i * c + ch) * plane + j;
                        if (train) {
                            gx[idx] += scale * (dy[idx] - mean_dy - xhat[idx] * mean_dy_xhat);
                        } else {
                            gx[idx] += scale * dy[idx];
                        }
                    }
            }
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    double s = 0;
    for (T v : a.data()) s += v;
    return make_result<T>("sum", {}, {static_cast<T>(s)}, {a}, [](Node<T>& self) {
        Node<T>& na = input(self, 0);
        T* g = na.grad_buffer();
        const T seed = self.grad[0];
        for (std::size_t i = 0; i < na.value.size(); ++i) g[i] += seed;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    double s = 0;
    for (T v : a.data()) s += v;
    const std::size_t count = a.numel();
    return make_result<T>("mean", {}, {static_cast<T>(s / double(count))}, {a},
                          [count](Node<T>& self) {
                              Node<T>& na = input(self, 0);
                              T* g = na.grad_buffer();
                              const T seed = self.grad[0] / static_cast<T>(count);
                              for (std::size_t i = 0; i < count; ++i) g[i] += seed;
                          });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
        Node<T>& na = input(self, 0);
        T* g = na.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> group_sum(const Tensor<T>& a, std::size_t groups) {
    if (a.rank() == 0 || groups == 0 || a.size(0) % groups != 0) {
        throw ShapeError("group_sum: leading extent of " + shape_string(a.shape()) +
                         " not divisible by " + std::to_string(groups));
    }
    Shape shape = a.shape();
    shape[0] /= groups;
    const std::size_t item = a.numel() / a.size(0);
    const std::size_t n = shape[0];
    std::vector<T> out(n * item, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t g = 0; g < groups; ++g) {
            const T* src = a.data().data() + (i * groups + g) * item;
            T* dst = out.data() + i * item;
            for (std::size_t j = 0; j < item; ++j) dst[j] += src[j];
        }
    return make_result<T>("group_sum", std::move(shape), std::move(out), {a},
                          [n, groups, item](Node<T>& self) {
                              Node<T>& na = input(self, 0);
                              T* g = na.grad_buffer();
                              for (std::size_t i = 0; i < n; ++i)
                                  for (std::size_t k = 0; k < groups; ++k)
                                      for (std::size_t j = 0; j < item; ++j)
                                          g[(i * groups + k) * item + j] +=
                                              self.grad[i * item + j];
                          });
}

template <typename T>
Tensor<T> scale_per_item(const Tensor<T>& x, const Tensor<T>& alpha) {
    if (x.rank() == 0 || alpha.numel() != x.size(0)) {
        throw ShapeError("scale_per_item: " + shape_string(alpha.shape()) +
                         " does not match batch of " + shape_string(x.shape()));
    }
    const std::size_t n = x.size(0), item = x.numel() / n;
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < item; ++j)
            out[i * item + j] = alpha.data()[i] * x.data()[i * item + j];
    return make_result<T>("scale_per_item", x.shape(), std::move(out), {x, alpha},
                          [n, item](Node<T>& self) {
                              Node<T>& nx = input(self, 0);
                              Node<T>& na = input(self, 1);
                              if (nx.requires_grad) {
                                  T* gx = nx.grad_buffer();
                                  for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t j = 0; j < item; ++j)
                                          gx[i * item + j] += na.value[i] * self.grad[i * item + j];
                              }
                              if (na.requires_grad) {
                                  T* ga = na.grad_buffer();
                                  for (std::size_t i = 0; i < n; ++i) {
                                      double s = 0;
                                      for (std::size_t j = 0; j < item; ++j)
                                          s += double(self.grad[i * item + j]) *
                                               nx.value[i * item + j];
                                      ga[i] += static_cast<T>(s);
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> convolve_same_per_item(const Tensor<T>& x, const Tensor<T>& k) {
    require_rank(x.shape(), 4, "convolve_same_per_item input");
    require_rank(k.shape(), 4, "convolve_same_per_item kernel");
    const std::size_t planes = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
    const std::size_t kh = k.size(2), kw = k.size(3);
    if (k.size(0) != x.size(0) || k.size(1) != x.size(1)) {
        throw ShapeError("convolve_same_per_item: kernel " + shape_string(k.shape()) +
                         " does not pair with input " + shape_string(x.shape()));
    }
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw ShapeError("convolve_same_per_item: kernel extents must be odd, got " +
                         shape_string(k.shape()));
    }
    const auto ch = static_cast<std::ptrdiff_t>(kh / 2), cw = static_cast<std::ptrdiff_t>(kw / 2);
    const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
    // out[i,j] = sum_{a,b} k[a,b] * x[i - (a - ch), j - (b - cw)]
    auto for_each_tap = [=](std::size_t plane, auto&& fn) {
        for (std::ptrdiff_t a = 0; a < static_cast<std::ptrdiff_t>(kh); ++a)
            for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(kw); ++b) {
                const std::ptrdiff_t dy = a - ch, dx = b - cw;
                const std::size_t kidx = plane * kh * kw + static_cast<std::size_t>(a) * kw +
                                         static_cast<std::size_t>(b);
                for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, dy);
                     i < std::min(H, H + dy); ++i)
                    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, dx);
                         j < std::min(W, W + dx); ++j) {
                        const std::size_t oidx =
                            plane * h * w + static_cast<std::size_t>(i * W + j);
                        const std::size_t iidx =
                            plane * h * w + static_cast<std::size_t>((i - dy) * W + (j - dx));
                        fn(kidx, oidx, iidx);
                    }
            }
    };
    std::vector<double> acc(x.numel(), 0.0);
    const auto xv = x.data();
    const auto kv = k.data();
    for (std::size_t p = 0; p < planes; ++p)
        for_each_tap(p, [&](std::size_t ki, std::size_t oi, std::size_t ii) {
            acc[oi] += double(kv[ki]) * double(xv[ii]);
        });
    std::vector<T> out(acc.begin(), acc.end());
    return make_result<T>("convolve_same_per_item", x.shape(), std::move(out), {x, k},
                          [planes, for_each_tap](Node<T>& self) {
                              Node<T>& nx = input(self, 0);
                              Node<T>& nk = input(self, 1);
                              T* gx = nx.requires_grad ? nx.grad_buffer() : nullptr;
                              T* gk = nk.requires_grad ? nk.grad_buffer() : nullptr;
                              std::vector<double> kacc(gk ? nk.value.size() : 0, 0.0);
                              for (std::size_t p = 0; p < planes; ++p)
                                  for_each_tap(p, [&](std::size_t ki, std::size_t oi,
                                                      std::size_t ii) {
                                      if (gx) gx[ii] += nk.value[ki] * self.grad[oi];
                                      if (gk) kacc[ki] += double(self.grad[oi]) * nx.value[ii];
                                  });
                              for (std::size_t i = 0; i < kacc.size(); ++i) gk[i] += T(kacc[i]);
                          });
}

#define SDSEP_INSTANTIATE(T)                                                                   \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                          \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                     \
    template Tensor<T> neg<T>(const Tensor<T>&);                                               \
    template Tensor<T> relu<T>(const Tensor<T>&);                                              \
    template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                     \
    template Tensor<T> tanh<T>(const Tensor<T>&);                                              \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                           \
    template Tensor<T> square<T>(const Tensor<T>&);                                            \
    template Tensor<T> log<T>(const Tensor<T>&);                                               \
    template Tensor<T> softplus<T>(const Tensor<T>&);                                          \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, ConvGeometry);            \
    template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&, ConvGeometry);  \
    template Tensor<T> add_channel_bias<T>(const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      Tensor<T>&, Tensor<T>&, BnMode, BatchNormOptions);       \
    template Tensor<T> sum<T>(const Tensor<T>&);                                               \
    template Tensor<T> mean<T>(const Tensor<T>&);                                              \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                    \
    template Tensor<T> group_sum<T>(const Tensor<T>&, std::size_t);                            \
    template Tensor<T> scale_per_item<T>(const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> convolve_same_per_item<T>(const Tensor<T>&, const Tensor<T>&);

SDSEP_INSTANTIATE(float)
SDSEP_INSTANTIATE(double)
#undef SDSEP_INSTANTIATE

}  // namespace sdsep::ops
