#include "sdsep/nmf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdsep/errors.hpp"
#include "sdsep/kernels.hpp"
#include "sdsep/rng.hpp"

namespace sdsep::baselines {

using kernels::Trans;

namespace {

// C = op(A) * op(B)
Matrix product(const Matrix& A, Trans ta, const Matrix& B, Trans tb) {
    const std::size_t m = ta == Trans::yes ? A.cols : A.rows;
    const std::size_t k = ta == Trans::yes ? A.rows : A.cols;
    const std::size_t n = tb == Trans::yes ? B.rows : B.cols;
    if ((tb == Trans::yes ? B.cols : B.rows) != k) throw ShapeError("nmf: inner dimension mismatch");
    Matrix C(m, n);
    if (m && n && k)
        kernels::gemm<double>(ta, tb, m, n, k, 1.0, A.v.data(), A.cols, B.v.data(), B.cols, 0.0,
                              C.v.data(), n);
    return C;
}

void multiplicative(std::vector<double>& x, const std::vector<double>& num,
                    const std::vector<double>& den) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= num[i] / (den[i] + kNmfEps);
}

void check_non_negative(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!(x >= 0)) throw ContractError(std::string(what) + ": entries must be non-negative");
}

Matrix column(std::span<const double> v) {
    Matrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.v.begin());
    return m;
}

double squared_residual(std::span<const double> v, std::span<const double> r) {
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) s += (v[i] - r[i]) * (v[i] - r[i]);
    return s;
}

// Multiplicative H updates against a fixed non-negative A.
void solve_h(const Matrix& A, std::span<const double> v, Matrix& H, std::size_t iterations,
             std::vector<double>& objective) {
    const Matrix V = column(v);
    const Matrix AtV = product(A, Trans::yes, V, Trans::no);
    const Matrix AtA = product(A, Trans::yes, A, Trans::no);
    for (std::size_t it = 0; it < iterations; ++it) {
        const Matrix den = product(AtA, Trans::no, H, Trans::no);
        multiplicative(H.v, AtV.v, den.v);
        objective.push_back(squared_residual(v, product(A, Trans::no, H, Trans::no).v));
    }
}

std::vector<double> delta_kernel(std::size_t ks) {
    std::vector<double> k(ks * ks, 0.0);
    k[(ks / 2) * ks + ks / 2] = 1.0;
    return k;
}

Matrix convolved_dictionary(const NmfDictionary& d, const std::vector<std::vector<double>>& kernels,
                            std::size_t ks, std::size_t side) {
    const std::size_t m = d.W.rows, R = d.W.cols;
    Matrix A(m, R);
    std::vector<double> col(m);
    for (std::size_t j = 0; j < R; ++j) {
        for (std::size_t i = 0; i < m; ++i) col[i] = d.W(i, j);
        const auto out = convolve_same(col, kernels[d.class_of(j)], ks, side);
        for (std::size_t i = 0; i < m; ++i) A(i, j) = out[i];
    }
    return A;
}

// W_c H_c for every class.
std::vector<std::vector<double>> class_images(const NmfDictionary& d, const Matrix& H) {
    std::vector<std::vector<double>> out(d.classes, std::vector<double>(d.W.rows, 0.0));
    for (std::size_t i = 0; i < d.W.rows; ++i)
        for (std::size_t j = 0; j < d.W.cols; ++j) out[d.class_of(j)][i] += d.W(i, j) * H.v[j];
    return out;
}

void finalize(NmfResult& r, const NmfDictionary& d, const Matrix& A, const Matrix& H,
              std::size_t K) {
    r.H = H.v;
    r.activity.assign(d.classes, 0.0);
    for (std::size_t j = 0; j < H.v.size(); ++j) r.activity[d.class_of(j)] += std::abs(H.v[j]);
    std::vector<std::size_t> order(d.classes);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return r.activity[a] > r.activity[b]; });
    r.classes.assign(order.begin(), order.begin() + K);
    const auto per_class = class_images(d, H);
    for (std::size_t c : r.classes) r.estimates.push_back(per_class[c]);
    r.reconstruction = product(A, Trans::no, H, Trans::no).v;
}

void check_decompose_args(std::span<const double> mixture, const NmfDictionary& d, std::size_t K) {
    if (mixture.size() != d.W.rows)
        throw ShapeError("nmf: mixture has " + std::to_string(mixture.size()) + " pixels, dictionary " +
                         std::to_string(d.W.rows));
    if (K == 0 || K > d.classes) throw ContractError("nmf: K must be in [1, classes]");
    check_non_negative(mixture, "nmf mixture");
}

}  // namespace

double frobenius_sq(const Matrix& V, const Matrix& W, const Matrix& H) {
    return squared_residual(V.v, product(W, Trans::no, H, Trans::no).v);
}

NmfFactors nmf_train(const Matrix& V, std::size_t R, std::size_t iterations, std::uint64_t seed) {
    if (R == 0) throw ContractError("nmf_train: R must be >= 1");
    check_non_negative(V.v, "nmf_train input");
    const double mean = V.v.empty() ? 0.0 : std::accumulate(V.v.begin(), V.v.end(), 0.0) / V.v.size();
    const double scale = std::sqrt(mean / double(R));
    Rng rng(seed);
    NmfFactors f{Matrix(V.rows, R), Matrix(R, V.cols), {}};
    rng.fill_uniform<double>(f.W.v, 0.0, scale);
    rng.fill_uniform<double>(f.H.v, 0.0, scale);
    f.objective.push_back(frobenius_sq(V, f.W, f.H));
    for (std::size_t it = 0; it < iterations; ++it) {
        const Matrix WtV = product(f.W, Trans::yes, V, Trans::no);
        const Matrix WtW = product(f.W, Trans::yes, f.W, Trans::no);
        multiplicative(f.H.v, WtV.v, product(WtW, Trans::no, f.H, Trans::no).v);
        const Matrix VHt = product(V, Trans::no, f.H, Trans::yes);
        const Matrix HHt = product(f.H, Trans::no, f.H, Trans::yes);
        multiplicative(f.W.v, VHt.v, product(f.W, Trans::no, HHt, Trans::no).v);
        f.objective.push_back(frobenius_sq(V, f.W, f.H));
    }
    return f;
}

void normalize_columns(NmfFactors& f) {
    for (std::size_t j = 0; j < f.W.cols; ++j) {
        double n = 0;
        for (std::size_t i = 0; i < f.W.rows; ++i) n += f.W(i, j) * f.W(i, j);
        n = std::sqrt(n);
        if (n <= 0) continue;
        for (std::size_t i = 0; i < f.W.rows; ++i) f.W(i, j) /= n;
        for (std::size_t k = 0; k < f.H.cols; ++k) f.H(j, k) *= n;
    }
}

std::vector<double> to_unit(std::span<const float> image) {
    std::vector<double> out(image.size());
    for (std::size_t i = 0; i < image.size(); ++i)
        out[i] = std::clamp((double(image[i]) + 1.0) / 2.0, 0.0, 1.0);
    return out;
}

std::vector<double> shift_mixture(std::span<const float> mixture) {
    std::vector<float> sorted(mixture.begin(), mixture.end());
    if (sorted.empty()) return {};
    const auto mid = sorted.begin() + sorted.size() / 2;
    std::nth_element(sorted.begin(), mid, sorted.end());
    const double median = *mid;
    std::vector<double> out(mixture.size());
    for (std::size_t i = 0; i < mixture.size(); ++i)
        out[i] = std::max(0.0, (double(mixture[i]) - median) / 2.0);
    return out;
}

std::vector<float> to_signed(std::span<const double> estimate) {
    std::vector<float> out(estimate.size());
    for (std::size_t i = 0; i < estimate.size(); ++i) out[i] = float(2.0 * estimate[i] - 1.0);
    return out;
}

NmfDictionary train_dictionary(const mnist::ImageSet& train, const NmfTrainOptions& o) {
    NmfDictionary d;
    d.bases_per_class = o.bases_per_class;
    d.classes = 10;
    const std::size_t m = mnist::kPixels, R = o.bases_per_class;
    d.W = Matrix(m, d.classes * R);
    for (std::size_t c = 0; c < d.classes; ++c) {
        auto idx = train.indices_of_label(static_cast<std::uint8_t>(c));
        if (idx.empty()) throw ContractError("nmf: no training images for digit " + std::to_string(c));
        if (idx.size() > o.images_per_class) idx.resize(o.images_per_class);
        Matrix V(m, idx.size());
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const auto img = to_unit(train.image(idx[j]));
            for (std::size_t i = 0; i < m; ++i) V(i, j) = img[i];
        }
        auto f = nmf_train(V, R, o.iterations, derive_seed(o.seed, c));
        normalize_columns(f);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < R; ++j) d.W(i, c * R + j) = f.W(i, j);
    }
    return d;
}

Checkpoint export_dictionary(const NmfDictionary& d) {
    Checkpoint ck;
    ck.meta() = {{"kind", "nmf"}, {"bases_per_class", d.bases_per_class}, {"classes", d.classes}};
    ck.put<double>("W", {d.W.rows, d.W.cols}, d.W.v);
    return ck;
}

NmfDictionary load_dictionary(const Checkpoint& ck) {
    if (ck.meta().value("kind", "") != "nmf")
        throw ContractError("checkpoint is not an NMF dictionary");
    NmfDictionary d;
    d.bases_per_class = ck.meta().at("bases_per_class");
    d.classes = ck.meta().at("classes");
    const auto& s = ck.shape("W");
    if (s.size() != 2 || s[1] != d.bases_per_class * d.classes)
        throw ShapeError("nmf dictionary: bad W shape " + shape_string(s));
    d.W = Matrix(s[0], s[1]);
    d.W.v = ck.values<double>("W");
    return d;
}

NmfResult nmf_decompose(std::span<const double> mixture, const NmfDictionary& dict, std::size_t K,
                        std::size_t iterations) {
    check_decompose_args(mixture, dict, K);
    NmfResult r;
    Matrix H(dict.W.cols, 1, 1.0);
    r.objective.push_back(squared_residual(mixture, product(dict.W, Trans::no, H, Trans::no).v));
    solve_h(dict.W, mixture, H, iterations, r.objective);
    finalize(r, dict, dict.W, H, K);
    return r;
}

NmfResult cnmf_decompose(std::span<const double> mixture, const NmfDictionary& dict, std::size_t K,
                         const CnmfOptions& o) {
    check_decompose_args(mixture, dict, K);
    if (o.kernel_size % 2 == 0) throw ContractError("cnmf: kernel size must be odd");
    const std::size_t ks = o.kernel_size, side = mnist::kSide, m = mixture.size();
    NmfResult r;
    r.kernels.assign(dict.classes, delta_kernel(ks));
    Matrix A = convolved_dictionary(dict, r.kernels, ks, side);
    Matrix H(dict.W.cols, 1, 1.0);
    r.objective.push_back(squared_residual(mixture, product(A, Trans::no, H, Trans::no).v));
    solve_h(A, mixture, H, o.iterations, r.objective);

    const long rad = long(ks / 2), S = long(side);
    const std::size_t kk = ks * ks, nk = dict.classes * kk;
    for (std::size_t alt = 0; alt < o.alternations; ++alt) {
        // With H fixed the model is linear in the kernels: v ~ M k, where the
        // column of M for (class, tap) is W_c H_c shifted by that tap.
        const auto U = class_images(dict, H);
        Matrix M(m, nk);
        for (std::size_t c = 0; c < dict.classes; ++c)
            for (long di = -rad; di <= rad; ++di)
                for (long dj = -rad; dj <= rad; ++dj) {
                    const std::size_t col = c * kk + std::size_t((di + rad) * long(ks) + (dj + rad));
                    for (long y = std::max(0L, di); y < std::min(S, S + di); ++y)
                        for (long x = std::max(0L, dj); x < std::min(S, S + dj); ++x)
                            M(std::size_t(y * S + x), col) = U[c][(y - di) * S + (x - dj)];
                }
        const Matrix G = product(M, Trans::yes, M, Trans::no);
        const Matrix b = product(M, Trans::yes, column(mixture), Trans::no);
        double vv = 0;
        for (double x : mixture) vv += x * x;
        Matrix k(nk, 1);
        for (std::size_t c = 0; c < dict.classes; ++c)
            std::copy(r.kernels[c].begin(), r.kernels[c].end(), k.v.begin() + c * kk);
        // Objective from a precomputed G k.
        auto f = [&](const Matrix& kv, const Matrix& Gk) {
            double q = vv;
            for (std::size_t i = 0; i < nk; ++i) q += kv.v[i] * (Gk.v[i] - 2 * b.v[i]);
            return q;
        };
        // Largest eigenvalue of G by power iteration; 1/(2 lambda) is a safe step.
        Matrix e(nk, 1, 1.0);
        double lambda = 0;
        for (int it = 0; it < 50; ++it) {
            Matrix ge = product(G, Trans::no, e, Trans::no);
            double n = 0;
            for (double x : ge.v) n += x * x;
            n = std::sqrt(n);
            if (n == 0) break;
            lambda = n / std::sqrt(std::inner_product(e.v.begin(), e.v.end(), e.v.begin(), 0.0));
            for (auto& x : ge.v) x /= n;
            e = std::move(ge);
        }
        if (lambda > 0) {
            const double step = 1.0 / (2.0 * lambda * 1.01);
            Matrix Gk = product(G, Trans::no, k, Trans::no);
            double fk = f(k, Gk);
            for (std::size_t it = 0; it < o.kernel_steps; ++it) {
                Matrix next(nk, 1);
                for (std::size_t i = 0; i < nk; ++i)
                    next.v[i] = std::max(0.0, k.v[i] - step * 2.0 * (Gk.v[i] - b.v[i]));
                Matrix Gn = product(G, Trans::no, next, Trans::no);
                const double fn = f(next, Gn);
                if (!(fn <= fk)) break;
                k = std::move(next);
                Gk = std::move(Gn);
                fk = fn;
            }
        }
        for (std::size_t c = 0; c < dict.classes; ++c)
            std::copy(k.v.begin() + c * kk, k.v.begin() + (c + 1) * kk, r.kernels[c].begin());
        A = convolved_dictionary(dict, r.kernels, ks, side);
        r.objective.push_back(squared_residual(mixture, product(A, Trans::no, H, Trans::no).v));
        solve_h(A, mixture, H, o.h_updates, r.objective);
    }
    finalize(r, dict, A, H, K);
    return r;
}

std::vector<double> convolve_same(std::span<const double> image, std::span<const double> kernel,
                                  std::size_t ks, std::size_t side) {
    if (image.size() != side * side || kernel.size() != ks * ks || ks % 2 == 0)
        throw ShapeError("convolve_same: bad image or kernel size");
    std::vector<double> out(side * side, 0.0);
    const long r = long(ks / 2), S = long(side);
    for (long y = 0; y < S; ++y)
        for (long x = 0; x < S; ++x) {
            double acc = 0;
            for (long di = -r; di <= r; ++di) {
                const long sy = y - di;
                if (sy < 0 || sy >= S) continue;
                for (long dj = -r; dj <= r; ++dj) {
                    const long sx = x - dj;
                    if (sx < 0 || sx >= S) continue;
                    acc += kernel[(di + r) * ks + (dj + r)] * image[sy * S + sx];
                }
            }
            out[y * S + x] = acc;
        }
    return out;
}

}  // namespace sdsep::baselines
