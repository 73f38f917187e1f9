#include "sdsep/decompose.hpp"

#include <cmath>
#include <sstream>

#include "sdsep/errors.hpp"
#include "sdsep/io.hpp"
#include "sdsep/ops.hpp"

namespace fs = std::filesystem;

namespace sdsep::decompose {

void DecomposeConfig::validate() const {
    if (K == 0) throw ContractError("decompose: K must be >= 1");
    if (restarts == 0) throw ContractError("decompose: restarts must be >= 1");
    if (!(beta >= 0) || !std::isfinite(beta)) throw ContractError("decompose: beta must be >= 0");
    if (filter_kind == mixer::FilterKind::tensor && filter_size % 2 == 0)
        throw ContractError("decompose: filter size must be odd");
    if (trace_every == 0) throw ContractError("decompose: trace_every must be >= 1");
}

nlohmann::json to_json(const DecomposeConfig& c) {
    return {{"K", c.K},
            {"filter_kind", c.filter_kind == mixer::FilterKind::constant ? "constant" : "tensor"},
            {"filter_size", c.filter_size},
            {"beta", c.beta},
            {"iterations", c.iterations},
            {"restarts", c.restarts},
            {"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"eps", c.adam.eps},
            {"seed", c.seed},
            {"trace_every", c.trace_every},
            {"select_by_objective", c.select_by_objective}};
}

DecomposeConfig config_from_json(const nlohmann::json& j) {
    DecomposeConfig c;
    c.K = j.at("K");
    c.filter_kind = j.at("filter_kind") == "constant" ? mixer::FilterKind::constant
                                                      : mixer::FilterKind::tensor;
    c.filter_size = j.at("filter_size");
    c.beta = j.at("beta");
    c.iterations = j.at("iterations");
    c.restarts = j.at("restarts");
    c.adam = {j.at("lr"), j.at("beta1"), j.at("beta2"), j.at("eps")};
    c.seed = j.at("seed");
    c.trace_every = j.at("trace_every");
    c.select_by_objective = j.at("select_by_objective");
    return c;
}

namespace {

template <typename T>
Tensor<T> apply_filters(const Tensor<T>& images, const Tensor<T>& filters) {
    if (filters.rank() == 1) return ops::scale_per_item(images, filters);
    return ops::convolve_same_per_item(images, filters);
}

template <typename T>
void check_inputs(const gan::Generator<T>& g, const Tensor<T>& seeds, const Tensor<T>& filters) {
    const std::size_t zdim = g.architecture().z_dim;
    if (seeds.rank() != 2 || seeds.size(1) != zdim)
        throw ShapeError("reconstruct: seeds must be [K, " + std::to_string(zdim) + "], got " +
                         shape_string(seeds.shape()));
    const std::size_t K = seeds.size(0);
    const bool constant = filters.rank() == 1 && filters.size(0) == K;
    const bool tensor = filters.rank() == 4 && filters.size(0) == K && filters.size(1) == 1 &&
                        filters.size(2) == filters.size(3);
    if (!constant && !tensor)
        throw ShapeError("reconstruct: filters " + shape_string(filters.shape()) +
                         " do not match K=" + std::to_string(K));
}

template <typename T>
Shape filter_shape(const DecomposeConfig& c, std::size_t items) {
    if (c.filter_kind == mixer::FilterKind::constant) return {items};
    return {items, 1, c.filter_size, c.filter_size};
}

template <typename T>
bool all_finite(const T* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

template <typename T>
struct Init {
    std::vector<T> seeds, filters;
};

template <typename T>
Init<T> draw_init(Rng& rng, const DecomposeConfig& c, std::size_t zdim) {
    Init<T> init;
    init.seeds.resize(c.K * zdim);
    init.filters.resize(c.K * c.filter_numel());
    rng.fill_normal<T>(init.seeds);
    rng.fill_normal<T>(init.filters);
    return init;
}

// Finalizes a restart from its parameters with a batch-of-K forward pass.
template <typename T>
void finish(Restart<T>& r, std::span<const T> x, const gan::Generator<T>& g,
            const DecomposeConfig& c) {
    const std::size_t zdim = g.architecture().z_dim;
    const auto seeds = Tensor<T>::from({c.K, zdim}, r.seeds);
    const auto filters = Tensor<T>::from(filter_shape<T>(c, c.K), r.filters);
    const auto sources = g.generate(seeds);
    const auto recon = ops::group_sum(apply_filters(sources, filters), c.K);
    r.sources.assign(sources.data().begin(), sources.data().end());
    r.reconstruction.assign(recon.data().begin(), recon.data().end());
    double err = 0, pen = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = double(x[i]) - double(r.reconstruction[i]);
        err += d * d;
    }
    for (T a : r.filters) pen += double(a) * double(a);
    r.reconstruction_error = err;
    r.penalty = pen;
    r.objective = err + c.beta * pen;
    if (!r.failed && !std::isfinite(r.objective)) {
        r.failed = true;
        r.diagnostic = "non-finite final objective";
    }
}

// Runs all restarts as one batch; each restart's trajectory depends only on
// its own initialization.
template <typename T>
std::vector<Restart<T>> run(const Tensor<T>& x, const gan::Generator<T>& g,
                            const DecomposeConfig& c, const std::vector<Init<T>>& inits) {
    c.validate();
    if (g.net().trainable())
        throw ContractError("decompose: generator must be frozen (set_trainable(false))");
    const std::size_t npix = mnist::kPixels;
    if (x.numel() != npix)
        throw ShapeError("decompose: mixture must have " + std::to_string(npix) + " pixels, got " +
                         shape_string(x.shape()));
    const std::size_t R = inits.size(), K = c.K, zdim = g.architecture().z_dim;
    const std::size_t zn = K * zdim, fn = K * c.filter_numel();

    std::vector<T> zv, fv;
    for (const auto& in : inits) {
        if (in.seeds.size() != zn || in.filters.size() != fn)
            throw ShapeError("decompose: initialization size mismatch");
        zv.insert(zv.end(), in.seeds.begin(), in.seeds.end());
        fv.insert(fv.end(), in.filters.begin(), in.filters.end());
    }
    auto z = Tensor<T>::from({R * K, zdim}, std::move(zv), true);
    auto alpha = Tensor<T>::from(filter_shape<T>(c, R * K), std::move(fv), true);
    std::vector<T> xrep;
    xrep.reserve(R * npix);
    for (std::size_t r = 0; r < R; ++r) xrep.insert(xrep.end(), x.data().begin(), x.data().end());
    const auto target = Tensor<T>::from({R, 1, mnist::kSide, mnist::kSide}, std::move(xrep));

    std::vector<T> zm(R * zn, T(0)), zs(R * zn, T(0)), am(R * fn, T(0)), as(R * fn, T(0));
    std::vector<Restart<T>> out(R);
    for (std::size_t r = 0; r < R; ++r) out[r].index = r;

    auto fail = [&](std::size_t r, std::string why) {
        out[r].failed = true;
        out[r].diagnostic = std::move(why);
        auto zd = z.mutable_data();
        auto ad = alpha.mutable_data();
        std::fill(zd.begin() + r * zn, zd.begin() + (r + 1) * zn, T(0));
        std::fill(ad.begin() + r * fn, ad.begin() + (r + 1) * fn, T(0));
    };

    for (std::size_t t = 0;; ++t) {
        const auto recon = ops::group_sum(apply_filters(g.generate(z), alpha), K);
        const auto rv = recon.data();
        const auto av = alpha.data();
        const bool log = t % c.trace_every == 0 || t == c.iterations;
        for (std::size_t r = 0; r < R; ++r) {
            if (out[r].failed) continue;
            double err = 0, pen = 0;
            for (std::size_t i = 0; i < npix; ++i) {
                const double d = double(x.data()[i]) - double(rv[r * npix + i]);
                err += d * d;
            }
            for (std::size_t i = 0; i < fn; ++i) pen += double(av[r * fn + i]) * av[r * fn + i];
            const double obj = err + c.beta * pen;
            if (!std::isfinite(obj)) {
                fail(r, "non-finite objective at iteration " + std::to_string(t));
                continue;
            }
            if (log) out[r].trace.push_back({t, obj});
        }
        if (t == c.iterations) break;

        auto loss = ops::add(ops::sum(ops::square(ops::sub(recon, target))),
                             ops::scale(ops::sum(ops::square(alpha)), T(c.beta)));
        z.zero_grad();
        alpha.zero_grad();
        loss.backward();
        auto zd = z.mutable_data();
        auto ad = alpha.mutable_data();
        const auto zg = z.grad();
        const auto ag = alpha.grad();
        for (std::size_t r = 0; r < R; ++r) {
            if (out[r].failed) continue;
            if (!all_finite(zg.data() + r * zn, zn) || !all_finite(ag.data() + r * fn, fn)) {
                fail(r, "non-finite gradient at iteration " + std::to_string(t));
                continue;
            }
            nn::adam_update(zn, zd.data() + r * zn, zg.data() + r * zn, zm.data() + r * zn,
                            zs.data() + r * zn, t + 1, c.adam);
            nn::adam_update(fn, ad.data() + r * fn, ag.data() + r * fn, am.data() + r * fn,
                            as.data() + r * fn, t + 1, c.adam);
        }
    }

    const auto zd = z.data();
    const auto ad = alpha.data();
    for (std::size_t r = 0; r < R; ++r) {
        out[r].seeds.assign(zd.begin() + r * zn, zd.begin() + (r + 1) * zn);
        out[r].filters.assign(ad.begin() + r * fn, ad.begin() + (r + 1) * fn);
        finish(out[r], x.data(), g, c);
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> reconstruct(const gan::Generator<T>& g, const Tensor<T>& seeds, const Tensor<T>& filters) {
    check_inputs(g, seeds, filters);
    return ops::group_sum(apply_filters(g.generate(seeds), filters), seeds.size(0));
}

template <typename T>
Tensor<T> objective(const Tensor<T>& x, const gan::Generator<T>& g, const Tensor<T>& seeds,
                    const Tensor<T>& filters, double beta) {
    const auto recon = reconstruct(g, seeds, filters);
    if (x.numel() != recon.numel())
        throw ShapeError("objective: mixture " + shape_string(x.shape()) + " vs reconstruction " +
                         shape_string(recon.shape()));
    const auto xr = ops::reshape(x, recon.shape());
    return ops::add(ops::sum(ops::square(ops::sub(xr, recon))),
                    ops::scale(ops::sum(ops::square(filters)), T(beta)));
}

template <typename T>
Restart<T> decompose_once(const Tensor<T>& x, const gan::Generator<T>& g,
                          const DecomposeConfig& config, Rng& rng) {
    std::vector<Init<T>> inits{draw_init<T>(rng, config, g.architecture().z_dim)};
    return std::move(run(x, g, config, inits).front());
}

template <typename T>
std::size_t select_restart(const std::vector<Restart<T>>& restarts, bool by_objective) {
    std::size_t best = restarts.size();
    for (std::size_t i = 0; i < restarts.size(); ++i) {
        if (restarts[i].failed) continue;
        const auto key = [&](const Restart<T>& r) {
            return by_objective ? r.objective : r.reconstruction_error;
        };
        if (best == restarts.size() || key(restarts[i]) < key(restarts[best])) best = i;
    }
    if (best == restarts.size()) {
        std::ostringstream os;
        os << "all " << restarts.size() << " restarts failed";
        for (const auto& r : restarts) os << "; #" << r.index << ": " << r.diagnostic;
        throw NumericError(os.str());
    }
    return best;
}

template <typename T>
Decomposition<T> decompose(const Tensor<T>& x, const gan::Generator<T>& g,
                           const DecomposeConfig& config) {
    config.validate();
    std::vector<Init<T>> inits;
    for (std::size_t i = 0; i < config.restarts; ++i) {
        Rng rng(derive_seed(config.seed, i));
        inits.push_back(draw_init<T>(rng, config, g.architecture().z_dim));
    }
    Decomposition<T> d;
    d.config = config;
    d.restarts = run(x, g, config, inits);
    d.chosen = select_restart(d.restarts, config.select_by_objective);
    return d;
}

template <typename T>
Decomposition<T> first_restarts(const Decomposition<T>& d, std::size_t restarts) {
    if (restarts == 0 || restarts > d.restarts.size())
        throw ContractError("first_restarts: " + std::to_string(restarts) + " of " +
                            std::to_string(d.restarts.size()));
    Decomposition<T> out;
    out.config = d.config;
    out.config.restarts = restarts;
    out.restarts.assign(d.restarts.begin(), d.restarts.begin() + restarts);
    out.chosen = select_restart(out.restarts, out.config.select_by_objective);
    return out;
}

namespace {

template <typename F>
std::vector<float> concat(const std::vector<Restart<float>>& rs, F field) {
    std::vector<float> out;
    for (const auto& r : rs) {
        const auto& v = field(r);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

}  // namespace

void save_decomposition(const Decomposition<float>& d, const fs::path& dir) {
    fs::create_directories(dir);
    const auto& rs = d.restarts;
    mixer::write_f32(dir / "seeds.f32", concat(rs, [](const auto& r) -> auto& { return r.seeds; }));
    mixer::write_f32(dir / "filters.f32",
                     concat(rs, [](const auto& r) -> auto& { return r.filters; }));
    mixer::write_f32(dir / "sources.f32",
                     concat(rs, [](const auto& r) -> auto& { return r.sources; }));
    mixer::write_f32(dir / "reconstruction.f32",
                     concat(rs, [](const auto& r) -> auto& { return r.reconstruction; }));
    const auto& b = d.best();
    const std::size_t np = mnist::kPixels;
    for (std::size_t k = 0; k < d.config.K; ++k)
        io::write_pgm(dir / ("source" + std::to_string(k) + ".pgm"), mnist::kSide, mnist::kSide,
                      io::to_gray(std::span<const float>(b.sources).subspan(k * np, np)));
    io::write_pgm(dir / "reconstruction.pgm", mnist::kSide, mnist::kSide,
                  io::to_gray(b.reconstruction));

    nlohmann::json rj = nlohmann::json::array();
    for (const auto& r : rs) {
        nlohmann::json trace = nlohmann::json::array();
        for (const auto& p : r.trace) trace.push_back({p.iteration, p.objective});
        rj.push_back({{"index", r.index},
                      {"failed", r.failed},
                      {"diagnostic", r.diagnostic},
                      {"reconstruction_error", r.reconstruction_error},
                      {"penalty", r.penalty},
                      {"objective", r.objective},
                      {"trace", trace}});
    }
    const std::size_t zdim = rs.empty() ? 0 : rs.front().seeds.size() / d.config.K;
    const nlohmann::json manifest{{"config", to_json(d.config)},
                                  {"z_dim", zdim},
                                  {"chosen", d.chosen},
                                  {"restarts", rj}};
    io::write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Decomposition<float> load_decomposition(const fs::path& dir) {
    const auto mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw IoError("decomposition manifest not found", mpath.string());
    const auto bytes = io::read_file(mpath);
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(mpath.string() + ": " + e.what(), 0);
    }
    Decomposition<float> d;
    d.config = config_from_json(m.at("config"));
    d.chosen = m.at("chosen");
    const auto& rj = m.at("restarts");
    const std::size_t R = rj.size(), K = d.config.K, np = mnist::kPixels;
    const std::size_t fn = K * d.config.filter_numel();
    const std::size_t zn = K * m.at("z_dim").get<std::size_t>();
    const auto seeds = mixer::read_f32(dir / "seeds.f32", R * zn);
    const auto filters = mixer::read_f32(dir / "filters.f32", R * fn);
    const auto sources = mixer::read_f32(dir / "sources.f32", R * K * np);
    const auto recon = mixer::read_f32(dir / "reconstruction.f32", R * np);
    for (std::size_t r = 0; r < R; ++r) {
        Restart<float> x;
        const auto& j = rj[r];
        x.index = j.at("index");
        x.failed = j.at("failed");
        x.diagnostic = j.at("diagnostic");
        x.reconstruction_error = j.at("reconstruction_error");
        x.penalty = j.at("penalty");
        x.objective = j.at("objective");
        for (const auto& p : j.at("trace")) x.trace.push_back({p[0], p[1]});
        x.seeds.assign(seeds.begin() + r * zn, seeds.begin() + (r + 1) * zn);
        x.filters.assign(filters.begin() + r * fn, filters.begin() + (r + 1) * fn);
        x.sources.assign(sources.begin() + r * K * np, sources.begin() + (r + 1) * K * np);
        x.reconstruction.assign(recon.begin() + r * np, recon.begin() + (r + 1) * np);
        d.restarts.push_back(std::move(x));
    }
    if (d.chosen >= R) throw ParseError("decomposition: chosen index out of range", 0);
    return d;
}

#define SDSEP_INSTANTIATE(T)                                                                      \
    template Tensor<T> reconstruct(const gan::Generator<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> objective(const Tensor<T>&, const gan::Generator<T>&, const Tensor<T>&,    \
                                 const Tensor<T>&, double);                                       \
    template Restart<T> decompose_once(const Tensor<T>&, const gan::Generator<T>&,                \
                                       const DecomposeConfig&, Rng&);                             \
    template Decomposition<T> decompose(const Tensor<T>&, const gan::Generator<T>&,               \
                                        const DecomposeConfig&);                                  \
    template Decomposition<T> first_restarts(const Decomposition<T>&, std::size_t);               \
    template std::size_t select_restart(const std::vector<Restart<T>>&, bool);
SDSEP_INSTANTIATE(float)
SDSEP_INSTANTIATE(double)
#undef SDSEP_INSTANTIATE

}  // namespace sdsep::decompose
