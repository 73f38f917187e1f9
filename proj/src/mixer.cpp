#include "sdsep/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "sdsep/errors.hpp"
#include "sdsep/io.hpp"
#include "sdsep/ops.hpp"

namespace sdsep::mixer {

namespace fs = std::filesystem;

MixFilter MixFilter::tensor(std::size_t size, std::vector<float> k) {
    if (size % 2 == 0 || k.size() != size * size)
        throw ShapeError("tensor filter must be odd-sized and square");
    for (float v : k)
        if (!std::isfinite(v)) throw ContractError("tensor filter has a non-finite entry");
    return {FilterKind::tensor, 0.0f, size, std::move(k)};
}

std::string kind_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::denoising: return "denoising";
        case ScenarioKind::inpainting: return "inpainting";
        case ScenarioKind::completion: return "completion";
        case ScenarioKind::deconvolution: return "deconvolution";
        case ScenarioKind::separation: return "separation";
        case ScenarioKind::separation_deconvolution: return "separation_deconvolution";
    }
    return "?";
}

ScenarioKind parse_kind(const std::string& name) {
    for (auto k : {ScenarioKind::denoising, ScenarioKind::inpainting, ScenarioKind::completion,
                   ScenarioKind::deconvolution, ScenarioKind::separation,
                   ScenarioKind::separation_deconvolution})
        if (kind_name(k) == name) return k;
    throw ContractError("unknown scenario kind '" + name + "'");
}

std::size_t default_sources(ScenarioKind k, std::size_t separation_sources) {
    return (k == ScenarioKind::separation || k == ScenarioKind::separation_deconvolution)
               ? separation_sources
               : 1;
}

FilterKind filter_kind_of(ScenarioKind k) {
    return (k == ScenarioKind::deconvolution || k == ScenarioKind::separation_deconvolution)
               ? FilterKind::tensor
               : FilterKind::constant;
}

Image convolve2d_same(std::span<const float> image, const MixFilter& f, std::size_t h,
                      std::size_t w) {
    if (image.size() != h * w) throw ShapeError("convolve2d_same: image size mismatch");
    const auto x = Tensor<float>::from({1, 1, h, w}, {image.begin(), image.end()});
    Tensor<float> y;
    if (f.kind == FilterKind::constant) {
        y = ops::scale_per_item(x, Tensor<float>::from({1}, {f.value}));
    } else {
        y = ops::convolve_same_per_item(x, Tensor<float>::from({1, 1, f.size, f.size}, f.kernel));
    }
    return {y.data().begin(), y.data().end()};
}

namespace {

// Pixels overwritten by bar / half noise; empty for other kinds.
std::vector<bool> occluded(const NoiseSpec& spec, std::size_t h, std::size_t w) {
    std::vector<bool> mask;
    std::size_t r0 = 0, r1 = h, c0 = 0, c1 = w;
    if (spec.kind == NoiseKind::bar) {
        if (spec.first_row + spec.rows > h) throw ContractError("bar rows outside the image");
        r0 = spec.first_row;
        r1 = spec.first_row + spec.rows;
    } else if (spec.kind == NoiseKind::half) {
        if (spec.side == "right") c0 = w / 2;
        else if (spec.side == "left") c1 = w / 2;
        else if (spec.side == "bottom") r0 = h / 2;
        else if (spec.side == "top") r1 = h / 2;
        else throw ContractError("half side must be left, right, top or bottom");
    } else {
        return mask;
    }
    mask.assign(h * w, false);
    for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) mask[r * w + c] = true;
    return mask;
}

}  // namespace

Image make_noise(const NoiseSpec& spec, std::span<const float> clean, Rng& rng, std::size_t h,
                 std::size_t w) {
    if (clean.size() != h * w) throw ShapeError("make_noise: image size mismatch");
    Image n(h * w, 0.0f);
    if (spec.kind == NoiseKind::gaussian) {
        if (spec.sigma < 0) throw ContractError("gaussian sigma must be >= 0");
        if (spec.sigma > 0) rng.fill_normal<float>(n, 0.0, spec.sigma);
        return n;
    }
    const auto mask = occluded(spec, h, w);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) n[i] = static_cast<float>(spec.value) - clean[i];
    return n;
}

Scenario mix(const std::vector<Image>& sources, const std::vector<MixFilter>& filters,
             const NoiseSpec& noise, Rng& rng) {
    if (sources.empty()) throw ContractError("mix needs at least one source");
    if (sources.size() != filters.size()) throw ContractError("mix: one filter per source required");
    Scenario s;
    s.K = sources.size();
    s.sources = sources;
    s.filters = filters;
    s.noise_spec = noise;
    Image clean(mnist::kPixels, 0.0f);
    for (std::size_t k = 0; k < s.K; ++k) {
        const auto y = convolve2d_same(sources[k], filters[k]);
        for (std::size_t i = 0; i < clean.size(); ++i) clean[i] += y[i];
    }
    s.noise = make_noise(noise, clean, rng);
    s.mixture.resize(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) s.mixture[i] = clean[i] + s.noise[i];
    // Occluded pixels hold the fill value exactly, not clean + (v - clean).
    const auto mask = occluded(noise, mnist::kSide, mnist::kSide);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) s.mixture[i] = static_cast<float>(noise.value);
    return s;
}

NoiseSpec noise_for(ScenarioKind kind, const ScenarioSettings& s) {
    NoiseSpec n;
    switch (kind) {
        case ScenarioKind::denoising:
            n.kind = NoiseKind::gaussian;
            n.sigma = s.gaussian_sigma;
            break;
        case ScenarioKind::inpainting:
            n.kind = NoiseKind::bar;
            n.first_row = s.bar_first_row;
            n.rows = s.bar_rows;
            n.value = s.bar_value;
            break;
        case ScenarioKind::completion:
            n.kind = NoiseKind::half;
            n.side = s.half_side;
            n.value = s.half_value;
            break;
        default: break;
    }
    return n;
}

Scenario make_scenario(ScenarioKind kind, const mnist::ImageSet& pool, const ScenarioSettings& st,
                       std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t K = default_sources(kind, st.separation_sources);
    std::vector<Image> sources;
    std::vector<std::uint8_t> labels;
    std::vector<std::size_t> indices;
    std::set<std::uint8_t> used;
    while (sources.size() < K) {
        const std::size_t i = static_cast<std::size_t>(rng.next_u64() % pool.size());
        if (used.count(pool.labels()[i])) continue;
        used.insert(pool.labels()[i]);
        labels.push_back(pool.labels()[i]);
        indices.push_back(i);
        const auto img = pool.image(i);
        sources.emplace_back(img.begin(), img.end());
    }
    std::vector<MixFilter> filters;
    for (std::size_t k = 0; k < K; ++k) {
        if (filter_kind_of(kind) == FilterKind::constant) {
            filters.push_back(MixFilter::constant(static_cast<float>(st.constant_filter)));
        } else {
            std::vector<float> kern(st.filter_size * st.filter_size);
            rng.fill_normal<float>(kern, 0.0, st.filter_std);
            filters.push_back(MixFilter::tensor(st.filter_size, std::move(kern)));
        }
    }
    auto s = mix(sources, filters, noise_for(kind, st), rng);
    s.kind = kind;
    s.seed = seed;
    s.labels = labels;
    s.source_indices = indices;
    return s;
}

nlohmann::json noise_json(const NoiseSpec& n) {
    static const char* names[] = {"none", "gaussian", "bar", "half"};
    nlohmann::json j{{"kind", names[static_cast<int>(n.kind)]}};
    if (n.kind == NoiseKind::gaussian) j["sigma"] = n.sigma;
    if (n.kind == NoiseKind::bar) {
        j["first_row"] = n.first_row;
        j["rows"] = n.rows;
        j["value"] = n.value;
    }
    if (n.kind == NoiseKind::half) {
        j["side"] = n.side;
        j["value"] = n.value;
    }
    return j;
}

namespace {

NoiseSpec noise_from_json(const nlohmann::json& j) {
    NoiseSpec n;
    const std::string kind = j.at("kind");
    if (kind == "gaussian") {
        n.kind = NoiseKind::gaussian;
        n.sigma = j.at("sigma");
    } else if (kind == "bar") {
        n.kind = NoiseKind::bar;
        n.first_row = j.at("first_row");
        n.rows = j.at("rows");
        n.value = j.at("value");
    } else if (kind == "half") {
        n.kind = NoiseKind::half;
        n.side = j.at("side");
        n.value = j.at("value");
    }
    return n;
}

}  // namespace

std::vector<float> read_f32(const fs::path& path, std::size_t expect) {
    const auto bytes = io::read_file(path);
    if (bytes.size() != expect * sizeof(float))
        throw ParseError(path.string() + ": expected " + std::to_string(expect) + " floats",
                         std::min(bytes.size(), expect * sizeof(float)));
    std::vector<float> out(expect);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

void write_f32(const fs::path& path, std::span<const float> values) {
    io::write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(values.data()),
                                 values.size() * sizeof(float)});
}

void save_scenario(const Scenario& s, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<float> sources, filters;
    nlohmann::json fj = nlohmann::json::array();
    for (std::size_t k = 0; k < s.K; ++k) {
        sources.insert(sources.end(), s.sources[k].begin(), s.sources[k].end());
        const auto v = s.filters[k].values();
        filters.insert(filters.end(), v.begin(), v.end());
        fj.push_back({{"kind", s.filters[k].kind == FilterKind::constant ? "constant" : "tensor"},
                      {"size", s.filters[k].size},
                      {"values", v}});
    }
    write_f32(dir / "mixture.f32", s.mixture);
    write_f32(dir / "sources.f32", sources);
    write_f32(dir / "noise.f32", s.noise);
    write_f32(dir / "filters.f32", filters);
    io::write_pgm(dir / "mixture.pgm", mnist::kSide, mnist::kSide, io::to_gray(s.mixture));
    for (std::size_t k = 0; k < s.K; ++k)
        io::write_pgm(dir / ("source" + std::to_string(k) + ".pgm"), mnist::kSide, mnist::kSide,
                      io::to_gray(s.sources[k]));
    const nlohmann::json manifest{{"kind", kind_name(s.kind)},
                                  {"K", s.K},
                                  {"seed", s.seed},
                                  {"side", mnist::kSide},
                                  {"noise", noise_json(s.noise_spec)},
                                  {"filters", fj},
                                  {"labels", s.labels},
                                  {"source_indices", s.source_indices}};
    // Written last: its presence marks a complete scenario directory.
    io::write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Scenario load_scenario(const fs::path& dir) {
    const auto mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw IoError("scenario manifest not found", mpath.string());
    const auto bytes = io::read_file(mpath);
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(mpath.string() + ": " + e.what(), 0);
    }
    Scenario s;
    s.kind = parse_kind(m.at("kind"));
    s.K = m.at("K");
    s.seed = m.at("seed");
    s.noise_spec = noise_from_json(m.at("noise"));
    s.labels = m.at("labels").get<std::vector<std::uint8_t>>();
    s.source_indices = m.at("source_indices").get<std::vector<std::size_t>>();
    for (const auto& f : m.at("filters")) {
        const auto values = f.at("values").get<std::vector<float>>();
        if (f.at("kind") == "constant") s.filters.push_back(MixFilter::constant(values.at(0)));
        else s.filters.push_back(MixFilter::tensor(f.at("size"), values));
    }
    const std::size_t P = mnist::kPixels;
    s.mixture = read_f32(dir / "mixture.f32", P);
    s.noise = read_f32(dir / "noise.f32", P);
    const auto src = read_f32(dir / "sources.f32", s.K * P);
    for (std::size_t k = 0; k < s.K; ++k) s.sources.emplace_back(src.begin() + k * P, src.begin() + (k + 1) * P);
    return s;
}

}  // namespace sdsep::mixer
