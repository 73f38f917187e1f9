#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "sdsep/errors.hpp"
#include "sdsep/harness.hpp"
#include "sdsep/io.hpp"

namespace sdsep::harness {

using mixer::ScenarioKind;

namespace {

const std::vector<ScenarioKind>& all_kinds() {
    static const std::vector<ScenarioKind> v{ScenarioKind::denoising,     ScenarioKind::inpainting,
                                             ScenarioKind::completion,    ScenarioKind::deconvolution,
                                             ScenarioKind::separation,    ScenarioKind::separation_deconvolution};
    return v;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

// Kinds a method runs on: listed for the method and present in the scenario grid.
std::vector<ScenarioKind> method_kinds(const ExperimentConfig& c, const std::string& method) {
    std::vector<ScenarioKind> out;
    const auto it = c.methods.find(method);
    if (it == c.methods.end()) return out;
    for (auto k : configured_kinds(c))
        if (contains(it->second, mixer::kind_name(k))) out.push_back(k);
    return out;
}

bool uses(const ExperimentConfig& c, const std::string& method) { return !method_kinds(c, method).empty(); }

std::vector<std::size_t> restart_levels(const ExperimentConfig& c) {
    std::set<std::size_t> s(c.decompose.restarts.begin(), c.decompose.restarts.end());
    return {s.begin(), s.end()};
}

fs::path results_dir(const ExperimentConfig& c) { return eval_dir(c) / "results"; }

fs::path cell_json(const ExperimentConfig& c, const std::string& method, ScenarioKind k, std::size_t i) {
    return results_dir(c) / method / mixer::kind_name(k) / (std::to_string(i) + ".json");
}

// Estimate files are keyed by the row's method (sd-L8 etc).
fs::path estimate_file(const ExperimentConfig& c, const std::string& exec_method, ScenarioKind k,
                       std::size_t i, const std::string& row_method, const char* what) {
    return results_dir(c) / exec_method / mixer::kind_name(k) /
           (std::to_string(i) + "-" + row_method + "-" + what + ".f32");
}

std::vector<float> flatten(const std::vector<std::vector<float>>& parts) {
    std::vector<float> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

std::string secs_since(std::chrono::steady_clock::time_point t0) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fs",
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return buf;
}

}  // namespace

baselines::CnnConfig cnn_train_config(const ExperimentConfig& c) {
    baselines::CnnConfig k;
    k.widths = c.cnn.widths;
    k.kernel = c.cnn.kernel;
    k.iterations = c.cnn.iterations;
    k.batch_size = c.cnn.batch_size;
    k.adam = {c.cnn.lr, c.cnn.beta1, c.cnn.beta2, 1e-8};
    k.noise_sigma = c.cnn.noise_sigma;
    k.seed = derive_seed(c.seed, 0xc22);
    k.log_every = c.cnn.log_every;
    return k;
}

baselines::NmfTrainOptions nmf_train_options(const ExperimentConfig& c) {
    return {c.nmf.bases_per_class, c.nmf.images_per_class, c.nmf.train_iterations, derive_seed(c.seed, 0x2f)};
}

baselines::CnmfOptions cnmf_options(const ExperimentConfig& c) {
    baselines::CnmfOptions o;
    o.iterations = c.nmf.decompose_iterations;
    o.kernel_size = c.nmf.cnmf_kernel_size;
    o.alternations = c.nmf.cnmf_alternations;
    return o;
}

mixer::ScenarioSettings scenario_settings(const ExperimentConfig& c) {
    const auto& s = c.scenarios;
    mixer::ScenarioSettings m;
    m.separation_sources = s.separation_sources;
    m.gaussian_sigma = s.gaussian_sigma;
    m.bar_first_row = s.bar_first_row;
    m.bar_rows = s.bar_rows;
    m.bar_value = s.bar_value;
    m.half_side = s.half_side;
    m.half_value = s.half_value;
    m.filter_size = s.filter_size;
    m.filter_std = s.filter_std;
    m.constant_filter = s.constant_filter;
    return m;
}

std::vector<ScenarioKind> configured_kinds(const ExperimentConfig& c) {
    std::vector<ScenarioKind> out;
    for (auto k : all_kinds())
        if (contains(c.scenarios.kinds, mixer::kind_name(k))) out.push_back(k);
    return out;
}

std::uint64_t scenario_seed(const ExperimentConfig& c, ScenarioKind kind, std::size_t index) {
    return derive_seed(derive_seed(c.seed, 1000 + std::uint64_t(kind)), index);
}

fs::path scenario_path(const ExperimentConfig& c, ScenarioKind kind, std::size_t index) {
    return eval_dir(c) / "scenarios" / mixer::kind_name(kind) / std::to_string(index);
}

fs::path train_cnn(const ExperimentConfig& c) {
    const auto dir = cnn_dir(c);
    const auto path = dir / "model.ckpt";
    if (fs::exists(path)) {
        log("cnn: already trained (" + path.string() + ")");
        return path;
    }
    fs::create_directories(dir);
    const auto cfg = cnn_train_config(c);
    io::write_text_atomic(dir / "config.json", baselines::to_json(cfg).dump(2) + "\n");
    const auto data = load_train(c);
    baselines::CnnTrainer trainer(cfg, data);
    std::ofstream curve(dir / "log.jsonl");
    const auto t0 = std::chrono::steady_clock::now();
    trainer.run(cfg.iterations, [&](const baselines::CnnLogEntry& e) {
        curve << nlohmann::json{{"iteration", e.iteration}, {"loss", e.loss}}.dump() << "\n";
        char buf[120];
        std::snprintf(buf, sizeof buf, "cnn: it %zu/%zu loss %.5f", e.iteration, cfg.iterations, e.loss);
        log(std::string(buf) + " " + secs_since(t0));
    });
    baselines::export_cnn(trainer.model()).save(path);
    log("cnn: wrote " + path.string());
    return path;
}

fs::path train_nmf(const ExperimentConfig& c) {
    const auto dir = nmf_dir(c);
    const auto path = dir / "dictionary.ckpt";
    if (fs::exists(path)) {
        log("nmf: already trained (" + path.string() + ")");
        return path;
    }
    fs::create_directories(dir);
    const auto opts = nmf_train_options(c);
    io::write_text_atomic(dir / "config.json",
                          nlohmann::json{{"bases_per_class", opts.bases_per_class},
                                         {"images_per_class", opts.images_per_class},
                                         {"iterations", opts.iterations},
                                         {"seed", opts.seed}}
                                  .dump(2) +
                              "\n");
    const auto t0 = std::chrono::steady_clock::now();
    const auto dict = baselines::train_dictionary(load_train(c), opts);
    baselines::export_dictionary(dict).save(path);
    log("nmf: wrote " + path.string() + " in " + secs_since(t0));
    return path;
}

std::size_t make_scenarios(const ExperimentConfig& c) {
    std::size_t made = 0;
    std::unique_ptr<mnist::ImageSet> pool;
    const auto settings = scenario_settings(c);
    for (auto kind : configured_kinds(c))
        for (std::size_t i = 0; i < c.scenarios.count; ++i) {
            const auto dir = scenario_path(c, kind, i);
            if (fs::exists(dir / "manifest.json")) continue;
            if (!pool) pool = std::make_unique<mnist::ImageSet>(load_test(c));
            mixer::save_scenario(mixer::make_scenario(kind, *pool, settings, scenario_seed(c, kind, i)), dir);
            ++made;
        }
    if (made) log("scenarios: wrote " + std::to_string(made) + " under " + (eval_dir(c) / "scenarios").string());
    return made;
}

decompose::DecomposeConfig sd_config(const ExperimentConfig& c, const mixer::Scenario& s,
                                     std::size_t restarts) {
    decompose::DecomposeConfig d;
    d.K = s.K;
    d.filter_kind = mixer::filter_kind_of(s.kind);
    d.filter_size = c.scenarios.filter_size;
    d.beta = c.decompose.beta;
    d.iterations = c.decompose.iterations;
    d.restarts = restarts;
    d.adam = {c.decompose.lr, c.decompose.beta1, c.decompose.beta2, 1e-8};
    d.seed = derive_seed(s.seed, 0x5d);
    d.trace_every = c.decompose.trace_every;
    d.select_by_objective = c.decompose.select_by_objective;
    return d;
}

MethodOutput run_nmf(const mixer::Scenario& s, const baselines::NmfDictionary& d, std::size_t iterations) {
    const auto r = baselines::nmf_decompose(baselines::shift_mixture(s.mixture), d, s.K, iterations);
    MethodOutput out;
    // One source: the whole dictionary explains it.
    if (s.K == 1) out.estimates.push_back(baselines::to_signed(r.reconstruction));
    else
        for (const auto& e : r.estimates) out.estimates.push_back(baselines::to_signed(e));
    return out;
}

MethodOutput run_cnmf(const mixer::Scenario& s, const baselines::NmfDictionary& d,
                      const baselines::CnmfOptions& o) {
    const auto r = baselines::cnmf_decompose(baselines::shift_mixture(s.mixture), d, s.K, o);
    MethodOutput out;
    if (s.K == 1) {
        std::vector<double> sum(d.W.rows, 0.0);
        for (std::size_t i = 0; i < d.W.rows; ++i)
            for (std::size_t j = 0; j < d.W.cols; ++j) sum[i] += d.W(i, j) * r.H[j];
        out.estimates.push_back(baselines::to_signed(sum));
    } else {
        for (const auto& e : r.estimates) out.estimates.push_back(baselines::to_signed(e));
    }
    for (std::size_t c : r.classes)
        out.filters.emplace_back(r.kernels[c].begin(), r.kernels[c].end());
    return out;
}

MethodOutput run_cnn(const mixer::Scenario& s, const baselines::CnnDenoiser& m) {
    if (s.K != 1) throw ContractError("cnn: only single-source scenarios");
    const auto y = m.apply(Tensor<float>::from({1, 1, mnist::kSide, mnist::kSide}, s.mixture));
    MethodOutput out;
    out.estimates.emplace_back(y.data().begin(), y.data().end());
    return out;
}

MethodOutput sd_output(const decompose::Decomposition<float>& d) {
    const auto& r = d.best();
    const std::size_t K = d.config.K, fn = d.config.filter_numel();
    MethodOutput out;
    for (std::size_t k = 0; k < K; ++k) {
        out.estimates.emplace_back(r.sources.begin() + k * mnist::kPixels,
                                   r.sources.begin() + (k + 1) * mnist::kPixels);
        out.filters.emplace_back(r.filters.begin() + k * fn, r.filters.begin() + (k + 1) * fn);
    }
    return out;
}

eval::Row score(const std::string& method, const mixer::Scenario& s, std::size_t index,
                const MethodOutput& out) {
    std::vector<std::vector<double>> est, truth;
    for (const auto& e : out.estimates) est.push_back(eval::unit_range(e));
    for (const auto& t : s.sources) truth.push_back(eval::unit_range(t));
    const auto m = eval::match_sources(est, truth);
    eval::Row r;
    r.method = method;
    r.kind = mixer::kind_name(s.kind);
    r.scenario = index;
    r.K = s.K;
    r.psnr = m.psnr;
    r.permutation = m.permutation;
    r.mean = m.mean;
    return r;
}

LoadedModels load_models(const ExperimentConfig& c) {
    LoadedModels m;
    const auto need = [](const fs::path& p) {
        if (!fs::exists(p)) throw MissingArtifact(p);
        return Checkpoint::load(p);
    };
    if (uses(c, "sd")) {
        m.generator = std::make_unique<gan::Generator<float>>(
            gan::load_generator(need(gan_dir(c) / "generator.ckpt")));
        m.generator->net().set_trainable(false);
    }
    if (uses(c, "cnn")) {
        m.cnn = std::make_unique<baselines::CnnDenoiser>(baselines::load_cnn(need(cnn_dir(c) / "model.ckpt")));
        m.cnn->net().set_trainable(false);
    }
    if (uses(c, "nmf") || uses(c, "cnmf"))
        m.nmf = std::make_unique<baselines::NmfDictionary>(
            baselines::load_dictionary(need(nmf_dir(c) / "dictionary.ckpt")));
    return m;
}

namespace {

struct Task {
    std::string method;
    ScenarioKind kind;
    std::size_t index;
};

std::vector<std::string> row_methods(const ExperimentConfig& c, const std::string& method) {
    if (method != "sd") return {method};
    std::vector<std::string> out;
    for (auto L : restart_levels(c)) out.push_back("sd-L" + std::to_string(L));
    return out;
}

// Produces the rows and estimate files for one cell.
void run_task(const ExperimentConfig& c, const LoadedModels& models, const Task& t) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto json_path = cell_json(c, t.method, t.kind, t.index);
    fs::create_directories(json_path.parent_path());
    nlohmann::json rows = nlohmann::json::array();
    try {
        const auto s = mixer::load_scenario(scenario_path(c, t.kind, t.index));
        std::vector<std::pair<std::string, MethodOutput>> outs;
        if (t.method == "sd") {
            const auto levels = restart_levels(c);
            const auto full = decompose::decompose(
                Tensor<float>::from({1, 1, mnist::kSide, mnist::kSide}, s.mixture), *models.generator,
                sd_config(c, s, levels.back()));
            for (auto L : levels)
                outs.emplace_back("sd-L" + std::to_string(L), sd_output(decompose::first_restarts(full, L)));
        } else if (t.method == "nmf") {
            outs.emplace_back("nmf", run_nmf(s, *models.nmf, c.nmf.decompose_iterations));
        } else if (t.method == "cnmf") {
            outs.emplace_back("cnmf", run_cnmf(s, *models.nmf, cnmf_options(c)));
        } else if (t.method == "cnn") {
            outs.emplace_back("cnn", run_cnn(s, *models.cnn));
        } else {
            throw ContractError("unknown method '" + t.method + "'");
        }
        for (const auto& [name, out] : outs) {
            mixer::write_f32(estimate_file(c, t.method, t.kind, t.index, name, "estimates"), flatten(out.estimates));
            if (!out.filters.empty())
                mixer::write_f32(estimate_file(c, t.method, t.kind, t.index, name, "filters"), flatten(out.filters));
            rows.push_back(eval::to_json(score(name, s, t.index, out)));
        }
    } catch (const std::exception& e) {
        rows = nlohmann::json::array();
        for (const auto& name : row_methods(c, t.method)) {
            eval::Row r;
            r.method = name;
            r.kind = mixer::kind_name(t.kind);
            r.scenario = t.index;
            r.failed = true;
            r.error = e.what();
            rows.push_back(eval::to_json(r));
        }
        log("cell " + t.method + "/" + mixer::kind_name(t.kind) + "/" + std::to_string(t.index) +
            " failed: " + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    io::write_text_atomic(json_path, nlohmann::json{{"rows", rows}, {"seconds", secs}}.dump(1) + "\n");
    char buf[160];
    std::snprintf(buf, sizeof buf, "cell %s/%s/%zu done in %.1fs", t.method.c_str(),
                  mixer::kind_name(t.kind).c_str(), t.index, secs);
    log(buf);
}

}  // namespace

void run_cells(const ExperimentConfig& c, const LoadedModels& models) {
    std::vector<Task> tasks;
    std::size_t skipped = 0;
    // S-D first: it dominates the runtime, so it should start early.
    std::vector<std::string> methods{"sd"};
    for (const auto& [m, _] : c.methods)
        if (m != "sd") methods.push_back(m);
    for (const auto& m : methods)
        for (auto k : method_kinds(c, m))
            for (std::size_t i = 0; i < c.scenarios.count; ++i) {
                if (fs::exists(cell_json(c, m, k, i))) ++skipped;
                else tasks.push_back({m, k, i});
            }
    const std::size_t workers = std::max<std::size_t>(1, std::min(worker_count(c), tasks.size()));
    log("cells: " + std::to_string(tasks.size()) + " pending, " + std::to_string(skipped) + " done, " +
        std::to_string(workers) + " workers");
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) run_task(c, models, tasks[i]);
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

namespace {

constexpr std::size_t kTile = mnist::kSide, kGap = 2;

struct Canvas {
    std::size_t w, h;
    std::vector<std::uint8_t> px;
    Canvas(std::size_t w_, std::size_t h_) : w(w_), h(h_), px(w_ * h_, 128) {}
    void put(std::size_t x0, std::size_t y0, std::span<const std::uint8_t> img, std::size_t side,
             std::size_t scale = 1) {
        for (std::size_t y = 0; y < side * scale; ++y)
            for (std::size_t x = 0; x < side * scale; ++x)
                px[(y0 + y) * w + x0 + x] = img[(y / scale) * side + x / scale];
    }
};

std::vector<float> read_optional(const fs::path& p, std::size_t n) {
    if (!fs::exists(p)) return {};
    return mixer::read_f32(p, n);
}

// Mixtures can leave [-1,1]; stretch them to the full grey range.
std::vector<std::uint8_t> stretched(std::span<const float> x) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double span = std::max(1e-12, double(*hi - *lo));
    std::vector<std::uint8_t> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::uint8_t(std::lround(255.0 * (x[i] - *lo) / span));
    return out;
}

// Filters shown on a shared signed scale: mid-grey is zero.
std::vector<std::uint8_t> filter_gray(std::span<const float> f, double scale) {
    std::vector<std::uint8_t> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        out[i] = std::uint8_t(std::lround(std::clamp(128.0 + 127.0 * f[i] / scale, 0.0, 255.0)));
    return out;
}

void write_strips(const ExperimentConfig& c, const eval::Report& report) {
    const auto fig = eval_dir(c) / "figures";
    fs::create_directories(fig);
    const std::size_t shown = std::min<std::size_t>(4, c.scenarios.count);
    for (auto kind : configured_kinds(c)) {
        const auto kname = mixer::kind_name(kind);
        std::vector<std::pair<std::string, std::string>> methods;  // row method, exec method
        for (const auto& cell : report.cells)
            if (cell.kind == kname)
                methods.emplace_back(cell.method, cell.method.rfind("sd-L", 0) == 0 ? "sd" : cell.method);
        if (methods.empty()) continue;
        std::vector<mixer::Scenario> scen;
        for (std::size_t i = 0; i < shown; ++i) scen.push_back(mixer::load_scenario(scenario_path(c, kind, i)));
        const std::size_t K = scen.front().K;
        // Columns: mixture, true sources, then K estimates per method.
        const std::size_t cols = 1 + K + methods.size() * K;
        Canvas canvas(cols * (kTile + kGap) + kGap * methods.size(), shown * (kTile + kGap));
        const auto find_row = [&](const std::string& m, std::size_t i) -> const eval::Row* {
            for (const auto& r : report.rows)
                if (r.method == m && r.kind == kname && r.scenario == i) return &r;
            return nullptr;
        };
        for (std::size_t i = 0; i < shown; ++i) {
            const std::size_t y = i * (kTile + kGap);
            std::size_t x = 0;
            canvas.put(x, y, stretched(scen[i].mixture), kTile);
            x += kTile + kGap;
            for (const auto& src : scen[i].sources) {
                canvas.put(x, y, io::to_gray(src), kTile);
                x += kTile + kGap;
            }
            for (const auto& [m, exec] : methods) {
                x += kGap;
                const auto est = read_optional(estimate_file(c, exec, kind, i, m, "estimates"), K * mnist::kPixels);
                const auto* row = find_row(m, i);
                for (std::size_t k = 0; k < K; ++k) {
                    if (!est.empty() && row && !row->failed) {
                        const std::size_t e = row->permutation[k];
                        canvas.put(x, y,
                                   io::to_gray({est.data() + e * mnist::kPixels, mnist::kPixels}), kTile);
                    }
                    x += kTile + kGap;
                }
            }
        }
        io::write_pgm(fig / (kname + ".pgm"), canvas.w, canvas.h, canvas.px);

        if (mixer::filter_kind_of(kind) != mixer::FilterKind::tensor) continue;
        const std::size_t fs_ = c.scenarios.filter_size, scale = 6, tile = fs_ * scale;
        std::vector<std::pair<std::string, std::string>> fm;
        for (const auto& p : methods)
            if (p.first == "cnmf" || p.first.rfind("sd-L", 0) == 0) fm.push_back(p);
        Canvas fc((1 + fm.size()) * K * (tile + kGap) + kGap * fm.size(), shown * (tile + kGap));
        for (std::size_t i = 0; i < shown; ++i) {
            const std::size_t y = i * (tile + kGap);
            std::vector<std::vector<float>> groups;
            for (const auto& f : scen[i].filters) groups.push_back(f.values());
            std::size_t x = 0;
            for (const auto& [m, exec] : fm) {
                const std::size_t ks = m == "cnmf" ? c.nmf.cnmf_kernel_size : fs_;
                const auto f = read_optional(estimate_file(c, exec, kind, i, m, "filters"), K * ks * ks);
                const auto* row = find_row(m, i);
                for (std::size_t k = 0; k < K; ++k) {
                    if (f.empty() || !row || row->failed || ks != fs_) groups.emplace_back();
                    else {
                        const std::size_t e = row->permutation[k];
                        groups.emplace_back(f.begin() + e * ks * ks, f.begin() + (e + 1) * ks * ks);
                    }
                }
            }
            double maxabs = 1e-12;
            for (const auto& g : groups)
                for (float v : g) maxabs = std::max(maxabs, double(std::abs(v)));
            for (std::size_t g = 0; g < groups.size(); ++g) {
                if (g >= K && (g - K) % K == 0) x += kGap;
                if (!groups[g].empty()) fc.put(x, y, filter_gray(groups[g], maxabs), fs_, scale);
                x += tile + kGap;
            }
        }
        io::write_pgm(fig / (kname + "-filters.pgm"), fc.w, fc.h, fc.px);
    }
}

}  // namespace

eval::Report evaluate(const ExperimentConfig& c) {
    std::vector<eval::Row> rows;
    nlohmann::json timings = nlohmann::json::object();
    for (const auto& [m, _] : c.methods)
        for (auto k : method_kinds(c, m)) {
            double total = 0;
            for (std::size_t i = 0; i < c.scenarios.count; ++i) {
                const auto path = cell_json(c, m, k, i);
                if (!fs::exists(path)) {
                    for (const auto& name : row_methods(c, m)) {
                        eval::Row r;
                        r.method = name;
                        r.kind = mixer::kind_name(k);
                        r.scenario = i;
                        r.failed = true;
                        r.error = "no result";
                        rows.push_back(r);
                    }
                    continue;
                }
                const auto j = nlohmann::json::parse(io::read_file_maybe_gzip(path));
                for (const auto& r : j.at("rows")) rows.push_back(eval::row_from_json(r));
                total += j.value("seconds", 0.0);
            }
            timings[m][mixer::kind_name(k)] = total;
        }
    auto report = eval::aggregate(std::move(rows));
    const auto dir = eval_dir(c);
    fs::create_directories(dir);
    io::write_text_atomic(dir / "report.json", eval::to_json(report).dump(2) + "\n");
    io::write_text_atomic(dir / "report.txt", eval::render_text(report));
    io::write_text_atomic(dir / "timings.json", timings.dump(2) + "\n");
    write_strips(c, report);
    log("report: " + (dir / "report.json").string());
    return report;
}

eval::Report reproduce(const ExperimentConfig& c) {
    const auto dir = eval_dir(c);
    fs::create_directories(dir);
    io::write_text_atomic(dir / "config.json", to_json(c).dump(2) + "\n");
    if (uses(c, "sd") && !fs::exists(gan_dir(c) / "generator.ckpt")) train_gan(c);
    if (uses(c, "cnn")) train_cnn(c);
    if (uses(c, "nmf") || uses(c, "cnmf")) train_nmf(c);
    make_scenarios(c);
    run_cells(c, load_models(c));
    return evaluate(c);
}

}  // namespace sdsep::harness
