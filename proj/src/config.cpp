#include "sdsep/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <toml.hpp>

#include "sdsep/errors.hpp"
#include "sdsep/io.hpp"

namespace sdsep {

namespace {

const std::set<std::string> kKinds{"denoising",     "inpainting", "completion",
                                   "deconvolution", "separation", "separation_deconvolution"};
const std::set<std::string> kMethods{"sd", "nmf", "cnmf", "cnn"};

// Reads keys from one table and rejects any key that was never asked for.
class Section {
  public:
    Section(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!table_) return;
        const toml::node* node = table_->get(key);
        if (!node) return;
        read(*node, key, out);
    }

    Section table(const std::string& key) {
        seen_.insert(key);
        const toml::table* t = nullptr;
        if (table_) {
            if (const auto* node = table_->get(key)) {
                t = node->as_table();
                if (!t) fail(key, "expected a table");
            }
        }
        return {t, qualified(key)};
    }

    void finish() const {
        if (!table_) return;
        for (const auto& [k, v] : *table_) {
            if (!seen_.count(std::string(k.str())))
                throw ContractError("unknown config key '" + qualified(std::string(k.str())) + "'");
        }
    }

    const toml::table* raw() const { return table_; }
    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ContractError("config key '" + qualified(key) + "': " + what);
    }

  private:
    void read(const toml::node& n, const std::string& key, bool& out) {
        auto v = n.value<bool>();
        if (!v) fail(key, "expected a boolean");
        out = *v;
    }
    void read(const toml::node& n, const std::string& key, double& out) {
        auto v = n.value<double>();
        if (!v) fail(key, "expected a number");
        out = *v;
    }
    void read(const toml::node& n, const std::string& key, std::size_t& out) {
        auto v = n.value<std::int64_t>();
        if (!v || *v < 0) fail(key, "expected a non-negative integer");
        out = static_cast<std::size_t>(*v);
    }
    void read(const toml::node& n, const std::string& key, std::string& out) {
        auto v = n.value<std::string>();
        if (!v) fail(key, "expected a string");
        out = *v;
    }
    void read(const toml::node& n, const std::string& key, std::filesystem::path& out) {
        std::string s;
        read(n, key, s);
        out = s;
    }
    template <typename T>
    void read(const toml::node& n, const std::string& key, std::vector<T>& out) {
        const auto* arr = n.as_array();
        if (!arr) fail(key, "expected an array");
        out.clear();
        for (const auto& item : *arr) {
            T v{};
            read(item, key, v);
            out.push_back(v);
        }
    }
    template <typename T, std::size_t N>
    void read(const toml::node& n, const std::string& key, std::array<T, N>& out) {
        std::vector<T> v;
        read(n, key, v);
        if (v.size() != N) fail(key, "expected " + std::to_string(N) + " elements");
        std::copy(v.begin(), v.end(), out.begin());
    }

    const toml::table* table_;
    std::string path_;
    std::set<std::string> seen_;
};

std::size_t byte_offset(const std::string& text, std::size_t line, std::size_t column) {
    std::size_t off = 0, l = 1;
    while (off < text.size() && l < line) {
        if (text[off++] == '\n') ++l;
    }
    return std::min(text.size(), off + (column ? column - 1 : 0));
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ContractError("invalid config: " + what);
}

void validate(const ExperimentConfig& c) {
    require(c.gan.batch_size >= 1, "gan.batch_size must be >= 1");
    require(c.cnn.batch_size >= 1, "cnn.batch_size must be >= 1");
    require(c.cnn.kernel % 2 == 1, "cnn.kernel must be odd");
    require(c.nmf.bases_per_class >= 1, "nmf.bases_per_class must be >= 1");
    require(c.nmf.cnmf_kernel_size % 2 == 1, "nmf.cnmf_kernel_size must be odd");
    require(c.decompose.beta >= 0, "decompose.beta must be >= 0");
    require(!c.decompose.restarts.empty(), "decompose.restarts must not be empty");
    for (auto l : c.decompose.restarts) require(l >= 1, "decompose.restarts entries must be >= 1");
    require(c.decompose.trace_every >= 1, "decompose.trace_every must be >= 1");
    require(c.scenarios.separation_sources >= 2 && c.scenarios.separation_sources <= 4,
            "scenarios.separation_sources must be in 2..4");
    require(c.scenarios.filter_size % 2 == 1, "scenarios.filter_size must be odd");
    require(c.scenarios.bar_first_row + c.scenarios.bar_rows <= 32, "bar must lie inside the image");
    require(c.scenarios.half_side == "left" || c.scenarios.half_side == "right" ||
                c.scenarios.half_side == "top" || c.scenarios.half_side == "bottom",
            "scenarios.half_side must be left, right, top or bottom");
    require(c.scenarios.gaussian_sigma >= 0, "scenarios.gaussian_sigma must be >= 0");
    for (const auto& k : c.scenarios.kinds) require(kKinds.count(k), "unknown scenario kind '" + k + "'");
    for (const auto& [m, kinds] : c.methods) {
        require(kMethods.count(m), "unknown method '" + m + "'");
        for (const auto& k : kinds) require(kKinds.count(k), "unknown scenario kind '" + k + "' for " + m);
    }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        const auto& b = e.source().begin;
        throw ParseError(std::string(e.description()) + " (" + source + ":" + std::to_string(b.line) + ")",
                         byte_offset(text, b.line, b.column));
    }
    ExperimentConfig c;
    Section top(&root, "");
    top.get("name", c.name);
    top.get("seed", c.seed);
    top.get("output_dir", c.output_dir);
    top.get("threads", c.threads);

    auto data = top.table("data");
    data.get("dir", c.data.dir);
    data.get("train_limit", c.data.train_limit);
    data.finish();

    auto g = top.table("gan");
    g.get("g_widths", c.gan.g_widths);
    g.get("d_widths", c.gan.d_widths);
    g.get("epochs", c.gan.epochs);
    g.get("batch_size", c.gan.batch_size);
    g.get("lr", c.gan.lr);
    g.get("beta1", c.gan.beta1);
    g.get("beta2", c.gan.beta2);
    g.get("non_saturating", c.gan.non_saturating);
    g.get("log_every", c.gan.log_every);
    g.get("checkpoint_every", c.gan.checkpoint_every);
    g.finish();

    auto cnn = top.table("cnn");
    cnn.get("widths", c.cnn.widths);
    cnn.get("kernel", c.cnn.kernel);
    cnn.get("iterations", c.cnn.iterations);
    cnn.get("batch_size", c.cnn.batch_size);
    cnn.get("lr", c.cnn.lr);
    cnn.get("beta1", c.cnn.beta1);
    cnn.get("beta2", c.cnn.beta2);
    cnn.get("noise_sigma", c.cnn.noise_sigma);
    cnn.get("log_every", c.cnn.log_every);
    cnn.finish();

    auto nmf = top.table("nmf");
    nmf.get("bases_per_class", c.nmf.bases_per_class);
    nmf.get("images_per_class", c.nmf.images_per_class);
    nmf.get("train_iterations", c.nmf.train_iterations);
    nmf.get("decompose_iterations", c.nmf.decompose_iterations);
    nmf.get("cnmf_kernel_size", c.nmf.cnmf_kernel_size);
    nmf.get("cnmf_alternations", c.nmf.cnmf_alternations);
    nmf.finish();

    auto d = top.table("decompose");
    d.get("iterations", c.decompose.iterations);
    d.get("beta", c.decompose.beta);
    d.get("lr", c.decompose.lr);
    d.get("beta1", c.decompose.beta1);
    d.get("beta2", c.decompose.beta2);
    d.get("restarts", c.decompose.restarts);
    d.get("trace_every", c.decompose.trace_every);
    d.get("select_by_objective", c.decompose.select_by_objective);
    d.finish();

    auto s = top.table("scenarios");
    s.get("count", c.scenarios.count);
    s.get("kinds", c.scenarios.kinds);
    s.get("separation_sources", c.scenarios.separation_sources);
    s.get("gaussian_sigma", c.scenarios.gaussian_sigma);
    s.get("bar_first_row", c.scenarios.bar_first_row);
    s.get("bar_rows", c.scenarios.bar_rows);
    s.get("bar_value", c.scenarios.bar_value);
    s.get("half_side", c.scenarios.half_side);
    s.get("half_value", c.scenarios.half_value);
    s.get("filter_size", c.scenarios.filter_size);
    s.get("filter_std", c.scenarios.filter_std);
    s.get("constant_filter", c.scenarios.constant_filter);
    s.finish();

    auto m = top.table("methods");
    if (m.raw()) {
        c.methods.clear();
        for (const auto& [k, v] : *m.raw()) {
            std::vector<std::string> kinds;
            m.get(std::string(k.str()), kinds);
            c.methods[std::string(k.str())] = kinds;
        }
    }
    m.finish();
    top.finish();
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("config not found", path.string());
    const auto bytes = io::read_file(path);
    return parse_config(std::string(bytes.begin(), bytes.end()), path.string());
}

nlohmann::json to_json(const ExperimentConfig& c) {
    return {
        {"name", c.name},
        {"seed", c.seed},
        {"data", {{"dir", c.data.dir.string()}, {"train_limit", c.data.train_limit}}},
        {"gan",
         {{"g_widths", c.gan.g_widths}, {"d_widths", c.gan.d_widths}, {"epochs", c.gan.epochs},
          {"batch_size", c.gan.batch_size}, {"lr", c.gan.lr}, {"beta1", c.gan.beta1},
          {"beta2", c.gan.beta2}, {"non_saturating", c.gan.non_saturating},
          {"log_every", c.gan.log_every}, {"checkpoint_every", c.gan.checkpoint_every}}},
        {"cnn",
         {{"widths", c.cnn.widths}, {"kernel", c.cnn.kernel}, {"iterations", c.cnn.iterations},
          {"batch_size", c.cnn.batch_size}, {"lr", c.cnn.lr}, {"beta1", c.cnn.beta1},
          {"beta2", c.cnn.beta2}, {"noise_sigma", c.cnn.noise_sigma},
          {"log_every", c.cnn.log_every}}},
        {"nmf",
         {{"bases_per_class", c.nmf.bases_per_class}, {"images_per_class", c.nmf.images_per_class},
          {"train_iterations", c.nmf.train_iterations},
          {"decompose_iterations", c.nmf.decompose_iterations},
          {"cnmf_kernel_size", c.nmf.cnmf_kernel_size},
          {"cnmf_alternations", c.nmf.cnmf_alternations}}},
        {"decompose",
         {{"iterations", c.decompose.iterations}, {"beta", c.decompose.beta},
          {"lr", c.decompose.lr}, {"beta1", c.decompose.beta1}, {"beta2", c.decompose.beta2},
          {"restarts", c.decompose.restarts}, {"trace_every", c.decompose.trace_every},
          {"select_by_objective", c.decompose.select_by_objective}}},
        {"scenarios",
         {{"count", c.scenarios.count}, {"kinds", c.scenarios.kinds},
          {"separation_sources", c.scenarios.separation_sources},
          {"gaussian_sigma", c.scenarios.gaussian_sigma},
          {"bar_first_row", c.scenarios.bar_first_row}, {"bar_rows", c.scenarios.bar_rows},
          {"bar_value", c.scenarios.bar_value}, {"half_side", c.scenarios.half_side},
          {"half_value", c.scenarios.half_value}, {"filter_size", c.scenarios.filter_size},
          {"filter_std", c.scenarios.filter_std},
          {"constant_filter", c.scenarios.constant_filter}}},
        {"methods", c.methods},
    };
}

std::string experiment_hash(const ExperimentConfig& c) {
    const std::string text = to_json(c).dump();
    return io::sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

gan::TrainConfig gan_train_config(const ExperimentConfig& c, std::size_t train_size) {
    gan::TrainConfig t;
    t.arch.g_widths = c.gan.g_widths;
    t.arch.d_widths = c.gan.d_widths;
    t.batch_size = c.gan.batch_size;
    t.iterations = c.gan.epochs * (train_size / c.gan.batch_size);
    t.adam = {c.gan.lr, c.gan.beta1, c.gan.beta2, 1e-8};
    t.non_saturating = c.gan.non_saturating;
    t.seed = derive_seed(c.seed, 0x6a11);
    t.log_every = c.gan.log_every;
    t.checkpoint_every = c.gan.checkpoint_every;
    return t;
}

std::size_t worker_count(const ExperimentConfig& c) {
    if (const char* env = std::getenv("SD_SEP_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<std::size_t>(n);
    }
    if (c.threads > 0) return c.threads;
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace sdsep
