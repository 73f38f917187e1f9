// sdsep command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "sdsep/errors.hpp"
#include "sdsep/gradcheck.hpp"
#include "sdsep/harness.hpp"
#include "sdsep/io.hpp"
#include "sdsep/mnist.hpp"
#include "sdsep/tensor.hpp"

namespace fs = std::filesystem;
using namespace sdsep;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitMissingCheckpoint = 3;

using harness::MissingArtifact;

Checkpoint require_checkpoint(const fs::path& p) {
    if (p.empty() || !fs::exists(p)) throw MissingArtifact(p);
    return Checkpoint::load(p);
}

struct DecomposeArgs {
    std::string method = "sd";
    std::size_t restarts = 1;
    std::size_t iterations = 0;
    fs::path scenario, out, gan, cnn, nmf;
    std::string config;
};

int cmd_decompose(const DecomposeArgs& a) {
    // Checkpoints are checked before any work starts.
    const fs::path& needed = a.method == "sd" ? a.gan : a.method == "cnn" ? a.cnn : a.nmf;
    if (needed.empty() || !fs::exists(needed)) throw MissingArtifact(needed);
    const ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
    const auto s = mixer::load_scenario(a.scenario);
    fs::create_directories(a.out);
    harness::MethodOutput out;
    std::string row_method = a.method;
    if (a.method == "sd") {
        auto g = gan::load_generator(require_checkpoint(a.gan));
        g.net().set_trainable(false);
        auto dc = harness::sd_config(cfg, s, a.restarts);
        if (a.iterations) dc.iterations = a.iterations;
        const auto d = decompose::decompose(Tensor<float>::from({1, 1, mnist::kSide, mnist::kSide}, s.mixture),
                                            g, dc);
        decompose::save_decomposition(d, a.out);
        out = harness::sd_output(d);
        row_method = "sd-L" + std::to_string(a.restarts);
    } else if (a.method == "nmf" || a.method == "cnmf") {
        const auto dict = baselines::load_dictionary(require_checkpoint(a.nmf));
        std::size_t iters = a.iterations ? a.iterations : cfg.nmf.decompose_iterations;
        if (a.method == "nmf") {
            out = harness::run_nmf(s, dict, iters);
        } else {
            auto o = harness::cnmf_options(cfg);
            o.iterations = iters;
            out = harness::run_cnmf(s, dict, o);
        }
    } else if (a.method == "cnn") {
        auto m = baselines::load_cnn(require_checkpoint(a.cnn));
        m.net().set_trainable(false);
        out = harness::run_cnn(s, m);
    }
    std::vector<float> flat;
    for (std::size_t k = 0; k < out.estimates.size(); ++k) {
        flat.insert(flat.end(), out.estimates[k].begin(), out.estimates[k].end());
        io::write_pgm(a.out / ("estimate" + std::to_string(k) + ".pgm"), mnist::kSide, mnist::kSide,
                      io::to_gray(out.estimates[k]));
    }
    mixer::write_f32(a.out / "estimates.f32", flat);
    if (!out.filters.empty()) {
        std::vector<float> f;
        for (const auto& v : out.filters) f.insert(f.end(), v.begin(), v.end());
        mixer::write_f32(a.out / "filters.f32", f);
    }
    const auto row = harness::score(row_method, s, 0, out);
    io::write_text_atomic(a.out / "result.json", eval::to_json(row).dump(2) + "\n");
    std::printf("%s %s K=%zu mean PSNR %.3f dB -> %s\n", row_method.c_str(), row.kind.c_str(), row.K,
                row.mean, a.out.string().c_str());
    return 0;
}

int cmd_prepare_data(const fs::path& source, const fs::path& dest) {
    const fs::path from = source.empty() ? dest : source;
    for (const auto* split : {"train", "t10k"}) {
        for (const auto* part : {"images-idx3-ubyte", "labels-idx1-ubyte"}) {
            const std::string stem = std::string(split) + "-" + part;
            const auto in = mnist::find_idx(from, stem);
            const auto bytes = io::read_file_maybe_gzip(in);
            mnist::parse_idx(bytes);
            if (!source.empty()) io::write_file_atomic(dest / in.filename(), io::read_file(in));
        }
    }
    for (auto split : {mnist::Split::train, mnist::Split::test}) {
        const auto set = mnist::load(dest, split);
        std::size_t counts[10] = {};
        for (auto l : set.labels()) ++counts[l];
        std::printf("%s: %zu images from %s\n  labels:", split == mnist::Split::train ? "train" : "test",
                    set.size(), set.source().c_str());
        for (auto n : counts) std::printf(" %zu", n);
        std::printf("\n");
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, int instances) {
    const auto rows = run_gradcheck_battery(seed, instances);
    bool ok = true;
    for (const auto& r : rows) {
        std::printf("%-26s n=%-3d max_rel_err=%.3e tol=%.0e %s\n", r.op.c_str(), r.instances,
                    r.max_error, r.tolerance, r.passed() ? "ok" : "FAIL");
        ok = ok && r.passed();
    }
    return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-channel source separation and deconvolution with a GAN prior"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    std::string config_path;
    fs::path data_dir = "data", source_dir;
    std::size_t iterations = 0;

    auto* prep = app.add_subcommand("prepare-data", "Validate MNIST IDX files and copy them into the data directory");
    prep->add_option("--source", source_dir, "Directory holding the four IDX files (raw or .gz)");
    prep->add_option("--data", data_dir, "Destination data directory")->capture_default_str();

    auto* train_gan = app.add_subcommand("train-gan", "Train (or resume) the GAN source model");
    train_gan->add_option("--config", config_path, "Experiment config (TOML)")->required();
    train_gan->add_option("--iterations", iterations, "Stop after this many iterations (0 = config)");

    std::uint64_t seed = 42;
    int instances = 20;
    auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient battery");
    grad->add_option("--seed", seed)->capture_default_str();
    grad->add_option("--instances", instances, "Random instances per op")->capture_default_str();

    auto* train_cnn = app.add_subcommand("train-cnn", "Train the supervised CNN denoiser baseline");
    train_cnn->add_option("--config", config_path, "Experiment config (TOML)")->required();
    auto* train_nmf = app.add_subcommand("train-nmf", "Learn the per-digit NMF dictionary");
    train_nmf->add_option("--config", config_path, "Experiment config (TOML)")->required();
    auto* scen = app.add_subcommand("make-scenarios", "Write the scenario grid of a config");
    scen->add_option("--config", config_path, "Experiment config (TOML)")->required();

    DecomposeArgs da;
    auto* dec = app.add_subcommand("decompose", "Recover the sources of one scenario");
    dec->add_option("--method", da.method, "sd | nmf | cnmf | cnn")
        ->check(CLI::IsMember({"sd", "nmf", "cnmf", "cnn"}))
        ->capture_default_str();
    dec->add_option("--scenario", da.scenario, "Scenario directory")->required();
    dec->add_option("--out", da.out, "Output directory")->required();
    dec->add_option("--restarts", da.restarts, "Random initialisations (sd)")->capture_default_str();
    dec->add_option("--iterations", da.iterations, "Override the iteration count");
    dec->add_option("--gan", da.gan, "Generator checkpoint (sd)");
    dec->add_option("--cnn", da.cnn, "CNN checkpoint (cnn)");
    dec->add_option("--nmf", da.nmf, "NMF dictionary checkpoint (nmf, cnmf)");
    dec->add_option("--config", da.config, "Take the remaining settings from this config");

    auto* evaluate = app.add_subcommand("evaluate", "Aggregate finished cells into report.json / report.txt");
    evaluate->add_option("--config", config_path, "Experiment config (TOML)")->required();
    auto* repro = app.add_subcommand("reproduce", "Train what is missing and run the whole grid");
    repro->add_option("--config", config_path, "Experiment config (TOML)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*prep) return cmd_prepare_data(source_dir, data_dir);
        if (*grad) return cmd_gradcheck(seed, instances);
        if (*train_gan) {
            const auto cfg = load_config(config_path);
            std::cout << harness::train_gan(cfg, iterations).string() << "\n";
            return 0;
        }
        if (*train_cnn) {
            std::cout << harness::train_cnn(load_config(config_path)).string() << "\n";
            return 0;
        }
        if (*train_nmf) {
            std::cout << harness::train_nmf(load_config(config_path)).string() << "\n";
            return 0;
        }
        if (*scen) {
            const auto cfg = load_config(config_path);
            harness::make_scenarios(cfg);
            std::cout << (harness::eval_dir(cfg) / "scenarios").string() << "\n";
            return 0;
        }
        if (*dec) return cmd_decompose(da);
        if (*evaluate || *repro) {
            const auto cfg = load_config(config_path);
            if (*evaluate) harness::make_scenarios(cfg);
            const auto report = *repro ? harness::reproduce(cfg) : harness::evaluate(cfg);
            std::cout << eval::render_text(report) << (harness::eval_dir(cfg) / "report.json").string() << "\n";
            return 0;
        }
    } catch (const MissingArtifact& e) {
        std::cerr << "error: missing-checkpoint: " << e.path.string() << "\n";
        return kExitMissingCheckpoint;
    } catch (const ParseError& e) {
        std::cerr << "error: parse: " << e.what() << "\n";
        return kExitFailure;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return 0;
}
