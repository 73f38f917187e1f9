#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <unistd.h>

#include "sdsep/config.hpp"
#include "sdsep/errors.hpp"
#include "sdsep/harness.hpp"
#include "sdsep/io.hpp"

using namespace sdsep;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = SDSEP_SOURCE_DIR;

bool has_mnist() {
    try {
        mnist::find_idx(kSource / "data", "t10k-images-idx3-ubyte");
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

// Tiny config rooted in a fresh temporary directory.
struct Sandbox {
    fs::path root;
    ExperimentConfig cfg;

    explicit Sandbox(const std::string& tag) {
        root = fs::temp_directory_path() / ("sdsep-test-" + tag + "-" + std::to_string(::getpid()));
        fs::remove_all(root);
        cfg = load_config(kSource / "configs/tiny.toml");
        cfg.output_dir = root;
        cfg.data.dir = kSource / "data";
        cfg.data.train_limit = 300;
    }
    ~Sandbox() { fs::remove_all(root); }
};

std::string slurp(const fs::path& p) {
    const auto b = io::read_file(p);
    return {b.begin(), b.end()};
}

}  // namespace

TEST(Config, ShippedConfigsParse) {
    for (const char* name : {"desk.toml", "full.toml", "tiny.toml"}) {
        SCOPED_TRACE(name);
        const auto c = load_config(kSource / "configs" / name);
        EXPECT_FALSE(c.methods.empty());
    }
    const auto desk = load_config(kSource / "configs/desk.toml");
    EXPECT_EQ(desk.scenarios.count, 20u);
    EXPECT_EQ(desk.gan.epochs, 20u);
    EXPECT_EQ(desk.decompose.restarts, (std::vector<std::size_t>{1, 8, 32}));
    const auto full = load_config(kSource / "configs/full.toml");
    EXPECT_EQ(full.gan.g_widths, (std::array<std::size_t, 3>{512, 256, 128}));
    EXPECT_EQ(full.decompose.iterations, 2000u);
}

TEST(Config, EmptyTextGivesDefaults) {
    const auto c = parse_config("");
    EXPECT_EQ(c.scenarios.count, 20u);
    EXPECT_EQ(c.decompose.restarts, (std::vector<std::size_t>{1, 8, 32}));
    EXPECT_EQ(c.decompose.iterations, 2000u);
    EXPECT_EQ(c.methods.size(), 4u);
}

TEST(Config, RejectsBadInput) {
    EXPECT_THROW(parse_config("[gan]\nwidthz = 3\n"), ContractError);
    EXPECT_THROW(parse_config("surprise = 1\n"), ContractError);
    EXPECT_THROW(parse_config("[decompose]\nrestarts = []\n"), ContractError);
    EXPECT_THROW(parse_config("[decompose]\niterations = -4\n"), ContractError);
    EXPECT_THROW(parse_config("[scenarios]\nkinds = [\"juggling\"]\n"), ContractError);
    EXPECT_THROW(parse_config("[methods]\nmagic = [\"denoising\"]\n"), ContractError);
    EXPECT_THROW(parse_config("[gan\n"), ParseError);
    EXPECT_THROW(load_config("/nonexistent/x.toml"), IoError);
}

TEST(Config, HashIgnoresOutputDirOnly) {
    auto a = parse_config("");
    auto b = a;
    b.output_dir = "/elsewhere";
    b.threads = 7;
    EXPECT_EQ(experiment_hash(a), experiment_hash(b));
    b.seed = a.seed + 1;
    EXPECT_NE(experiment_hash(a), experiment_hash(b));
    auto c = a;
    c.decompose.iterations = 10;
    EXPECT_NE(experiment_hash(a), experiment_hash(c));
    EXPECT_NE(harness::eval_dir(a), harness::eval_dir(c));
    // Artifacts only move when their own settings move.
    EXPECT_EQ(harness::gan_dir(a), harness::gan_dir(c));
    c.gan.epochs = 3;
    EXPECT_NE(harness::gan_dir(a), harness::gan_dir(c));
    EXPECT_EQ(harness::nmf_dir(a), harness::nmf_dir(c));
}

TEST(Config, WorkerCountPrecedence) {
    auto c = parse_config("threads = 3\n");
    ::unsetenv("SD_SEP_THREADS");
    EXPECT_EQ(worker_count(c), 3u);
    ::setenv("SD_SEP_THREADS", "5", 1);
    EXPECT_EQ(worker_count(c), 5u);
    ::unsetenv("SD_SEP_THREADS");
    c.threads = 0;
    EXPECT_GE(worker_count(c), 1u);
}

TEST(Harness, ScenarioSeedsAreDistinct) {
    const auto c = parse_config("");
    std::set<std::uint64_t> seen;
    for (auto k : harness::configured_kinds(c))
        for (std::size_t i = 0; i < 50; ++i) seen.insert(harness::scenario_seed(c, k, i));
    EXPECT_EQ(seen.size(), 6u * 50u);
}

TEST(Harness, ConfiguredKindsFollowReportOrder) {
    const auto c = parse_config("[scenarios]\nkinds = [\"separation\", \"denoising\"]\n");
    const auto k = harness::configured_kinds(c);
    ASSERT_EQ(k.size(), 2u);
    EXPECT_EQ(k[0], mixer::ScenarioKind::denoising);
    EXPECT_EQ(k[1], mixer::ScenarioKind::separation);
}

TEST(Harness, MissingCheckpointNamesPath) {
    Sandbox box("missing");
    try {
        harness::load_models(box.cfg);
        FAIL() << "expected MissingArtifact";
    } catch (const harness::MissingArtifact& e) {
        EXPECT_EQ(e.path, harness::gan_dir(box.cfg) / "generator.ckpt");
    }
}

TEST(Pipeline, SingleKindSingleMethodGivesOneCell) {
    if (!has_mnist()) GTEST_SKIP() << "MNIST not under data/";
    Sandbox box("onecell");
    box.cfg.scenarios.kinds = {"denoising"};
    box.cfg.methods = {{"nmf", {"denoising"}}};
    const auto r = harness::reproduce(box.cfg);
    ASSERT_EQ(r.cells.size(), 1u);
    EXPECT_EQ(r.cells[0].method, "nmf");
    EXPECT_EQ(r.cells[0].rows, box.cfg.scenarios.count);
    EXPECT_TRUE(fs::exists(harness::eval_dir(box.cfg) / "report.txt"));
    EXPECT_TRUE(fs::exists(harness::eval_dir(box.cfg) / "figures" / "denoising.pgm"));
    // Only the NMF dictionary was trained.
    EXPECT_FALSE(fs::exists(harness::gan_dir(box.cfg)));
}

TEST(Pipeline, SdRowsPerRestartCountResumeAndFailures) {
    if (!has_mnist()) GTEST_SKIP() << "MNIST not under data/";
    Sandbox box("sd");
    box.cfg.scenarios.kinds = {"denoising", "separation_deconvolution"};
    box.cfg.decompose.restarts = {8, 1, 32};
    box.cfg.decompose.iterations = 3;
    // cnn cannot take two-source mixtures: that cell must fail without stopping the run.
    box.cfg.methods = {{"sd", {"denoising", "separation_deconvolution"}}, {"cnn", {"separation_deconvolution"}}};
    const auto r = harness::reproduce(box.cfg);
    for (const char* m : {"sd-L1", "sd-L8", "sd-L32"})
        for (const char* k : {"denoising", "separation_deconvolution"}) {
            const auto* cell = r.find(m, k);
            ASSERT_NE(cell, nullptr) << m << " " << k;
            EXPECT_EQ(cell->rows + cell->infinities, box.cfg.scenarios.count);
        }
    const auto* cnn = r.find("cnn", "separation_deconvolution");
    ASSERT_NE(cnn, nullptr);
    EXPECT_EQ(cnn->failures, box.cfg.scenarios.count);
    const auto text = eval::render_text(r);
    for (const char* label : {"S-D with 1 init.", "S-D with 8 init.", "S-D with 32 init."})
        EXPECT_NE(text.find(label), std::string::npos) << label;

    const auto dir = harness::eval_dir(box.cfg);
    EXPECT_TRUE(fs::exists(dir / "figures" / "separation_deconvolution-filters.pgm"));
    const auto report = slurp(dir / "report.json");
    const auto kept = dir / "results/sd/denoising/0.json", dropped = dir / "results/sd/denoising/1.json";
    const auto kept_text = slurp(kept), dropped_text = slurp(dropped);
    // Resume: a finished cell is not touched, a missing one is recomputed identically.
    {
        std::ofstream(kept, std::ios::app) << " ";
    }
    fs::remove(dropped);
    harness::run_cells(box.cfg, harness::load_models(box.cfg));
    EXPECT_EQ(slurp(kept), kept_text + " ");
    const auto redo = nlohmann::json::parse(slurp(dropped));
    EXPECT_EQ(redo["rows"], nlohmann::json::parse(dropped_text)["rows"]);
    harness::evaluate(box.cfg);
    EXPECT_EQ(slurp(dir / "report.json"), report);
}
