#include "sdsep/harness.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>

#include "sdsep/errors.hpp"
#include "sdsep/io.hpp"

namespace sdsep::harness {

namespace {

std::string short_hash(const nlohmann::json& j) {
    const std::string text = j.dump();
    return io::sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()})
        .substr(0, 12);
}

nlohmann::json gan_key(const ExperimentConfig& c) {
    const auto j = to_json(c);
    return {{"gan", j["gan"]}, {"data", j["data"]["train_limit"]}, {"seed", c.seed}};
}

}  // namespace

void log(const std::string& line) {
    static std::mutex mu;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%H:%M:%S", std::localtime(&now));
    std::lock_guard lock(mu);
    std::cerr << "[" << stamp << "] " << line << std::endl;
}

fs::path gan_dir(const ExperimentConfig& c) { return c.output_dir / ("gan-" + short_hash(gan_key(c))); }

fs::path cnn_dir(const ExperimentConfig& c) {
    const auto j = to_json(c);
    return c.output_dir /
           ("cnn-" + short_hash({{"cnn", j["cnn"]}, {"data", j["data"]["train_limit"]}, {"seed", c.seed}}));
}

fs::path nmf_dir(const ExperimentConfig& c) {
    const auto j = to_json(c);
    return c.output_dir /
           ("nmf-" + short_hash({{"nmf", j["nmf"]}, {"data", j["data"]["train_limit"]}, {"seed", c.seed}}));
}

fs::path eval_dir(const ExperimentConfig& c) {
    return c.output_dir / (c.name + "-" + experiment_hash(c).substr(0, 12));
}

namespace {

mnist::ImageSet limited(mnist::ImageSet set, std::size_t limit) {
    if (limit == 0 || limit >= set.size()) return set;
    std::vector<float> px(set.pixels().begin(), set.pixels().begin() + limit * mnist::kPixels);
    std::vector<std::uint8_t> labels(set.labels().begin(), set.labels().begin() + limit);
    return mnist::ImageSet(std::move(px), std::move(labels), set.source());
}

}  // namespace

mnist::ImageSet load_train(const ExperimentConfig& c) {
    return limited(mnist::load(c.data.dir, mnist::Split::train), c.data.train_limit);
}

mnist::ImageSet load_test(const ExperimentConfig& c) { return mnist::load(c.data.dir, mnist::Split::test); }

fs::path train_gan(const ExperimentConfig& c, std::size_t max_iterations) {
    const auto dir = gan_dir(c);
    const auto generator_path = dir / "generator.ckpt";
    const auto checkpoint_path = dir / "train.ckpt";
    const auto data = load_train(c);
    const auto tc = gan_train_config(c, data.size());
    fs::create_directories(dir);
    io::write_text_atomic(dir / "config.json", nlohmann::json(tc).dump(2) + "\n");

    gan::Trainer trainer(tc, data);
    if (fs::exists(checkpoint_path)) {
        trainer.restore(Checkpoint::load(checkpoint_path));
        log("gan: resumed at iteration " + std::to_string(trainer.iteration()) + " from " +
            checkpoint_path.string());
    }
    const std::size_t target = max_iterations ? std::min(max_iterations, tc.iterations) : tc.iterations;
    if (trainer.iteration() >= tc.iterations && fs::exists(generator_path)) {
        log("gan: already trained (" + generator_path.string() + ")");
        return generator_path;
    }

    std::ofstream curve(dir / "log.jsonl", std::ios::app);
    const auto start = std::chrono::steady_clock::now();
    const std::size_t first = trainer.iteration();
    while (trainer.iteration() < target) {
        const std::size_t next =
            std::min(target, (trainer.iteration() / tc.checkpoint_every + 1) * tc.checkpoint_every);
        try {
            trainer.run(next, [&](const gan::LogEntry& e) {
                const nlohmann::json row{{"iteration", e.iteration},
                                         {"d_loss", e.d_loss},
                                         {"g_loss", e.g_loss_non_saturating},
                                         {"g_loss_literal", e.g_loss_literal},
                                         {"mean_d_fake", e.mean_d_fake}};
                curve << row.dump() << "\n";
                curve.flush();
                const double secs =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                const double rate = secs / double(e.iteration - first);
                char buf[200];
                std::snprintf(buf, sizeof buf,
                              "gan: it %zu/%zu d_loss %.4f g_loss %.4f D(G(z)) %.3f  %.2fs/it eta %.0fs",
                              e.iteration, target, e.d_loss, e.g_loss_non_saturating, e.mean_d_fake,
                              rate, rate * double(target - e.iteration));
                log(buf);
            });
        } catch (const NumericError& e) {
            log(std::string("gan: aborted: ") + e.what() + "; last good checkpoint " +
                checkpoint_path.string());
            throw;
        }
        trainer.save().save(checkpoint_path);
    }
    if (trainer.iteration() >= tc.iterations) {
        gan::export_generator(trainer.generator()).save(generator_path);
        log("gan: wrote " + generator_path.string());
    }
    return generator_path;
}

}  // namespace sdsep::harness
