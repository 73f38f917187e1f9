#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>

namespace sdsep {

// splitmix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return mix_seed(mix_seed(master) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

// Seeded engine whose complete state is the engine state: distributions are
// constructed per call, so saving/restoring the engine resumes bit-exactly.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    template <typename T>
    void fill_normal(std::span<T> out, double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> dist(mean, stddev);
        for (auto& v : out) v = static_cast<T>(dist(engine_));
    }

    template <typename T>
    void fill_uniform(std::span<T> out, double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& v : out) v = static_cast<T>(dist(engine_));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    std::uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }
    void restore(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace sdsep
