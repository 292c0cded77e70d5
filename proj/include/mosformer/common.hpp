#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mosf {

// Error taxonomy used across the library. All derive from std::runtime_error
// so callers can catch coarsely or precisely.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("i/o error: " + msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};

// Worker-count cap. Resolved once from MOSF_THREADS (default: hardware
// concurrency); kernels parallelize over disjoint output ranges only, so the
// numeric results do not depend on the value.
int max_threads();
void set_max_threads(int n);

// Deterministic RNG with named substreams so that adding a consumer does not
// perturb unrelated draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::mt19937_64& engine() { return engine_; }

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }
    double normal(double mean, double stddev) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
        std::uniform_int_distribution<std::int64_t> d(lo, hi);
        return d(engine_);
    }

    // Independent child stream; `salt` should be a stable tag.
    Rng fork(std::uint64_t salt) const {
        std::uint64_t s = seed_mix_ ^ (salt * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
        return Rng(s, true);
    }

    static Rng seeded(std::uint64_t seed) {
        Rng r(seed);
        r.seed_mix_ = seed * 0xBF58476D1CE4E5B9ull + 0x94D049BB133111EBull;
        return r;
    }

private:
    Rng(std::uint64_t seed, bool) : engine_(seed), seed_mix_(seed) {}
    std::mt19937_64 engine_;
    std::uint64_t seed_mix_ = 0;
};

}  // namespace mosf
