#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace fusionnet {

/// Seeded random stream. Draws are built directly from the mt19937_64 bit
/// stream so sequences are identical across standard libraries (the std
/// distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Independent stream keyed by (seed, a, b).
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Unbiased integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller; caches the second variate.
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    std::string state() const;
    void set_state(const std::string& text);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fusionnet
