#pragma once

#include <cstdint>
#include <string_view>

namespace drivelab {

// Deterministic splitmix64 generator. The standard library engines are
// portable but the distributions are not, and every run artifact here must be
// byte-reproducible, so all randomness goes through this.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    bool bernoulli(double p) { return uniform() < p; }

  private:
    std::uint64_t state_;
};

inline std::uint64_t hash_tag(std::string_view tag) {
    // FNV-1a
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derives an independent seed stream from (base, tag, index). Stages of a run
// pull their seeds through this so adding a stage never shifts another
// stage's stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0) {
    Rng mix(base ^ hash_tag(tag) ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
    mix.next_u64();
    return mix.next_u64();
}

}  // namespace drivelab
