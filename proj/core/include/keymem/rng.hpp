#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace keymem {

// Deterministic 64-bit generator. The update is the splitmix64 mix: a fixed
// additive constant followed by three xor-shift-multiply rounds, so equal
// seeds produce byte-identical streams on every platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; two uniform draws per sample.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform index in [0, n); n must be positive.
    std::size_t uniform_index(std::size_t n);

    // Uniform integer in [lo, hi], inclusive.
    long uniform_int(long lo, long hi);

    // Derived stream with an independent-looking state, keyed by (seed, stream).
    Rng fork(std::uint64_t stream) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

// Inverted-scaling dropout shared by encoder and cross-attention. A null rng
// with rate 0 means dropout disabled.
struct DropoutPlan {
    double rate = 0.0;
    Rng* rng = nullptr;  // masks drawn from this stream
};

}  // namespace keymem
