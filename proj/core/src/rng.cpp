#include "keymem/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace keymem {

double Rng::normal() {
    // u1 shifted into (0, 1] so the log is finite.
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) {
        throw std::invalid_argument("Rng::uniform_index: n must be positive");
    }
    // Multiply-shift rejection-free mapping; bias is < 2^-64 * n, irrelevant here.
    return static_cast<std::size_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

long Rng::uniform_int(long lo, long hi) {
    if (lo > hi) {
        throw std::invalid_argument("Rng::uniform_int: empty range");
    }
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long>((static_cast<unsigned __int128>(next_u64()) * span) >> 64);
}

Rng Rng::fork(std::uint64_t stream) const {
    // Child seed = splitmix64 mix of (seed, stream); decorrelates sibling streams.
    std::uint64_t z = seed_ + (stream + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
}

}  // namespace keymem
