#include "dkvb/common.hpp"

#include <cmath>

namespace dkvb {

namespace {

// splitmix64 finalizer; good avalanche for seed mixing.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a 64-bit over the role tag bytes.
std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view role) {
    return mix64(master ^ mix64(fnv1a(role)));
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) {
        throw ConfigError("Rng::below: bound must be positive");
    }
    // Rejection sampling over the largest multiple of bound; unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

double Rng::real01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    // Box-Muller; u1 is kept away from 0 so log stays finite.
    double u1;
    do {
        u1 = real01();
    } while (u1 <= 0.0);
    const double u2 = real01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    return idx;
}

}  // namespace dkvb
