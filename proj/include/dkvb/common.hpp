#ifndef DKVB_COMMON_HPP
#define DKVB_COMMON_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dkvb {

// Error taxonomy. The CLI maps these onto exit codes: ConfigError -> 1,
// DataError/FormatError/ShapeError/ComparabilityError -> 2, StateError -> 3.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ComparabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Derive a child seed from a master seed and a role tag, so independent
/// random streams (projection build, key seeding, shuffling, noise) never
/// overlap even when they share one master seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view role);

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distribution transforms are hand-rolled here because std::*_distribution
// output is implementation-defined and would break bit-reproducibility of
// checkpoints across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Unbiased uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    /// Uniform double in [0, 1), 53-bit resolution.
    double real01();

    /// Standard normal deviate via Box-Muller (pair-cached).
    double gaussian();

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

/// 0..n-1 shuffled with the given seed.
std::vector<int> shuffled_indices(int n, std::uint64_t seed);

}  // namespace dkvb

#endif  // DKVB_COMMON_HPP
