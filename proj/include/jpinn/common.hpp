#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace jpinn {

// Exit codes used by the CLI; library code throws, the CLI maps.
enum class ExitCode : int { ok = 0, config_error = 2, data_error = 3, numeric_error = 4 };

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All seeded randomness in the project goes through this engine type so that
// runs are reproducible across platforms.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

// Derive a stream-specific seed from a base seed, so that independent
// components (splitting, init, shuffling, ...) do not share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t x = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27; x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

}  // namespace jpinn
