#pragma once

#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace demandbench {

using Rng = std::mt19937_64;

/// Derives an independent RNG stream from a base seed and a stream index.
/// Streams for distinct indices never share state, so replications and
/// multi-start searches can run in parallel with reproducible results.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over (seed, stream); avoids correlated mt19937 seedings.
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return Rng(mix(mix(seed) ^ mix(stream + 0x51ed270b7a4ff9c3ULL)));
}

/// Formats a double so that parsing it back yields the identical bit pattern.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// FNV-1a 64-bit hash, used for config fingerprints in run manifests.
inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace demandbench
