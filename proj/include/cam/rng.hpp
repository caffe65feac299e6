#pragma once

#include <cstdint>
#include <random>

namespace cam {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds so that
// per-subject / per-tree streams do not depend on scheduling order.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    return mix_seed(mix_seed(seed ^ mix_seed(stream)) + index);
}

}  // namespace cam
