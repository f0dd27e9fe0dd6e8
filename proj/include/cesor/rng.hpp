#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cesor {

using Rng = std::mt19937_64;

// Stream purposes, mixed into substream derivation so that e.g. the
// validation contexts never share a stream with training rollouts.
enum class StreamTag : std::uint64_t {
    Init = 1,
    Rollout = 2,
    ContextRef = 3,
    ContextShifted = 4,
    Validation = 5,
    Test = 6,
    Analysis = 7,
    Demo = 8,
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Deterministic substream keyed by the master seed and an index path,
// e.g. (seed, Rollout, iteration, episode).
Rng make_stream(std::uint64_t master_seed, StreamTag tag,
                std::initializer_list<std::uint64_t> path = {});

}  // namespace cesor
