#pragma once

#include <cstdint>
#include <random>

namespace fednoisy {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Purpose tags keep the independent random streams of one experiment apart.
enum class Stream : std::uint64_t {
    init = 1,
    partition = 2,
    noise_rates = 3,
    label_noise = 4,
    local_train = 5,
    synthetic = 6,
};

/// Seed for a (master, stream, id, round) tuple. Per-client streams depend on
/// the client id, not on execution order.
constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t id = 0,
                                    std::uint64_t round = 0) noexcept {
    std::uint64_t s = mix64(master ^ mix64(static_cast<std::uint64_t>(stream)));
    s = mix64(s ^ id);
    return mix64(s ^ (round * 0x632be59bd9b4e019ULL));
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace fednoisy
