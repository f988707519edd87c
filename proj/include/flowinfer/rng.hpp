#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace flowinfer {

// splitmix64 step, used to expand one master seed into substream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// One master seed, independent named substreams (base sampling, data noise,
// mask permutation, ...). Streams with distinct (name, index) never collide.
class RngPool {
public:
    explicit RngPool(std::uint64_t seed) : seed_(seed) {}

    std::mt19937_64 stream(std::string_view name, std::uint64_t index = 0) const {
        std::uint64_t st = seed_ ^ fnv1a64(name);
        st += 0x9e3779b97f4a7c15ULL * (index + 1);
        const std::uint64_t a = splitmix64(st);
        const std::uint64_t b = splitmix64(st);
        std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                          static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
        return std::mt19937_64(seq);
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

}  // namespace flowinfer
