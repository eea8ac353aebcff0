#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

namespace primelab {

/// splitmix64 stream (Vigna's public-domain mixer). Used everywhere a
/// reproducible, platform-independent random stream is required.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Unbiased draw in [0, bound) by rejection.
    std::uint64_t next_below(std::uint64_t bound) {
        const std::uint64_t threshold = (0ULL - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % bound;
        }
    }

private:
    std::uint64_t state_;
};

/// Stateless mix of a seed with up to three coordinates, giving each
/// (seed, a, b, c) tuple its own independent splitmix64 substream. Results
/// do not depend on the order in which substreams are consumed.
inline std::uint64_t substream_key(std::uint64_t seed, std::uint64_t a = 0,
                                   std::uint64_t b = 0, std::uint64_t c = 0) {
    SplitMix64 h(seed);
    std::uint64_t k = h.next();
    k ^= a + 0x9e3779b97f4a7c15ULL + (k << 6) + (k >> 2);
    SplitMix64 h2(k);
    k = h2.next();
    k ^= b + 0x9e3779b97f4a7c15ULL + (k << 6) + (k >> 2);
    SplitMix64 h3(k);
    k = h3.next();
    k ^= c + 0x9e3779b97f4a7c15ULL + (k << 6) + (k >> 2);
    return k;
}

/// Fisher-Yates shuffle of [0, n) driven by a splitmix64 stream.
/// Bit-exact for a given seed on every platform.
inline std::vector<std::uint32_t> random_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    SplitMix64 rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

}  // namespace primelab
