#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "primelab/error.hpp"
#include "primelab/rng.hpp"

namespace primelab {

/// A sub-token code: ell digits, each in [0, b).
using SubTokenCode = std::vector<std::uint32_t>;

enum class ShuffleStrategy { Identity, Random, Greedy };

inline std::string to_string(ShuffleStrategy s) {
    switch (s) {
        case ShuffleStrategy::Identity: return "identity";
        case ShuffleStrategy::Random: return "random";
        case ShuffleStrategy::Greedy: return "greedy";
    }
    return "identity";
}

/// Smallest b with b^ell >= V, i.e. ceil(V^(1/ell)) computed in exact
/// integer arithmetic (floating-point roots can land one off).
inline std::uint32_t ceil_root(std::uint64_t V, std::uint32_t ell) {
    std::uint32_t b = 1;
    auto pow_ge = [&](std::uint64_t base) {
        std::uint64_t acc = 1;
        for (std::uint32_t i = 0; i < ell; ++i) {
            if (acc > V / base + 1) return true;
            acc *= base;
            if (acc >= V) return true;
        }
        return acc >= V;
    };
    while (!pow_ge(b)) ++b;
    return b;
}

inline std::uint32_t max_granularity(std::uint64_t V) {
    std::uint32_t l = 0;
    std::uint64_t p = 1;
    while (p < V) {
        p *= 2;
        ++l;
    }
    return l == 0 ? 1 : l;
}

/// Invertible token -> sub-token map: a permutation of token indices
/// followed by fixed-width base-b expansion (MSB first).
class Subtokenizer {
public:
    static constexpr int kFormatVersion = 1;

    static Subtokenizer identity(std::uint32_t V, std::uint32_t ell) {
        std::vector<std::uint32_t> perm(V);
        std::iota(perm.begin(), perm.end(), 0u);
        return Subtokenizer(V, ell, std::move(perm), ShuffleStrategy::Identity, std::nullopt);
    }

    static Subtokenizer random(std::uint32_t V, std::uint32_t ell, std::uint64_t seed) {
        return Subtokenizer(V, ell, random_permutation(V, seed), ShuffleStrategy::Random, seed);
    }

    /// Greedy entropy-balancing assignment. Tokens sorted by count
    /// descending (ties by ascending id) are dealt recursively, one digit
    /// position at a time, into the b digit buckets: each token joins the
    /// lightest bucket with remaining index capacity (pairing the most and
    /// least frequent tokens), and the finished buckets take digit values
    /// in order of the running per-position digit masses, heaviest bucket
    /// to lightest digit, so every digit marginal stays near-balanced.
    /// Deterministic: all ties break toward the smaller digit/id.
    static Subtokenizer greedy(std::uint32_t V, std::uint32_t ell,
                               const std::vector<std::uint64_t>& counts) {
        if (counts.size() != V) throw EmptyCounts("greedy: counts size must equal V");
        if (std::all_of(counts.begin(), counts.end(), [](std::uint64_t c) { return c == 0; }))
            throw EmptyCounts("greedy: counts are all zero");
        const std::uint32_t b = ceil_root(V, ell);
        std::vector<std::uint32_t> order(V);
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t x, std::uint32_t y) {
            return counts[x] > counts[y];
        });
        std::vector<std::uint32_t> perm(V);
        std::vector<std::vector<double>> digit_mass(ell, std::vector<double>(b, 0.0));

        const std::function<void(const std::vector<std::uint32_t>&, std::uint64_t, std::uint64_t,
                                 std::uint32_t)>
            place = [&](const std::vector<std::uint32_t>& toks, std::uint64_t lo,
                        std::uint64_t span, std::uint32_t depth) {
                if (toks.empty()) return;
                if (span == 1) {
                    perm[toks.front()] = static_cast<std::uint32_t>(lo);
                    return;
                }
                const std::uint64_t sub = span / b;
                std::vector<std::uint64_t> cap(b, 0);
                for (std::uint32_t g = 0; g < b; ++g) {
                    const std::uint64_t s = lo + g * sub;
                    const std::uint64_t e = std::min(lo + (g + 1) * sub, std::uint64_t{V});
                    cap[g] = e > s ? e - s : 0;
                }
                std::vector<std::vector<std::uint32_t>> bucket(b);
                std::vector<double> mass(b, 0.0);
                for (std::uint32_t t : toks) {
                    std::uint32_t best = b;
                    for (std::uint32_t g = 0; g < b; ++g) {
                        if (bucket[g].size() >= cap[g]) continue;
                        if (best == b || mass[g] < mass[best]) best = g;
                    }
                    bucket[best].push_back(t);
                    mass[best] += static_cast<double>(counts[t]);
                }
                // relabel within equal-capacity digit classes: heaviest
                // bucket takes the digit whose global mass is lowest
                std::vector<std::uint32_t> label(b);
                std::map<std::uint64_t, std::vector<std::uint32_t>> by_cap;
                for (std::uint32_t g = 0; g < b; ++g) by_cap[cap[g]].push_back(g);
                for (auto& [c, digits] : by_cap) {
                    std::vector<std::uint32_t> slots = digits;  // label candidates
                    std::stable_sort(slots.begin(), slots.end(),
                                     [&](std::uint32_t x, std::uint32_t y) {
                                         return digit_mass[depth][x] < digit_mass[depth][y];
                                     });
                    std::vector<std::uint32_t> heavy = digits;  // buckets by mass desc
                    std::stable_sort(heavy.begin(), heavy.end(),
                                     [&](std::uint32_t x, std::uint32_t y) {
                                         return mass[x] > mass[y];
                                     });
                    for (std::size_t k = 0; k < heavy.size(); ++k) label[heavy[k]] = slots[k];
                }
                for (std::uint32_t g = 0; g < b; ++g) {
                    digit_mass[depth][label[g]] += mass[g];
                    place(bucket[g], lo + label[g] * sub, sub, depth + 1);
                }
            };
        std::uint64_t span = 1;
        for (std::uint32_t j = 0; j < ell; ++j) span *= b;
        place(order, 0, span, 0);
        return Subtokenizer(V, ell, std::move(perm), ShuffleStrategy::Greedy, std::nullopt);
    }

    std::uint32_t vocab_size() const { return V_; }
    std::uint32_t granularity() const { return ell_; }
    std::uint32_t base() const { return b_; }
    ShuffleStrategy strategy() const { return strategy_; }
    std::optional<std::uint64_t> seed() const { return seed_; }
    const std::vector<std::uint32_t>& perm() const { return perm_; }
    const std::vector<std::uint32_t>& inv_perm() const { return inv_perm_; }

    SubTokenCode encode(std::uint32_t token) const {
        if (token >= V_) throw TokenOutOfRange("encode: token " + std::to_string(token) +
                                               " >= V=" + std::to_string(V_));
        SubTokenCode digits(ell_);
        std::uint64_t v = perm_[token];
        for (std::uint32_t j = ell_; j-- > 0;) {
            digits[j] = static_cast<std::uint32_t>(v % b_);
            v /= b_;
        }
        return digits;
    }

    std::uint32_t decode(const SubTokenCode& code) const {
        if (code.size() != ell_) throw InvalidCode("decode: code length != ell");
        std::uint64_t v = 0;
        for (std::uint32_t j = 0; j < ell_; ++j) {
            if (code[j] >= b_) throw InvalidCode("decode: digit >= b");
            v = v * b_ + code[j];
        }
        if (v >= V_)
            throw InvalidCode("decode: value " + std::to_string(v) + " >= V=" + std::to_string(V_));
        return inv_perm_[v];
    }

    /// Split each base-b1 digit into ell2/ell1 base-b2 digits. Only defined
    /// for nested power bases (b1 = b2^(ell2/ell1)).
    SubTokenCode refine(const SubTokenCode& code, std::uint32_t ell2) const {
        if (code.size() != ell_) throw InvalidCode("refine: code length != ell");
        if (ell2 % ell_ != 0)
            throw IncompatibleBases("refine: ell2 must be a multiple of ell1");
        const std::uint32_t factor = ell2 / ell_;
        const std::uint32_t b2 = ceil_root(V_, ell2);
        std::uint64_t p = 1;
        for (std::uint32_t i = 0; i < factor; ++i) p *= b2;
        if (p != b_)
            throw IncompatibleBases("refine: b1 != b2^(ell2/ell1) (bases are not nested powers)");
        SubTokenCode out(ell2);
        for (std::uint32_t j = 0; j < ell_; ++j) {
            std::uint64_t v = code[j];
            if (v >= b_) throw InvalidCode("refine: digit >= b");
            for (std::uint32_t k = factor; k-- > 0;) {
                out[j * factor + k] = static_cast<std::uint32_t>(v % b2);
                v /= b2;
            }
        }
        return out;
    }

    bool operator==(const Subtokenizer& o) const {
        return V_ == o.V_ && ell_ == o.ell_ && perm_ == o.perm_;
    }

private:
    Subtokenizer(std::uint32_t V, std::uint32_t ell, std::vector<std::uint32_t> perm,
                 ShuffleStrategy strategy, std::optional<std::uint64_t> seed)
        : V_(V), ell_(ell), strategy_(strategy), seed_(seed), perm_(std::move(perm)) {
        if (V < 2) throw Error("build: V must be >= 2");
        if (ell < 1) throw Error("build: ell must be >= 1");
        if (ell > max_granularity(V))
            throw GranularityTooLarge("build: ell=" + std::to_string(ell) + " exceeds ceil(log2 V)=" +
                                      std::to_string(max_granularity(V)));
        b_ = ceil_root(V, ell);
        inv_perm_.assign(V, 0);
        std::vector<bool> seen(V, false);
        for (std::uint32_t i = 0; i < V; ++i) {
            const std::uint32_t p = perm_[i];
            if (p >= V || seen[p]) throw CorruptFile("perm is not a permutation of [0,V)");
            seen[p] = true;
            inv_perm_[p] = i;
        }
    }

    std::uint32_t V_;
    std::uint32_t ell_;
    std::uint32_t b_;
    ShuffleStrategy strategy_;
    std::optional<std::uint64_t> seed_;
    std::vector<std::uint32_t> perm_;
    std::vector<std::uint32_t> inv_perm_;

    friend Subtokenizer subtokenizer_from_parts(std::uint32_t, std::uint32_t,
                                                std::vector<std::uint32_t>, ShuffleStrategy,
                                                std::optional<std::uint64_t>);
};

/// Internal: reconstruct from persisted parts (invariants re-checked).
inline Subtokenizer subtokenizer_from_parts(std::uint32_t V, std::uint32_t ell,
                                            std::vector<std::uint32_t> perm,
                                            ShuffleStrategy strategy,
                                            std::optional<std::uint64_t> seed) {
    return Subtokenizer(V, ell, std::move(perm), strategy, seed);
}

/// FNV-1a 64-bit over the little-endian bytes of the perm table.
inline std::uint64_t fnv1a64_perm(const std::vector<std::uint32_t>& perm) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint32_t v : perm) {
        for (int k = 0; k < 4; ++k) {
            h ^= (v >> (8 * k)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace primelab
