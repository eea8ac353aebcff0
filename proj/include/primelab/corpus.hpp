#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "primelab/error.hpp"
#include "primelab/oracle.hpp"
#include "primelab/rng.hpp"
#include "primelab/stats.hpp"
#include "primelab/subtok.hpp"

namespace primelab {

/// Exact token-frequency histogram.
struct TokenCounts {
    std::uint32_t V = 0;
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;

    static TokenCounts zeros(std::uint32_t V) { return {V, std::vector<std::uint64_t>(V, 0), 0}; }

    void add(std::uint32_t token, std::uint64_t n = 1) {
        if (token >= V) throw TokenOutOfRange("count: token id " + std::to_string(token) + " >= V");
        counts[token] += n;
        total += n;
    }

    /// Exact merge of disjoint shards.
    void merge(const TokenCounts& other) {
        if (other.V != V) throw ShapeMismatch("merge: vocab sizes differ");
        for (std::uint32_t i = 0; i < V; ++i) counts[i] += other.counts[i];
        total += other.total;
    }

    std::vector<double> probs() const {
        if (total == 0) throw EmptyCounts("probs: total count is zero");
        std::vector<double> p(V);
        for (std::uint32_t i = 0; i < V; ++i)
            p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
        return p;
    }
};

/// Streaming histogram over an id iterator; reports the position of the
/// first out-of-range id.
template <typename It>
TokenCounts count_tokens(It begin, It end, std::uint32_t V) {
    TokenCounts c = TokenCounts::zeros(V);
    std::size_t pos = 0;
    for (It it = begin; it != end; ++it, ++pos) {
        const auto id = static_cast<std::uint64_t>(*it);
        if (id >= V)
            throw TokenOutOfRange("count_tokens: id " + std::to_string(id) + " >= V at position " +
                                  std::to_string(pos));
        c.counts[id] += 1;
        c.total += 1;
    }
    return c;
}

inline TokenCounts count_tokens(const std::vector<std::uint32_t>& ids, std::uint32_t V) {
    return count_tokens(ids.begin(), ids.end(), V);
}

/// Cumulative distribution over token indices.
inline std::vector<double> token_cdf(const TokenCounts& c) {
    if (c.total == 0) throw EmptyCounts("token_cdf: total count is zero");
    std::vector<double> cdf(c.V);
    std::uint64_t acc = 0;
    for (std::uint32_t i = 0; i < c.V; ++i) {
        acc += c.counts[i];
        cdf[i] = static_cast<double>(acc) / static_cast<double>(c.total);
    }
    return cdf;
}

struct SubtokenEntropies {
    std::vector<double> per_position;  // bits
    double average = 0.0;              // bits
};

/// Per-position sub-token entropies of the empirical token marginal under
/// a subtokenizer (the Table-1 quantity), in bits.
inline SubtokenEntropies subtoken_entropies(const TokenCounts& c, const Subtokenizer& st) {
    if (c.total == 0) throw EmptyCounts("subtoken_entropies: total count is zero");
    if (c.V != st.vocab_size()) throw ShapeMismatch("subtoken_entropies: vocab sizes differ");
    const std::uint32_t ell = st.granularity();
    const std::uint32_t b = st.base();
    std::vector<std::vector<double>> marg(ell, std::vector<double>(b, 0.0));
    const double inv_total = 1.0 / static_cast<double>(c.total);
    for (std::uint32_t x = 0; x < c.V; ++x) {
        if (c.counts[x] == 0) continue;
        const double p = static_cast<double>(c.counts[x]) * inv_total;
        // base-b digits of perm[x], MSB first
        std::uint64_t v = st.perm()[x];
        for (std::uint32_t j = ell; j-- > 0;) {
            marg[j][v % b] += p;
            v /= b;
        }
    }
    SubtokenEntropies out;
    out.per_position.reserve(ell);
    double sum = 0.0;
    for (std::uint32_t j = 0; j < ell; ++j) {
        const double h = entropy_bits(marg[j]);
        out.per_position.push_back(h);
        sum += h;
    }
    out.average = sum / ell;
    return out;
}

struct EntropyReportRow {
    std::string strategy;  // "identity", "random(seed)", "greedy", "maximum"
    double average_bits = 0.0;
};

/// Strategy comparison table: identity, random seeds, greedy, and the
/// analytic maximum log2 b.
inline std::vector<EntropyReportRow> entropy_report(const TokenCounts& c, std::uint32_t ell,
                                                    const std::vector<std::uint64_t>& seeds) {
    if (c.total == 0) throw EmptyCounts("entropy_report: total count is zero");
    std::vector<EntropyReportRow> rows;
    const auto ident = Subtokenizer::identity(c.V, ell);
    rows.push_back({"identity", subtoken_entropies(c, ident).average});
    for (auto seed : seeds) {
        const auto st = Subtokenizer::random(c.V, ell, seed);
        rows.push_back({"random(" + std::to_string(seed) + ")", subtoken_entropies(c, st).average});
    }
    const auto gr = Subtokenizer::greedy(c.V, ell, c.counts);
    rows.push_back({"greedy", subtoken_entropies(c, gr).average});
    rows.push_back({"maximum", std::log2(static_cast<double>(ident.base()))});
    return rows;
}

/// Synthetic Zipf(s) sampler over [0, V): p(i) proportional to (i+1)^-s.
class ZipfGenerator {
public:
    ZipfGenerator(std::uint32_t V, double exponent, std::uint64_t seed)
        : rng_(seed), cdf_(V) {
        double acc = 0.0;
        for (std::uint32_t i = 0; i < V; ++i) {
            acc += std::pow(static_cast<double>(i + 1), -exponent);
            cdf_[i] = acc;
        }
        for (auto& v : cdf_) v /= acc;
    }

    std::uint32_t next() {
        const double u = rng_.next_double();
        const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        return static_cast<std::uint32_t>(it - cdf_.begin());
    }

    TokenCounts counts(std::uint64_t n) {
        TokenCounts c = TokenCounts::zeros(static_cast<std::uint32_t>(cdf_.size()));
        for (std::uint64_t i = 0; i < n; ++i) {
            c.counts[next()] += 1;
            c.total += 1;
        }
        return c;
    }

    std::vector<double> probs() const {
        std::vector<double> p(cdf_.size());
        double prev = 0.0;
        for (std::size_t i = 0; i < cdf_.size(); ++i) {
            p[i] = cdf_[i] - prev;
            prev = cdf_[i];
        }
        return p;
    }

private:
    SplitMix64 rng_;
    std::vector<double> cdf_;
};

/// TSV frequency file: `token_id<TAB>count`, ids strictly increasing,
/// missing ids count zero.
inline TokenCounts parse_frequency_tsv(const std::string& text, std::uint32_t V) {
    TokenCounts c = TokenCounts::zeros(V);
    std::istringstream in(text);
    std::string line;
    std::int64_t prev = -1;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::uint64_t id = 0, count = 0;
        if (!(ls >> id >> count))
            throw CorruptFile("frequency file: bad line " + std::to_string(lineno));
        if (static_cast<std::int64_t>(id) <= prev)
            throw CorruptFile("frequency file: ids must be strictly increasing (line " +
                              std::to_string(lineno) + ")");
        prev = static_cast<std::int64_t>(id);
        if (id >= V) throw TokenOutOfRange("frequency file: id >= V");
        c.counts[id] = count;
        c.total += count;
    }
    return c;
}

inline std::string frequency_tsv(const TokenCounts& c) {
    std::ostringstream out;
    for (std::uint32_t i = 0; i < c.V; ++i)
        if (c.counts[i] != 0) out << i << '\t' << c.counts[i] << '\n';
    return out.str();
}

/// Newline-delimited decimal id stream.
inline std::vector<std::uint32_t> parse_id_stream(const std::string& text) {
    std::vector<std::uint32_t> ids;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) ids.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
    return ids;
}

}  // namespace primelab
