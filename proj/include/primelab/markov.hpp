#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "primelab/error.hpp"
#include "primelab/grid.hpp"
#include "primelab/kernels.hpp"
#include "primelab/oracle.hpp"
#include "primelab/rng.hpp"
#include "primelab/subtok.hpp"

namespace primelab {

/// First-order Markov chain over token ids; the synthetic data source for
/// the trainable-denoiser experiments. Exact per-cell Bayes posteriors are
/// available by forward-backward filtering, so instances far beyond the
/// joint-enumeration budget stay tractable.
class MarkovChain {
public:
    MarkovChain(std::vector<double> initial, std::vector<std::vector<double>> transition)
        : initial_(std::move(initial)), transition_(std::move(transition)) {
        const std::size_t V = initial_.size();
        if (V < 2 || transition_.size() != V) throw ShapeMismatch("MarkovChain: bad dimensions");
        for (const auto& row : transition_)
            if (row.size() != V) throw ShapeMismatch("MarkovChain: bad transition row");
    }

    /// Skewed synthetic chain: each row is a Zipf distribution rotated by
    /// the source state, giving strong dependence and a skewed marginal.
    static MarkovChain synthetic(std::uint32_t V, double zipf_exponent, double mix) {
        std::vector<double> base(V);
        double sum = 0.0;
        for (std::uint32_t i = 0; i < V; ++i) {
            base[i] = std::pow(static_cast<double>(i + 1), -zipf_exponent);
            sum += base[i];
        }
        for (auto& v : base) v /= sum;
        std::vector<std::vector<double>> T(V, std::vector<double>(V));
        for (std::uint32_t s = 0; s < V; ++s)
            for (std::uint32_t j = 0; j < V; ++j)
                T[s][j] = (1.0 - mix) * base[j] + mix * base[(j + s) % V];
        return MarkovChain(base, std::move(T));
    }

    std::uint32_t vocab_size() const { return static_cast<std::uint32_t>(initial_.size()); }
    const std::vector<double>& initial() const { return initial_; }
    const std::vector<std::vector<double>>& transition() const { return transition_; }

    std::vector<std::uint32_t> sample_sequence(std::uint32_t L, SplitMix64& rng) const {
        std::vector<std::uint32_t> seq(L);
        std::uint32_t prev = draw(initial_, rng);
        seq[0] = prev;
        for (std::uint32_t i = 1; i < L; ++i) {
            prev = draw(transition_[prev], rng);
            seq[i] = prev;
        }
        return seq;
    }

    double sequence_prob(const std::vector<std::uint32_t>& seq) const {
        double p = initial_[seq[0]];
        for (std::size_t i = 1; i < seq.size(); ++i) p *= transition_[seq[i - 1]][seq[i]];
        return p;
    }

    /// Explicit joint over V^L states (enumeration-budget permitting).
    TokenDist to_token_dist(std::uint32_t L, std::size_t budget = TokenDist::kDefaultBudget) const {
        const std::uint32_t V = vocab_size();
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < L; ++i) {
            n *= V;
            if (n > budget) throw BudgetExceeded("MarkovChain: V^L exceeds budget");
        }
        std::vector<double> probs(n);
        std::vector<std::uint32_t> seq(L);
        for (std::size_t s = 0; s < n; ++s) {
            std::size_t rem = s;
            for (std::uint32_t i = L; i-- > 0;) {
                seq[i] = static_cast<std::uint32_t>(rem % V);
                rem /= V;
            }
            probs[s] = sequence_prob(seq);
        }
        return TokenDist::from_probs(V, L, std::move(probs), budget);
    }

    /// Exact per-position token posteriors given a partially-masked
    /// sub-token grid, by forward-backward filtering with per-position
    /// compatibility masks.
    std::vector<std::vector<double>> token_posteriors(const SubTokenGrid& yt,
                                                      const Subtokenizer& st) const {
        const std::uint32_t V = vocab_size();
        const std::uint32_t L = yt.rows();
        const std::uint32_t ell = st.granularity();
        if (st.vocab_size() != V) throw ShapeMismatch("token_posteriors: vocab sizes differ");

        // compat[i][x] = 1 if token x agrees with every unmasked cell of row i
        std::vector<std::vector<double>> compat(L, std::vector<double>(V, 1.0));
        for (std::uint32_t x = 0; x < V; ++x) {
            const auto code = st.encode(x);
            for (std::uint32_t i = 0; i < L; ++i)
                for (std::uint32_t j = 0; j < ell; ++j)
                    if (!yt.masked(i, j) && yt.at(i, j) != static_cast<std::int32_t>(code[j]))
                        compat[i][x] = 0.0;
        }

        std::vector<std::vector<double>> fwd(L, std::vector<double>(V, 0.0));
        std::vector<std::vector<double>> bwd(L, std::vector<double>(V, 1.0));
        for (std::uint32_t x = 0; x < V; ++x) fwd[0][x] = initial_[x] * compat[0][x];
        for (std::uint32_t i = 1; i < L; ++i)
            for (std::uint32_t x = 0; x < V; ++x) {
                double acc = 0.0;
                for (std::uint32_t p = 0; p < V; ++p) acc += fwd[i - 1][p] * transition_[p][x];
                fwd[i][x] = acc * compat[i][x];
            }
        for (std::uint32_t i = L - 1; i-- > 0;)
            for (std::uint32_t x = 0; x < V; ++x) {
                double acc = 0.0;
                for (std::uint32_t nx = 0; nx < V; ++nx)
                    acc += transition_[x][nx] * compat[i + 1][nx] * bwd[i + 1][nx];
                bwd[i][x] = acc;
            }

        std::vector<std::vector<double>> post(L, std::vector<double>(V, 0.0));
        for (std::uint32_t i = 0; i < L; ++i) {
            double z = 0.0;
            for (std::uint32_t x = 0; x < V; ++x) {
                post[i][x] = fwd[i][x] * bwd[i][x];
                z += post[i][x];
            }
            if (z <= 0.0) throw Error("token_posteriors: observation has zero probability");
            for (auto& v : post[i]) v /= z;
        }
        return post;
    }

    /// Exact factorized Bayes posterior as a sampling/eval callable:
    /// per-cell marginals of the token posteriors (point masses on
    /// unmasked cells, by construction).
    PosteriorFn bayes_posterior(const Subtokenizer& st) const {
        return [this, st](const SubTokenGrid& yt) {
            const std::uint32_t ell = st.granularity();
            const std::uint32_t b = st.base();
            const auto tok_post = token_posteriors(yt, st);
            std::vector<std::vector<double>> out(static_cast<std::size_t>(yt.rows()) * ell,
                                                 std::vector<double>(b, 0.0));
            for (std::uint32_t i = 0; i < yt.rows(); ++i) {
                for (std::uint32_t x = 0; x < st.vocab_size(); ++x) {
                    const double p = tok_post[i][x];
                    if (p <= 0.0) continue;
                    const auto code = st.encode(x);
                    for (std::uint32_t j = 0; j < ell; ++j)
                        out[static_cast<std::size_t>(i) * ell + j][code[j]] += p;
                }
            }
            return out;
        };
    }

private:
    static std::uint32_t draw(const std::vector<double>& p, SplitMix64& rng) {
        const double u = rng.next_double();
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            acc += p[i];
            if (u < acc) return static_cast<std::uint32_t>(i);
        }
        return static_cast<std::uint32_t>(p.size() - 1);
    }

    std::vector<double> initial_;
    std::vector<std::vector<double>> transition_;
};

/// Exact factorized Bayes posterior for an enumerable joint distribution,
/// in the same callable form the sampler and evaluator consume.
inline PosteriorFn exact_posterior(const TokenDist& q, const Subtokenizer& st) {
    return [q, st](const SubTokenGrid& yt) {
        const std::uint32_t ell = st.granularity();
        const std::uint32_t b = st.base();
        const std::uint32_t L = yt.rows();
        std::vector<std::vector<double>> out(static_cast<std::size_t>(L) * ell,
                                             std::vector<double>(b, 0.0));
        std::vector<SubTokenCode> codes(q.V);
        for (std::uint32_t x = 0; x < q.V; ++x) codes[x] = st.encode(x);
        double z = 0.0;
        std::vector<double> weight(q.states(), 0.0);
        for (std::size_t s = 0; s < q.states(); ++s) {
            if (q.probs[s] <= 0.0) continue;
            const auto toks = q.tokens_of(s);
            bool compat = true;
            for (std::uint32_t i = 0; i < L && compat; ++i)
                for (std::uint32_t j = 0; j < ell; ++j)
                    if (!yt.masked(i, j) &&
                        yt.at(i, j) != static_cast<std::int32_t>(codes[toks[i]][j])) {
                        compat = false;
                        break;
                    }
            if (!compat) continue;
            weight[s] = q.probs[s];
            z += q.probs[s];
        }
        if (z <= 0.0) throw Error("exact_posterior: observation has zero probability");
        for (std::size_t s = 0; s < q.states(); ++s) {
            if (weight[s] <= 0.0) continue;
            const auto toks = q.tokens_of(s);
            const double p = weight[s] / z;
            for (std::uint32_t i = 0; i < L; ++i)
                for (std::uint32_t j = 0; j < ell; ++j)
                    out[static_cast<std::size_t>(i) * ell + j][codes[toks[i]][j]] += p;
        }
        return out;
    };
}

}  // namespace primelab
