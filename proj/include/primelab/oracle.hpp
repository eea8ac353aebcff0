#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "primelab/error.hpp"
#include "primelab/grid.hpp"
#include "primelab/quadrature.hpp"
#include "primelab/schedule.hpp"
#include "primelab/stats.hpp"
#include "primelab/subtok.hpp"

namespace primelab {

/// Explicit joint categorical over token sequences of length L: probs has
/// V^L entries indexed lexicographically (first token is the most
/// significant position).
struct TokenDist {
    std::uint32_t V = 0;
    std::uint32_t L = 0;
    std::vector<double> probs;

    static TokenDist from_probs(std::uint32_t V, std::uint32_t L, std::vector<double> probs,
                                std::size_t budget = kDefaultBudget) {
        TokenDist q{V, L, std::move(probs)};
        q.validate(budget);
        return q;
    }

    /// Product distribution from a single-token marginal.
    static TokenDist product(const std::vector<double>& marginal, std::uint32_t L,
                             std::size_t budget = kDefaultBudget) {
        const auto V = static_cast<std::uint32_t>(marginal.size());
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < L; ++i) n *= V;
        std::vector<double> probs(n, 1.0);
        for (std::size_t s = 0; s < n; ++s) {
            std::size_t rem = s;
            for (std::uint32_t i = 0; i < L; ++i) {
                probs[s] *= marginal[rem % V];
                rem /= V;
            }
        }
        return from_probs(V, L, std::move(probs), budget);
    }

    static constexpr std::size_t kDefaultBudget = 4096;

    std::size_t states() const { return probs.size(); }

    void validate(std::size_t budget) const {
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < L; ++i) {
            n *= V;
            if (n > budget) throw BudgetExceeded("TokenDist: V^L exceeds enumeration budget");
        }
        if (probs.size() != n) throw Error("TokenDist: probs size != V^L");
        double sum = 0.0;
        for (double p : probs) {
            if (p < 0.0) throw NotNormalized("TokenDist: negative probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12) throw NotNormalized("TokenDist: probabilities sum != 1");
    }

    std::vector<std::uint32_t> tokens_of(std::size_t state) const {
        std::vector<std::uint32_t> t(L);
        for (std::uint32_t i = L; i-- > 0;) {
            t[i] = static_cast<std::uint32_t>(state % V);
            state /= V;
        }
        return t;
    }

    double entropy_nats() const { return primelab::entropy_nats(probs); }
};

/// Gauss-Legendre quadrature in the substituted variable s = alpha_t.
struct Quadrature {
    GaussLegendre rule;
    explicit Quadrature(std::size_t n = 64) : rule(n) {}
};

namespace oracle_detail {

/// Precomputed sub-token codes for every joint token state.
struct CodeTable {
    std::uint32_t n_cells;  // L * ell
    std::uint32_t b;
    std::uint32_t bits;  // bits per cell in the observation key
    std::vector<std::vector<std::uint8_t>> codes;  // per state, n_cells digits

    CodeTable(const TokenDist& q, const Subtokenizer& st) {
        if (q.V != st.vocab_size()) throw Error("oracle: TokenDist V != subtokenizer V");
        b = st.base();
        const std::uint32_t ell = st.granularity();
        n_cells = q.L * ell;
        bits = 1;
        while ((1u << bits) < b + 1u) ++bits;
        if (static_cast<std::uint64_t>(bits) * n_cells > 63)
            throw BudgetExceeded("oracle: grid state does not fit the observation key");
        std::vector<std::vector<std::uint8_t>> token_code(q.V);
        for (std::uint32_t x = 0; x < q.V; ++x) {
            const auto c = st.encode(x);
            token_code[x].assign(c.begin(), c.end());
        }
        codes.resize(q.states());
        for (std::size_t s = 0; s < q.states(); ++s) {
            const auto toks = q.tokens_of(s);
            auto& row = codes[s];
            row.reserve(n_cells);
            for (auto t : toks)
                row.insert(row.end(), token_code[t].begin(), token_code[t].end());
        }
    }

    /// Key of the observation (digits with masked cells replaced by b).
    std::uint64_t obs_key(std::size_t state, std::uint32_t mask_bits) const {
        std::uint64_t key = 0;
        const auto& row = codes[state];
        for (std::uint32_t c = 0; c < n_cells; ++c) {
            const std::uint64_t v = (mask_bits >> c) & 1u ? b : row[c];
            key = (key << bits) | v;
        }
        return key;
    }
};

inline double pattern_prob(double survive, std::uint32_t mask_bits, std::uint32_t n_cells) {
    const auto m = static_cast<std::uint32_t>(std::popcount(mask_bits));
    return std::pow(1.0 - survive, m) * std::pow(survive, n_cells - m);
}

/// Exact posterior cross-entropy CE(s) = E[-log q(y0 | yt)] in nats, with
/// per-cell survival probability s.
inline double cross_entropy(const TokenDist& q, const CodeTable& ct, double s) {
    const std::uint32_t n = ct.n_cells;
    double total = 0.0;
    std::unordered_map<std::uint64_t, double> z;
    for (std::uint32_t m = 0; m < (1u << n); ++m) {
        const double pm = pattern_prob(s, m, n);
        if (pm <= 0.0) continue;
        z.clear();
        for (std::size_t x = 0; x < q.states(); ++x)
            if (q.probs[x] > 0.0) z[ct.obs_key(x, m)] += q.probs[x];
        for (std::size_t x = 0; x < q.states(); ++x) {
            const double px = q.probs[x];
            if (px <= 0.0) continue;
            total += pm * px * (std::log(z[ct.obs_key(x, m)]) - std::log(px));
        }
    }
    return total;
}

/// Exact marginal distribution of yt at survival probability s, keyed by
/// observation; returns its entropy in nats.
inline double yt_entropy_nats(const TokenDist& q, const CodeTable& ct, double s) {
    const std::uint32_t n = ct.n_cells;
    std::unordered_map<std::uint64_t, double> dist;
    for (std::uint32_t m = 0; m < (1u << n); ++m) {
        const double pm = pattern_prob(s, m, n);
        if (pm <= 0.0) continue;
        for (std::size_t x = 0; x < q.states(); ++x)
            if (q.probs[x] > 0.0) dist[ct.obs_key(x, m)] += pm * q.probs[x];
    }
    double h = 0.0;
    for (const auto& [key, p] : dist)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

}  // namespace oracle_detail

/// Exact entropy of the masked latent y_t, in bits.
inline double entropy_yt(const TokenDist& q, const Subtokenizer& st, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw TimeOutOfRange("entropy_yt: alpha outside [0,1]");
    oracle_detail::CodeTable ct(q, st);
    return nats_to_bits(oracle_detail::yt_entropy_nats(q, ct, alpha));
}

/// Upper bound on H(y_t): L*ell*(h(alpha) + alpha*log2 b), in bits.
inline double entropy_bound(std::uint32_t L, std::uint32_t ell, std::uint32_t b, double alpha) {
    const double h_bits = nats_to_bits(mask_entropy_nats(alpha));
    return static_cast<double>(L) * ell * (h_bits + alpha * std::log2(static_cast<double>(b)));
}

struct NelboResult {
    double value = 0.0;               // nats
    double route_decomposition = 0.0; // entropy-decomposition route
    double route_posterior = 0.0;     // Bayes-posterior route
};

/// Optimal (Bayes-posterior) NELBO, computed by two independent routes
/// that must agree: the entropy decomposition and the posterior
/// cross-entropy. Both integrals run in the substituted variable s.
inline NelboResult optimal_nelbo(const TokenDist& q, const Subtokenizer& st,
                                 const Quadrature& quad) {
    oracle_detail::CodeTable ct(q, st);
    const double h_y0 = q.entropy_nats();
    const double n_cells = static_cast<double>(ct.n_cells);
    const double route_b = quad.rule.integrate([&](double s) {
        return oracle_detail::cross_entropy(q, ct, s) / (1.0 - s);
    });
    const double route_a = quad.rule.integrate([&](double s) {
        const double joint = h_y0 + n_cells * mask_entropy_nats(s);
        return (joint - oracle_detail::yt_entropy_nats(q, ct, s)) / (1.0 - s);
    });
    if (std::abs(route_a - route_b) > 1e-6)
        throw RouteMismatch("optimal_nelbo: decomposition and posterior routes disagree");
    return {route_b, route_a, route_b};
}

/// Coarsening map g: each group of ltilde cells maps through the inverse
/// subtokenizer if fully unmasked, else to MASK. With ltilde = ell the
/// result is the token grid.
inline SubTokenGrid coarsen(const SubTokenGrid& yt, const Subtokenizer& st, std::uint32_t ltilde) {
    const std::uint32_t ell = st.granularity();
    if (ltilde == 0 || ell % ltilde != 0) throw IncompatibleBases("coarsen: ltilde must divide ell");
    if (yt.cols() != ell) throw ShapeMismatch("coarsen: grid cols != ell");
    const std::uint32_t ell2 = ell / ltilde;
    const std::uint32_t b = st.base();
    if (ell2 > 0 && ltilde < ell) {
        // intermediate granularity requires nested power bases
        const std::uint32_t b2 = ceil_root(st.vocab_size(), ell2);
        std::uint64_t p = 1;
        for (std::uint32_t i = 0; i < ltilde; ++i) p *= b;
        if (p != b2) throw IncompatibleBases("coarsen: bases are not nested powers");
    }
    SubTokenGrid out(yt.rows(), ell2 == 0 ? 1 : ell2, kMask);
    for (std::uint32_t i = 0; i < yt.rows(); ++i) {
        for (std::uint32_t g = 0; g < ell / ltilde; ++g) {
            bool all_unmasked = true;
            for (std::uint32_t k = 0; k < ltilde; ++k)
                if (yt.masked(i, g * ltilde + k)) all_unmasked = false;
            if (!all_unmasked) continue;
            if (ltilde == ell) {
                SubTokenCode code(ell);
                for (std::uint32_t k = 0; k < ell; ++k)
                    code[k] = static_cast<std::uint32_t>(yt.at(i, k));
                out.at(i, 0) = static_cast<std::int32_t>(st.decode(code));
            } else {
                std::uint64_t v = 0;
                for (std::uint32_t k = 0; k < ltilde; ++k)
                    v = v * b + static_cast<std::uint64_t>(yt.at(i, g * ltilde + k));
                out.at(i, g) = static_cast<std::int32_t>(v);
            }
        }
    }
    return out;
}

/// F(x0, xt): x0 is a token sequence, xt the partially-masked sequence
/// (kMask entries for masked positions).
using ExpectationFn =
    std::function<double(const std::vector<std::uint32_t>&, const std::vector<std::int32_t>&)>;

struct PairResult {
    double lhs = 0.0;
    double rhs = 0.0;
};

/// Transport identity: E_{q_alpha(x0,xt)}[F] over token-level masking equals
/// E_{q_alphatilde(y0,yt)}[F(f^-1(y0), g(yt))] over sub-token masking with
/// alphatilde = alpha^(1/ell). Linear base schedule.
inline PairResult transport_check(const TokenDist& q, const Subtokenizer& st, const ExpectationFn& F,
                                 double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw TimeOutOfRange("transport_check: t outside [0,1]");
    const double alpha = 1.0 - t;
    const std::uint32_t L = q.L;
    const std::uint32_t ell = st.granularity();
    oracle_detail::CodeTable ct(q, st);

    double lhs = 0.0;
    for (std::uint32_t m = 0; m < (1u << L); ++m) {
        const double pm = oracle_detail::pattern_prob(alpha, m, L);
        if (pm <= 0.0) continue;
        for (std::size_t x = 0; x < q.states(); ++x) {
            if (q.probs[x] <= 0.0) continue;
            const auto toks = q.tokens_of(x);
            std::vector<std::int32_t> xt(L);
            for (std::uint32_t i = 0; i < L; ++i)
                xt[i] = (m >> i) & 1u ? kMask : static_cast<std::int32_t>(toks[i]);
            lhs += pm * q.probs[x] * F(toks, xt);
        }
    }

    const double atilde = std::pow(alpha, 1.0 / static_cast<double>(ell));
    const std::uint32_t n = ct.n_cells;
    double rhs = 0.0;
    for (std::uint32_t m = 0; m < (1u << n); ++m) {
        const double pm = oracle_detail::pattern_prob(atilde, m, n);
        if (pm <= 0.0) continue;
        for (std::size_t x = 0; x < q.states(); ++x) {
            if (q.probs[x] <= 0.0) continue;
            const auto toks = q.tokens_of(x);
            // g coarsens each token group: unmasked iff all its cells are
            std::vector<std::int32_t> xt(L);
            for (std::uint32_t i = 0; i < L; ++i) {
                bool full = true;
                for (std::uint32_t j = 0; j < ell; ++j)
                    if ((m >> (i * ell + j)) & 1u) full = false;
                xt[i] = full ? static_cast<std::int32_t>(toks[i]) : kMask;
            }
            rhs += pm * q.probs[x] * F(toks, xt);
        }
    }
    return {lhs, rhs};
}

/// Time-change identity: I(alpha) = integral of alpha'/(1-alpha) F(alpha) dt is
/// invariant across schedules, each evaluated in its native t variable.
inline PairResult time_change_check(const std::function<double(double)>& F, const Schedule& s1,
                                 const Schedule& s2, const Quadrature& quad) {
    auto eval = [&](const Schedule& s) {
        return quad.rule.integrate([&](double t) {
            const auto [a, da] = s.alpha(t);
            return da / (1.0 - a) * F(a);
        });
    };
    return {eval(s1), eval(s2)};
}

/// Expected KL gap of the Theorem's equality condition:
/// E_{q_alphatilde(yt)}[ KL(q(y0|yt) || q(y0|g_ltilde(yt))) ] at time t
/// under the linear base schedule. Zero iff coarsening loses nothing.
inline double kl_equality_gap(const TokenDist& q, const Subtokenizer& st, std::uint32_t ltilde,
                              double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw TimeOutOfRange("kl_equality_gap: t outside [0,1]");
    const std::uint32_t ell = st.granularity();
    if (ltilde == 0 || ell % ltilde != 0)
        throw IncompatibleBases("kl_equality_gap: ltilde must divide ell");
    oracle_detail::CodeTable ct(q, st);
    const double alpha = 1.0 - t;
    const double atilde = std::pow(alpha, 1.0 / static_cast<double>(ltilde));
    const std::uint32_t n = ct.n_cells;

    // coarse observation: a group is visible iff all its cells are
    auto coarse_mask = [&](std::uint32_t m) {
        std::uint32_t cm = 0;
        const std::uint32_t groups = n / ltilde;
        for (std::uint32_t g = 0; g < groups; ++g) {
            for (std::uint32_t k = 0; k < ltilde; ++k)
                if ((m >> (g * ltilde + k)) & 1u) {
                    cm |= (((1u << ltilde) - 1u) << (g * ltilde));
                    break;
                }
        }
        return cm;
    };

    // Expected KL between the fine and coarse posteriors over the cells
    // masked in the fine observation. Cells the coarsening hides but the
    // fine observation reveals are marginalized out of the coarse
    // posterior: the loss only ever scores fine-masked cells, and this
    // restriction is what makes the gap vanish exactly on product-uniform
    // data (any partial group still pins down its own visible cells).
    double gap = 0.0;
    std::unordered_map<std::uint64_t, double> z_fine, z_coarse, z_num;
    for (std::uint32_t m = 0; m < (1u << n); ++m) {
        const double pm = oracle_detail::pattern_prob(atilde, m, n);
        if (pm <= 0.0) continue;
        const std::uint32_t cm = coarse_mask(m);
        const std::uint32_t freed = cm & ~m;  // coarse-hidden but fine-visible
        z_fine.clear();
        z_coarse.clear();
        z_num.clear();
        for (std::size_t x = 0; x < q.states(); ++x) {
            if (q.probs[x] <= 0.0) continue;
            z_fine[ct.obs_key(x, m)] += q.probs[x];
            z_coarse[ct.obs_key(x, cm)] += q.probs[x];
            z_num[ct.obs_key(x, freed)] += q.probs[x];
        }
        // E over (x, m) of log( fine_marginal(x_masked) / coarse_marginal(x_masked) )
        for (std::size_t x = 0; x < q.states(); ++x) {
            const double px = q.probs[x];
            if (px <= 0.0) continue;
            const double fine = px / z_fine[ct.obs_key(x, m)];
            const double coarse = z_num[ct.obs_key(x, freed)] / z_coarse[ct.obs_key(x, cm)];
            gap += pm * px * (std::log(fine) - std::log(coarse));
        }
    }
    return gap;
}

/// Unweighted per-time expected log posterior E[log q(y0 | yt)] (nats,
/// all values <= 0), linear schedule.
inline std::vector<double> loglik_profile(const TokenDist& q, const Subtokenizer& st,
                                          const std::vector<double>& t_grid) {
    oracle_detail::CodeTable ct(q, st);
    std::vector<double> out;
    out.reserve(t_grid.size());
    for (double t : t_grid) {
        if (!(t >= 0.0 && t <= 1.0)) throw TimeOutOfRange("loglik_profile: t outside [0,1]");
        out.push_back(-oracle_detail::cross_entropy(q, ct, 1.0 - t));
    }
    return out;
}

/// Marginalize a joint over a token group's codes (size b^ltilde) into
/// ltilde per-position categoricals over [0,b).
inline std::vector<std::vector<double>> marginalize_group(const std::vector<double>& joint,
                                                          std::uint32_t b, std::uint32_t ltilde) {
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < ltilde; ++i) n *= b;
    if (joint.size() != n) throw ShapeMismatch("marginalize_group: joint size != b^ltilde");
    double sum = 0.0;
    for (double p : joint) sum += p;
    if (std::abs(sum - 1.0) > 1e-12) throw NotNormalized("marginalize_group: joint sum != 1");
    std::vector<std::vector<double>> marg(ltilde, std::vector<double>(b, 0.0));
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t rem = c;
        for (std::uint32_t j = ltilde; j-- > 0;) {
            marg[j][rem % b] += joint[c];
            rem /= b;
        }
    }
    return marg;
}

struct AssignmentResult {
    std::vector<std::uint32_t> perm;
    double avg_entropy_bits = 0.0;
};

/// Exhaustive search over all V! index assignments for the permutation
/// maximizing the summed per-position sub-token entropy. Ties go to the
/// lexicographically smallest perm.
inline AssignmentResult best_assignment_bruteforce(const std::vector<double>& probs,
                                                   std::uint32_t ell) {
    const auto V = static_cast<std::uint32_t>(probs.size());
    if (V > 10) throw BudgetExceeded("best_assignment_bruteforce: V > 10");
    if (V < 2) throw Error("best_assignment_bruteforce: V must be >= 2");
    const std::uint32_t b = ceil_root(V, ell);
    std::vector<std::vector<std::uint8_t>> digit(V, std::vector<std::uint8_t>(ell));
    for (std::uint32_t v = 0; v < V; ++v) {
        std::uint64_t x = v;
        for (std::uint32_t j = ell; j-- > 0;) {
            digit[v][j] = static_cast<std::uint8_t>(x % b);
            x /= b;
        }
    }
    std::vector<std::uint32_t> perm(V);
    std::iota(perm.begin(), perm.end(), 0u);
    AssignmentResult best;
    double best_total = -1.0;
    do {
        std::vector<std::vector<double>> marg(ell, std::vector<double>(b, 0.0));
        for (std::uint32_t x = 0; x < V; ++x)
            for (std::uint32_t j = 0; j < ell; ++j) marg[j][digit[perm[x]][j]] += probs[x];
        double total = 0.0;
        for (std::uint32_t j = 0; j < ell; ++j) total += entropy_bits(marg[j]);
        // strict improvement keeps the lexicographically smallest perm on ties
        if (total > best_total) {
            best_total = total;
            best.perm = perm;
            best.avg_entropy_bits = total / ell;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace primelab
