#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "primelab/grid.hpp"
#include "primelab/rng.hpp"
#include "primelab/schedule.hpp"
#include "primelab/subtok.hpp"

namespace primelab {

/// Per-cell categorical over [0,b), row-major over (row, col).
/// The contract: for unmasked cells of the conditioning grid, the
/// distribution must be the point mass on the observed value.
using PosteriorFn = std::function<std::vector<std::vector<double>>(const SubTokenGrid&)>;

namespace detail {
// Distinct salts so that the mask draw, the posterior draw and the unmask
// draw at the same (step, cell) never share a substream.
inline constexpr std::uint64_t kSaltMask = 0x6d61736bULL;
inline constexpr std::uint64_t kSaltUnmask = 0x756e6d61ULL;
inline constexpr std::uint64_t kSaltDraw = 0x64726177ULL;

inline double cell_uniform(std::uint64_t seed, std::uint64_t salt, std::uint64_t step,
                           std::uint64_t row, std::uint64_t col) {
    SplitMix64 rng(substream_key(seed ^ salt, step, row, col));
    return rng.next_double();
}
}  // namespace detail

/// Forward masking kernel: each cell independently becomes MASK with
/// probability 1 - alpha(t).
inline SubTokenGrid forward_mask(const SubTokenGrid& y0, const Schedule& s, double t,
                                 std::uint64_t seed) {
    if (!y0.mask_free()) throw Error("forward_mask: y0 must be mask-free");
    const double a = s.value(t);
    SubTokenGrid out = y0;
    for (std::uint32_t i = 0; i < y0.rows(); ++i)
        for (std::uint32_t j = 0; j < y0.cols(); ++j)
            if (detail::cell_uniform(seed, detail::kSaltMask, 0, i, j) >= a) out.at(i, j) = kMask;
    return out;
}

/// One reverse (unmasking) step from time t_time to s_time < t_time.
/// Unmasked cells are copied; each masked cell takes y0_draw's value with
/// probability (alpha_s - alpha_t) / (1 - alpha_t).
inline SubTokenGrid reverse_step(const SubTokenGrid& yt, const SubTokenGrid& y0_draw,
                                 const Schedule& s, double s_time, double t_time,
                                 std::uint64_t seed, std::uint64_t step = 0) {
    if (!(s_time < t_time)) throw TimeOrderError("reverse_step: s_time must be < t_time");
    if (yt.rows() != y0_draw.rows() || yt.cols() != y0_draw.cols())
        throw ShapeMismatch("reverse_step: grid shapes differ");
    if (!y0_draw.mask_free()) throw Error("reverse_step: y0_draw must be mask-free");
    const double as = s.value(s_time);
    const double at = s.value(t_time);
    const double p_unmask = (1.0 - at > 0.0) ? (as - at) / (1.0 - at) : 1.0;
    SubTokenGrid out = yt;
    for (std::uint32_t i = 0; i < yt.rows(); ++i) {
        for (std::uint32_t j = 0; j < yt.cols(); ++j) {
            if (!yt.masked(i, j)) {
                if (y0_draw.at(i, j) != yt.at(i, j))
                    throw CarryOverViolation("reverse_step: y0_draw contradicts unmasked cell");
                continue;
            }
            if (detail::cell_uniform(seed, detail::kSaltUnmask, step, i, j) < p_unmask)
                out.at(i, j) = y0_draw.at(i, j);
        }
    }
    return out;
}

namespace detail {
/// Draw a mask-free grid from per-cell categoricals, keeping observed cells.
inline SubTokenGrid draw_y0(const SubTokenGrid& yt, const std::vector<std::vector<double>>& probs,
                            std::uint32_t b, std::uint64_t seed, std::uint64_t step) {
    if (probs.size() != yt.size())
        throw PosteriorShapeError("posterior emitted wrong number of cells");
    SubTokenGrid y0 = yt;
    std::size_t k = 0;
    for (std::uint32_t i = 0; i < yt.rows(); ++i) {
        for (std::uint32_t j = 0; j < yt.cols(); ++j, ++k) {
            if (probs[k].size() != b)
                throw PosteriorShapeError("posterior cell distribution has wrong arity");
            if (!yt.masked(i, j)) continue;
            const double u = cell_uniform(seed, kSaltDraw, step, i, j);
            double acc = 0.0;
            std::uint32_t v = b - 1;
            for (std::uint32_t c = 0; c < b; ++c) {
                acc += probs[k][c];
                if (u < acc) {
                    v = c;
                    break;
                }
            }
            y0.at(i, j) = static_cast<std::int32_t>(v);
        }
    }
    return y0;
}
}  // namespace detail

/// Ancestral sampling: start all-MASK at t=1, take K uniform reverse steps,
/// decode each row to a token. Rows decoding to an unused code are
/// redrawn from the posterior up to 16 times, then resolved by the valid
/// code with maximal product of per-cell probabilities.
inline std::vector<std::uint32_t> sample(const PosteriorFn& posterior, const Subtokenizer& st,
                                         std::uint32_t L, std::uint32_t K, const Schedule& s,
                                         std::uint64_t seed) {
    if (K < 1) throw Error("sample: K must be >= 1");
    const std::uint32_t ell = st.granularity();
    const std::uint32_t b = st.base();
    SubTokenGrid yt(L, ell, kMask);
    std::vector<std::vector<double>> last_probs;
    SubTokenGrid pre_final = yt;
    for (std::uint32_t k = 1; k <= K; ++k) {
        const double t_time = 1.0 - static_cast<double>(k - 1) / K;
        const double s_time = 1.0 - static_cast<double>(k) / K;
        last_probs = posterior(yt);
        pre_final = yt;
        const SubTokenGrid y0 = detail::draw_y0(yt, last_probs, b, seed, k);
        yt = reverse_step(yt, y0, s, s_time, t_time, seed, k);
    }
    // after the final step (alpha_s = 1) every cell is unmasked
    std::vector<std::uint32_t> tokens(L);
    for (std::uint32_t i = 0; i < L; ++i) {
        SubTokenCode code(ell);
        for (std::uint32_t j = 0; j < ell; ++j)
            code[j] = static_cast<std::uint32_t>(yt.at(i, j));
        bool ok = false;
        for (int attempt = 0; attempt <= 16 && !ok; ++attempt) {
            try {
                tokens[i] = st.decode(code);
                ok = true;
            } catch (const InvalidCode&) {
                if (attempt == 16) break;
                // redraw this row's previously-masked cells from the posterior
                for (std::uint32_t j = 0; j < ell; ++j) {
                    if (!pre_final.masked(i, j)) continue;
                    const double u = detail::cell_uniform(
                        seed, detail::kSaltDraw, K + 1 + static_cast<std::uint64_t>(attempt), i, j);
                    const auto& p = last_probs[static_cast<std::size_t>(i) * ell + j];
                    double acc = 0.0;
                    std::uint32_t v = b - 1;
                    for (std::uint32_t c = 0; c < b; ++c) {
                        acc += p[c];
                        if (u < acc) {
                            v = c;
                            break;
                        }
                    }
                    code[j] = v;
                }
            }
        }
        if (!ok) {
            // restricted argmax: best valid code under the product of
            // per-cell probabilities, honoring already-unmasked cells
            double best = -1.0;
            std::uint32_t best_tok = 0;
            bool found = false;
            for (std::uint32_t x = 0; x < st.vocab_size(); ++x) {
                const auto cand = st.encode(x);
                bool compat = true;
                double prod = 1.0;
                for (std::uint32_t j = 0; j < ell; ++j) {
                    if (!pre_final.masked(i, j) &&
                        pre_final.at(i, j) != static_cast<std::int32_t>(cand[j])) {
                        compat = false;
                        break;
                    }
                    prod *= last_probs[static_cast<std::size_t>(i) * ell + j][cand[j]];
                }
                if (compat && prod > best) {
                    best = prod;
                    best_tok = x;
                    found = true;
                }
            }
            if (!found) {
                // no valid code is compatible with the unmasked cells;
                // fall back to the unconstrained argmax
                for (std::uint32_t x = 0; x < st.vocab_size(); ++x) {
                    const auto cand = st.encode(x);
                    double prod = 1.0;
                    for (std::uint32_t j = 0; j < ell; ++j)
                        prod *= last_probs[static_cast<std::size_t>(i) * ell + j][cand[j]];
                    if (prod > best) {
                        best = prod;
                        best_tok = x;
                    }
                }
            }
            tokens[i] = best_tok;
        }
    }
    return tokens;
}

}  // namespace primelab
