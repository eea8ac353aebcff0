#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "primelab/error.hpp"

namespace primelab {

inline constexpr double kLn2 = 0.6931471805599453094;

inline double nats_to_bits(double nats) { return nats / kLn2; }
inline double bits_to_nats(double bits) { return bits * kLn2; }

/// Shannon entropy in nats; 0 log 0 = 0.
inline double entropy_nats(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

inline double entropy_bits(const std::vector<double>& p) { return nats_to_bits(entropy_nats(p)); }

/// Binary masking entropy h(a) = -(1-a)log(1-a) - a log a, in nats,
/// extended continuously with h(0)=h(1)=0.
inline double mask_entropy_nats(double a) {
    double h = 0.0;
    if (a > 0.0 && a < 1.0) h = -(1.0 - a) * std::log(1.0 - a) - a * std::log(a);
    return h;
}

namespace detail {

inline double gamma_p_series(double a, double x) {
    double sum = 1.0 / a, term = sum;
    for (int n = 1; n < 1000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    // Lentz's continued fraction for Q(a,x)
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 1000; ++i) {
        const double an = -static_cast<double>(i) * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw Error("gamma_p: invalid arguments");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_contfrac(a, x);
}

/// Upper tail of the chi-square distribution with dof degrees of freedom.
inline double chi_square_sf(double x, double dof) {
    return 1.0 - gamma_p(0.5 * dof, 0.5 * x);
}

/// Pearson chi-square goodness-of-fit: observed counts vs expected
/// probabilities. Returns the p-value (upper tail, dof = k-1).
inline double chi_square_test(const std::vector<std::uint64_t>& observed,
                              const std::vector<double>& expected_probs) {
    if (observed.size() != expected_probs.size() || observed.empty())
        throw Error("chi_square_test: size mismatch");
    std::uint64_t total = 0;
    for (auto o : observed) total += o;
    double stat = 0.0;
    std::size_t dof = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double e = expected_probs[i] * static_cast<double>(total);
        if (e <= 0.0) continue;
        const double d = static_cast<double>(observed[i]) - e;
        stat += d * d / e;
        ++dof;
    }
    if (dof < 2) throw Error("chi_square_test: not enough support");
    return chi_square_sf(stat, static_cast<double>(dof - 1));
}

}  // namespace primelab
