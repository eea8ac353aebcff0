#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "primelab/error.hpp"

namespace primelab {

/// Gauss-Legendre rule mapped to (0,1). All nodes are strictly interior,
/// so integrands with endpoint singularities are never evaluated there.
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;

    explicit GaussLegendre(std::size_t n = 64) {
        if (n == 0) throw Error("quadrature: n must be >= 1");
        nodes.resize(n);
        weights.resize(n);
        // roots of P_n by Newton iteration from the Chebyshev estimate
        for (std::size_t i = 0; i < n; ++i) {
            double x = std::cos(M_PI * (static_cast<double>(i) + 0.75) /
                                (static_cast<double>(n) + 0.5));
            double dp = 0.0;
            for (int iter = 0; iter < 100; ++iter) {
                double p0 = 1.0, p1 = x;
                for (std::size_t k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            nodes[n - 1 - i] = 0.5 * (x + 1.0);
            weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
        }
    }

    template <typename F>
    double integrate(F&& f) const {
        // pairwise summation for a reproducible, order-independent total
        std::vector<double> terms(nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) terms[i] = weights[i] * f(nodes[i]);
        return pairwise_sum(terms, 0, terms.size());
    }

    static double pairwise_sum(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
        if (hi - lo <= 4) {
            double s = 0.0;
            for (std::size_t i = lo; i < hi; ++i) s += v[i];
            return s;
        }
        const std::size_t mid = lo + (hi - lo) / 2;
        return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
    }
};

}  // namespace primelab
