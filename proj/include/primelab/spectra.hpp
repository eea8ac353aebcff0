#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "primelab/error.hpp"

namespace primelab {

/// Row-major dense real matrix.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    static DenseMatrix zeros(std::size_t r, std::size_t c) {
        return {r, c, std::vector<double>(r * c, 0.0)};
    }

    double frobenius_sq() const {
        double s = 0.0;
        for (double v : data) s += v * v;
        return s;
    }
};

/// Singular values by one-sided Jacobi rotations on the columns,
/// descending. Accurate for the small matrices this library deals with.
inline std::vector<double> singular_values(const DenseMatrix& m, double tol = 1e-12) {
    if (m.rows == 0 || m.cols == 0) throw Error("singular_values: empty matrix");
    for (double v : m.data)
        if (!std::isfinite(v)) throw NonFinite("singular_values: non-finite entry");
    // work on A (or A^T so that rows >= cols)
    const bool transpose = m.rows < m.cols;
    const std::size_t rows = transpose ? m.cols : m.rows;
    const std::size_t cols = transpose ? m.rows : m.cols;
    std::vector<double> a(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            a[r * cols + c] = transpose ? m.at(c, r) : m.at(r, c);

    auto col_dot = [&](std::size_t p, std::size_t q) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += a[r * cols + p] * a[r * cols + q];
        return s;
    };

    for (int sweep = 0; sweep < 100; ++sweep) {
        bool converged = true;
        for (std::size_t p = 0; p + 1 < cols; ++p) {
            for (std::size_t q = p + 1; q < cols; ++q) {
                const double app = col_dot(p, p);
                const double aqq = col_dot(q, q);
                const double apq = col_dot(p, q);
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                converged = false;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double vp = a[r * cols + p];
                    const double vq = a[r * cols + q];
                    a[r * cols + p] = c * vp - s * vq;
                    a[r * cols + q] = s * vp + c * vq;
                }
            }
        }
        if (converged) break;
    }
    std::vector<double> sv(cols);
    for (std::size_t cidx = 0; cidx < cols; ++cidx) sv[cidx] = std::sqrt(col_dot(cidx, cidx));
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

/// Stable rank ||M||_F^2 / ||M||_2^2; scale-invariant, in
/// [1, min(rows, cols)].
inline double stable_rank(const DenseMatrix& m) {
    const double fro2 = m.frobenius_sq();
    if (fro2 == 0.0) throw ZeroMatrix("stable_rank: zero matrix");
    const auto sv = singular_values(m);
    return fro2 / (sv[0] * sv[0]);
}

}  // namespace primelab
