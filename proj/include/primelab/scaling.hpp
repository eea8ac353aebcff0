#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "primelab/error.hpp"

namespace primelab {

/// One (N, D, loss) observation: non-embedding parameters, training
/// tokens, final loss in nats.
struct ScalingPoint {
    double N = 0.0;
    double D = 0.0;
    double loss = 0.0;
};

/// Coefficients of L(N, D) = E + A*N^-alphaN + B*D^-betaD, plus the
/// derived compute-optimal allocation quantities of the power law.
/// alphaN/betaD are the fit exponents (renamed from the usual alpha/beta
/// to avoid the diffusion schedule's alpha).
struct ScalingFit {
    double E = 0.0;
    double A = 0.0;
    double B = 0.0;
    double alphaN = 0.0;
    double betaD = 0.0;
    double objective = 0.0;

    double a_hat() const { return betaD / (alphaN + betaD); }
    double b_hat() const { return alphaN / (alphaN + betaD); }
    double G() const {
        return std::pow(alphaN * A / (betaD * B), 1.0 / (alphaN + betaD));
    }
};

inline double predict_loss(const ScalingFit& f, double N, double D) {
    if (!(N > 0.0 && D > 0.0)) throw Error("predict_loss: N, D must be positive");
    return f.E + f.A * std::pow(N, -f.alphaN) + f.B * std::pow(D, -f.betaD);
}

struct Allocation {
    double N_opt = 0.0;
    double D_opt = 0.0;
};

/// Compute-optimal split of a budget C ~ 6*N*D.
inline Allocation optimal_allocation(const ScalingFit& f, double C) {
    if (!(C > 0.0)) throw Error("optimal_allocation: C must be positive");
    const double G = f.G();
    const double base = C / 6.0;
    return {G * std::pow(base, f.a_hat()), std::pow(base, f.b_hat()) / G};
}

namespace scaling_detail {

inline double huber(double r, double delta) {
    const double a = std::abs(r);
    return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

/// Parameter vector: (E, logA, logB, alphaN, betaD), natural logs.
struct Bounds {
    double e_lo, e_hi;
    static constexpr double kExpLo = 0.01;
    static constexpr double kExpHi = 2.0;
};

inline double objective(const std::array<double, 5>& p, const std::vector<ScalingPoint>& pts,
                        const Bounds& bounds, double delta) {
    const double E = p[0], A = std::exp(p[1]), B = std::exp(p[2]);
    const double aN = p[3], bD = p[4];
    // soft wall outside the admissible box keeps Nelder-Mead inside
    double penalty = 0.0;
    auto wall = [&](double v, double lo, double hi) {
        if (v < lo) penalty += 1e6 * (lo - v) * (lo - v) + 1e3;
        if (v > hi) penalty += 1e6 * (v - hi) * (v - hi) + 1e3;
    };
    wall(E, bounds.e_lo, bounds.e_hi);
    wall(aN, Bounds::kExpLo, Bounds::kExpHi);
    wall(bD, Bounds::kExpLo, Bounds::kExpHi);
    if (penalty > 0.0) return penalty + 1e6;
    double total = 0.0;
    for (const auto& pt : pts) {
        const double pred = E + A * std::pow(pt.N, -aN) + B * std::pow(pt.D, -bD);
        total += huber(std::log(pred) - std::log(pt.loss), delta);
    }
    return total;
}

/// Derivative-free Nelder-Mead on n=5 parameters; runs until the simplex
/// collapses or the iteration cap is hit.
inline std::array<double, 5> nelder_mead(std::array<double, 5> x0,
                                         const std::function<double(const std::array<double, 5>&)>& f,
                                         int max_iter = 4000, double tol = 1e-14) {
    constexpr int n = 5;
    std::array<std::array<double, 5>, n + 1> simplex;
    std::array<double, n + 1> fv;
    simplex[0] = x0;
    for (int i = 0; i < n; ++i) {
        simplex[i + 1] = x0;
        const double step = (x0[i] != 0.0) ? 0.05 * std::abs(x0[i]) : 0.00025;
        simplex[i + 1][i] += step;
    }
    for (int i = 0; i <= n; ++i) fv[i] = f(simplex[i]);

    for (int iter = 0; iter < max_iter; ++iter) {
        std::array<int, n + 1> order;
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return fv[a] < fv[b]; });
        {
            std::array<std::array<double, 5>, n + 1> s2;
            std::array<double, n + 1> f2;
            for (int i = 0; i <= n; ++i) {
                s2[i] = simplex[order[i]];
                f2[i] = fv[order[i]];
            }
            simplex = s2;
            fv = f2;
        }
        double spread = 0.0;
        for (int i = 0; i < n; ++i)
            spread = std::max(spread, std::abs(simplex[n][i] - simplex[0][i]));
        if (spread < tol && std::abs(fv[n] - fv[0]) < tol) break;

        std::array<double, 5> centroid{};
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) centroid[j] += simplex[i][j] / n;

        auto blend = [&](double coef) {
            std::array<double, 5> p;
            for (int j = 0; j < n; ++j)
                p[j] = centroid[j] + coef * (simplex[n][j] - centroid[j]);
            return p;
        };
        const auto xr = blend(-1.0);
        const double fr = f(xr);
        if (fr < fv[0]) {
            const auto xe = blend(-2.0);
            const double fe = f(xe);
            if (fe < fr) {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
        } else if (fr < fv[n - 1]) {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            const auto xc = blend(fr < fv[n] ? -0.5 : 0.5);
            const double fc = f(xc);
            if (fc < std::min(fr, fv[n])) {
                simplex[n] = xc;
                fv[n] = fc;
            } else {
                for (int i = 1; i <= n; ++i) {
                    for (int j = 0; j < n; ++j)
                        simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                    fv[i] = f(simplex[i]);
                }
            }
        }
    }
    std::array<double, 5> best = simplex[0];
    double fb = fv[0];
    for (int i = 1; i <= n; ++i)
        if (fv[i] < fb) {
            fb = fv[i];
            best = simplex[i];
        }
    return best;
}

}  // namespace scaling_detail

/// Fit the power-law loss estimator by Huber loss (delta = 1e-3) on log
/// residuals, multi-start Nelder-Mead over a fixed initialization grid.
/// Deterministic: the grid is fixed and the best objective wins (ties by
/// grid order).
inline ScalingFit fit_scaling(const std::vector<ScalingPoint>& points) {
    if (points.size() < 6) throw InsufficientData("fit: need at least 6 points");
    double n_lo = points[0].N, n_hi = points[0].N, d_lo = points[0].D, d_hi = points[0].D;
    double min_loss = points[0].loss;
    for (const auto& p : points) {
        if (!(p.N > 0 && p.D > 0 && p.loss > 0))
            throw InsufficientData("fit: N, D, loss must all be positive");
        n_lo = std::min(n_lo, p.N);
        n_hi = std::max(n_hi, p.N);
        d_lo = std::min(d_lo, p.D);
        d_hi = std::max(d_hi, p.D);
        min_loss = std::min(min_loss, p.loss);
    }
    if (n_hi / n_lo < 100.0 || d_hi / d_lo < 100.0)
        throw InsufficientData("fit: points must span at least 2 decades in N and D");

    const double delta = 1e-3;
    const scaling_detail::Bounds bounds{0.0, min_loss};
    auto obj = [&](const std::array<double, 5>& p) {
        return scaling_detail::objective(p, points, bounds, delta);
    };

    ScalingFit best;
    double best_obj = HUGE_VAL;
    const double exps[] = {0.2, 0.3, 0.4};
    const double logs[] = {2.0, 4.0, 6.0};
    const double efracs[] = {0.5, 0.9};
    for (double a0 : exps) {
        for (double b0 : exps) {
            for (double lab : logs) {
                for (double ef : efracs) {
                    std::array<double, 5> x0{ef * min_loss, lab, lab, a0, b0};
                    auto x = scaling_detail::nelder_mead(x0, obj);
                    // one restart from the found optimum polishes the simplex
                    x = scaling_detail::nelder_mead(x, obj);
                    const double fx = obj(x);
                    if (fx < best_obj) {
                        best_obj = fx;
                        best = ScalingFit{x[0], std::exp(x[1]), std::exp(x[2]), x[3], x[4], fx};
                    }
                }
            }
        }
    }
    const double tol = 1e-6;
    if (best.alphaN <= scaling_detail::Bounds::kExpLo + tol ||
        best.alphaN >= scaling_detail::Bounds::kExpHi - tol ||
        best.betaD <= scaling_detail::Bounds::kExpLo + tol ||
        best.betaD >= scaling_detail::Bounds::kExpHi - tol || best.E <= bounds.e_lo + tol ||
        best.E >= bounds.e_hi - tol)
        throw DegenerateFit("fit: a coefficient hit its bound");
    return best;
}

struct Exponents {
    double a_hat = 0.0;
    double b_hat = 0.0;
    double G = 0.0;
};

inline Exponents exponents(const ScalingFit& f) { return {f.a_hat(), f.b_hat(), f.G()}; }

}  // namespace primelab
