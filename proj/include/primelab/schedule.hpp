#pragma once

#include <cmath>
#include <memory>
#include <utility>

#include "primelab/error.hpp"

namespace primelab {

/// Masking schedule alpha: [0,1] -> [0,1], strictly decreasing with
/// alpha(0)=1 and alpha(1)=0. alpha(t) is the per-position survival
/// probability; w(t) = alpha'/(alpha-1) is the loss weight.
class Schedule {
public:
    static Schedule linear() { return Schedule(Kind::Linear, 1.0, nullptr, 0); }

    static Schedule power(double k) {
        if (!(k > 0)) throw Error("power schedule requires k > 0");
        return Schedule(Kind::Power, k, nullptr, 0);
    }

    /// alpha_tilde(t) = base(t)^(1/root), the substituted schedule of the
    /// granularity-change argument.
    static Schedule root_substituted(Schedule base, unsigned root) {
        if (root == 0) throw Error("root_substituted requires root >= 1");
        return Schedule(Kind::Root, 0.0, std::make_shared<Schedule>(std::move(base)), root);
    }

    /// Returns (alpha(t), alpha'(t)).
    std::pair<double, double> alpha(double t) const {
        if (!(t >= 0.0 && t <= 1.0)) throw TimeOutOfRange("schedule: t outside [0,1]");
        switch (kind_) {
            case Kind::Linear:
                return {1.0 - t, -1.0};
            case Kind::Power: {
                const double a = std::pow(1.0 - t, k_);
                const double da = (t < 1.0) ? -k_ * std::pow(1.0 - t, k_ - 1.0)
                                            : (k_ > 1.0 ? 0.0 : (k_ == 1.0 ? -1.0 : -HUGE_VAL));
                return {a, da};
            }
            case Kind::Root: {
                const auto [a, da] = base_->alpha(t);
                const double inv = 1.0 / static_cast<double>(root_);
                const double at = std::pow(a, inv);
                // chain rule; at the a=0 endpoint the derivative is one-sided
                const double dat = (a > 0.0) ? inv * std::pow(a, inv - 1.0) * da : -HUGE_VAL;
                return {at, dat};
            }
        }
        return {0.0, 0.0};
    }

    double value(double t) const { return alpha(t).first; }

    /// Loss weight w(t) = alpha'/(alpha - 1); 1/t exactly for linear.
    double weight(double t) const {
        const auto [a, da] = alpha(t);
        return da / (a - 1.0);
    }

private:
    enum class Kind { Linear, Power, Root };
    Schedule(Kind kind, double k, std::shared_ptr<Schedule> base, unsigned root)
        : kind_(kind), k_(k), base_(std::move(base)), root_(root) {}

    Kind kind_;
    double k_;
    std::shared_ptr<Schedule> base_;
    unsigned root_;
};

}  // namespace primelab
