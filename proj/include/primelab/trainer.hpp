#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "primelab/error.hpp"
#include "primelab/grid.hpp"
#include "primelab/kernels.hpp"
#include "primelab/oracle.hpp"
#include "primelab/quadrature.hpp"
#include "primelab/rng.hpp"
#include "primelab/schedule.hpp"
#include "primelab/subtok.hpp"

namespace primelab {

/// Tiny trainable denoiser over sub-token grids. Sub-token embeddings are
/// summed into token embeddings, mixed through a mean-pooled context, one
/// tanh hidden layer, and per-position factorized output heads. All
/// parameters live in a single flat vector so the optimizer and the
/// finite-difference oracle see the same layout.
class ToyModel {
public:
    struct Dims {
        std::uint32_t L, ell, b, d, h;

        std::size_t emb() const { return static_cast<std::size_t>(ell) * (b + 1) * d; }
        std::size_t pos() const { return static_cast<std::size_t>(L) * d; }
        std::size_t w1() const { return static_cast<std::size_t>(h) * d; }
        std::size_t b1() const { return h; }
        std::size_t w2() const { return static_cast<std::size_t>(ell) * b * h; }
        std::size_t b2() const { return static_cast<std::size_t>(ell) * b; }
        std::size_t total() const { return emb() + pos() + w1() + b1() + w2() + b2(); }

        std::size_t off_pos() const { return emb(); }
        std::size_t off_w1() const { return emb() + pos(); }
        std::size_t off_b1() const { return off_w1() + w1(); }
        std::size_t off_w2() const { return off_b1() + b1(); }
        std::size_t off_b2() const { return off_w2() + w2(); }
    };

    ToyModel(Dims dims, std::uint64_t init_seed, double init_scale = 0.05)
        : dims_(dims), theta_(dims.total(), 0.0) {
        SplitMix64 rng(init_seed);
        for (auto& v : theta_) v = init_scale * gaussian(rng);
    }

    const Dims& dims() const { return dims_; }
    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }

    // parameter views into the flat vector
    double emb(std::uint32_t j, std::uint32_t v, std::uint32_t k) const {
        return theta_[(static_cast<std::size_t>(j) * (dims_.b + 1) + v) * dims_.d + k];
    }
    double pos(std::uint32_t i, std::uint32_t k) const {
        return theta_[dims_.off_pos() + static_cast<std::size_t>(i) * dims_.d + k];
    }
    double w1(std::uint32_t r, std::uint32_t k) const {
        return theta_[dims_.off_w1() + static_cast<std::size_t>(r) * dims_.d + k];
    }
    double b1(std::uint32_t r) const { return theta_[dims_.off_b1() + r]; }
    double w2(std::uint32_t j, std::uint32_t v, std::uint32_t r) const {
        return theta_[dims_.off_w2() +
                      (static_cast<std::size_t>(j) * dims_.b + v) * dims_.h + r];
    }
    double b2(std::uint32_t j, std::uint32_t v) const {
        return theta_[dims_.off_b2() + static_cast<std::size_t>(j) * dims_.b + v];
    }

    struct Cache {
        std::vector<double> u;       // L x d token embeddings
        std::vector<double> c;       // L x d context-mixed
        std::vector<double> hidden;  // L x h post-tanh
        std::vector<double> probs;   // L x ell x b softmax outputs
    };

    /// Raw network forward (no carry-over override).
    Cache forward_raw(const SubTokenGrid& yt) const {
        const auto [L, ell, b, d, h] = dims_;
        if (yt.rows() != L || yt.cols() != ell) throw ShapeMismatch("forward: grid dims mismatch");
        Cache cc;
        cc.u.assign(static_cast<std::size_t>(L) * d, 0.0);
        for (std::uint32_t i = 0; i < L; ++i) {
            for (std::uint32_t j = 0; j < ell; ++j) {
                const std::uint32_t v = yt.masked(i, j) ? b : static_cast<std::uint32_t>(yt.at(i, j));
                for (std::uint32_t k = 0; k < d; ++k)
                    cc.u[static_cast<std::size_t>(i) * d + k] += emb(j, v, k);
            }
            for (std::uint32_t k = 0; k < d; ++k)
                cc.u[static_cast<std::size_t>(i) * d + k] += pos(i, k);
        }
        std::vector<double> mean(d, 0.0);
        for (std::uint32_t i = 0; i < L; ++i)
            for (std::uint32_t k = 0; k < d; ++k)
                mean[k] += cc.u[static_cast<std::size_t>(i) * d + k] / L;
        cc.c.assign(static_cast<std::size_t>(L) * d, 0.0);
        for (std::uint32_t i = 0; i < L; ++i)
            for (std::uint32_t k = 0; k < d; ++k)
                cc.c[static_cast<std::size_t>(i) * d + k] =
                    cc.u[static_cast<std::size_t>(i) * d + k] + mean[k];
        cc.hidden.assign(static_cast<std::size_t>(L) * h, 0.0);
        for (std::uint32_t i = 0; i < L; ++i)
            for (std::uint32_t r = 0; r < h; ++r) {
                double z = b1(r);
                for (std::uint32_t k = 0; k < d; ++k)
                    z += w1(r, k) * cc.c[static_cast<std::size_t>(i) * d + k];
                cc.hidden[static_cast<std::size_t>(i) * h + r] = std::tanh(z);
            }
        cc.probs.assign(static_cast<std::size_t>(L) * ell * b, 0.0);
        for (std::uint32_t i = 0; i < L; ++i) {
            for (std::uint32_t j = 0; j < ell; ++j) {
                double mx = -HUGE_VAL;
                std::vector<double> logits(b);
                for (std::uint32_t v = 0; v < b; ++v) {
                    double z = b2(j, v);
                    for (std::uint32_t r = 0; r < h; ++r)
                        z += w2(j, v, r) * cc.hidden[static_cast<std::size_t>(i) * h + r];
                    logits[v] = z;
                    mx = std::max(mx, z);
                }
                double zsum = 0.0;
                for (std::uint32_t v = 0; v < b; ++v) zsum += std::exp(logits[v] - mx);
                for (std::uint32_t v = 0; v < b; ++v)
                    cc.probs[(static_cast<std::size_t>(i) * ell + j) * b + v] =
                        std::exp(logits[v] - mx) / zsum;
            }
        }
        return cc;
    }

    /// Per-cell categoricals with carry-over: unmasked cells are point
    /// masses on their observed value regardless of the parameters.
    std::vector<std::vector<double>> forward(const SubTokenGrid& yt) const {
        const auto cc = forward_raw(yt);
        const auto [L, ell, b, d, h] = dims_;
        std::vector<std::vector<double>> out(static_cast<std::size_t>(L) * ell,
                                             std::vector<double>(b, 0.0));
        for (std::uint32_t i = 0; i < L; ++i)
            for (std::uint32_t j = 0; j < ell; ++j) {
                auto& cell = out[static_cast<std::size_t>(i) * ell + j];
                if (yt.masked(i, j)) {
                    for (std::uint32_t v = 0; v < b; ++v)
                        cell[v] = cc.probs[(static_cast<std::size_t>(i) * ell + j) * b + v];
                } else {
                    cell[static_cast<std::uint32_t>(yt.at(i, j))] = 1.0;
                }
            }
        return out;
    }

    PosteriorFn posterior() const {
        return [m = *this](const SubTokenGrid& yt) { return m.forward(yt); };
    }

    /// Cross-entropy over the masked cells of yt against the clean grid,
    /// scaled by `weight`; accumulates gradients into `grad` (same layout
    /// as theta) when non-null. Returns the weighted loss.
    double masked_ce_backward(const SubTokenGrid& yt, const SubTokenGrid& y0, double weight,
                              std::vector<double>* grad) const {
        const auto [L, ell, b, d, h] = dims_;
        const Cache cc = forward_raw(yt);
        double loss = 0.0;
        std::vector<double> dlogits(static_cast<std::size_t>(L) * ell * b, 0.0);
        for (std::uint32_t i = 0; i < L; ++i)
            for (std::uint32_t j = 0; j < ell; ++j) {
                if (!yt.masked(i, j)) continue;
                const auto target = static_cast<std::uint32_t>(y0.at(i, j));
                const double p =
                    cc.probs[(static_cast<std::size_t>(i) * ell + j) * b + target];
                loss += -std::log(std::max(p, 1e-300));
                if (grad)
                    for (std::uint32_t v = 0; v < b; ++v) {
                        const std::size_t ix = (static_cast<std::size_t>(i) * ell + j) * b + v;
                        dlogits[ix] = weight * (cc.probs[ix] - (v == target ? 1.0 : 0.0));
                    }
            }
        loss *= weight;
        if (!grad) return loss;

        std::vector<double> dc(static_cast<std::size_t>(L) * d, 0.0);
        for (std::uint32_t i = 0; i < L; ++i) {
            std::vector<double> dh(h, 0.0);
            for (std::uint32_t j = 0; j < ell; ++j)
                for (std::uint32_t v = 0; v < b; ++v) {
                    const double g = dlogits[(static_cast<std::size_t>(i) * ell + j) * b + v];
                    if (g == 0.0) continue;
                    (*grad)[dims_.off_b2() + static_cast<std::size_t>(j) * b + v] += g;
                    for (std::uint32_t r = 0; r < h; ++r) {
                        (*grad)[dims_.off_w2() + (static_cast<std::size_t>(j) * b + v) * h + r] +=
                            g * cc.hidden[static_cast<std::size_t>(i) * h + r];
                        dh[r] += g * w2(j, v, r);
                    }
                }
            for (std::uint32_t r = 0; r < h; ++r) {
                const double hr = cc.hidden[static_cast<std::size_t>(i) * h + r];
                const double dz = dh[r] * (1.0 - hr * hr);
                if (dz == 0.0) continue;
                (*grad)[dims_.off_b1() + r] += dz;
                for (std::uint32_t k = 0; k < d; ++k) {
                    (*grad)[dims_.off_w1() + static_cast<std::size_t>(r) * d + k] +=
                        dz * cc.c[static_cast<std::size_t>(i) * d + k];
                    dc[static_cast<std::size_t>(i) * d + k] += dz * w1(r, k);
                }
            }
        }
        // c_i = u_i + mean(u): du_i = dc_i + (1/L) sum_k dc_k
        std::vector<double> dmean(d, 0.0);
        for (std::uint32_t i = 0; i < L; ++i)
            for (std::uint32_t k = 0; k < d; ++k)
                dmean[k] += dc[static_cast<std::size_t>(i) * d + k] / L;
        for (std::uint32_t i = 0; i < L; ++i)
            for (std::uint32_t k = 0; k < d; ++k) {
                const double du = dc[static_cast<std::size_t>(i) * d + k] + dmean[k];
                (*grad)[dims_.off_pos() + static_cast<std::size_t>(i) * d + k] += du;
                for (std::uint32_t j = 0; j < ell; ++j) {
                    const std::uint32_t v =
                        yt.masked(i, j) ? b : static_cast<std::uint32_t>(yt.at(i, j));
                    (*grad)[(static_cast<std::size_t>(j) * (b + 1) + v) * d + k] += du;
                }
            }
        return loss;
    }

private:
    static double gaussian(SplitMix64& rng) {
        const double u1 = std::max(rng.next_double(), 1e-12);
        const double u2 = rng.next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Dims dims_;
    std::vector<double> theta_;
};

struct TrainConfig {
    std::uint32_t V = 0, ell = 0, L = 0, d = 16, h = 32;
    ShuffleStrategy strategy = ShuffleStrategy::Random;
    std::uint64_t subtok_seed = 0;
    std::uint32_t steps = 1000;
    std::uint32_t batch = 32;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::uint64_t seed = 0;
    double t_floor = 1e-3;
};

struct McLoss {
    double loss = 0.0;
    std::vector<double> grads;
};

/// One Monte Carlo estimate of the weighted objective over a batch of
/// clean grids: t ~ U[eps, 1], forward-mask, w(t) * masked cross-entropy,
/// exact backpropagation.
inline McLoss loss_mc(const ToyModel& m, const std::vector<SubTokenGrid>& y0_batch,
                      const Schedule& s, std::uint64_t seed, double t_floor = 1e-3) {
    if (y0_batch.empty()) throw Error("loss_mc: empty batch");
    McLoss out;
    out.grads.assign(m.theta().size(), 0.0);
    const double inv_batch = 1.0 / static_cast<double>(y0_batch.size());
    for (std::size_t e = 0; e < y0_batch.size(); ++e) {
        SplitMix64 rng(substream_key(seed, e, 0x74));
        const double t = t_floor + (1.0 - t_floor) * rng.next_double();
        const SubTokenGrid yt = forward_mask(y0_batch[e], s, t, substream_key(seed, e, 0x6d));
        const double w = s.weight(t);
        out.loss += m.masked_ce_backward(yt, y0_batch[e], w * inv_batch, &out.grads);
    }
    return out;
}

struct TrainResult {
    ToyModel model;
    std::vector<std::pair<std::uint32_t, double>> history;
    Subtokenizer subtok;
};

using SequenceSampler = std::function<std::vector<std::uint32_t>(SplitMix64&)>;

inline TrainResult train(const TrainConfig& cfg, const SequenceSampler& data) {
    Subtokenizer st = cfg.strategy == ShuffleStrategy::Identity
                          ? Subtokenizer::identity(cfg.V, cfg.ell)
                          : Subtokenizer::random(cfg.V, cfg.ell, cfg.subtok_seed);
    ToyModel model(ToyModel::Dims{cfg.L, cfg.ell, st.base(), cfg.d, cfg.h},
                   substream_key(cfg.seed, 0x696e6974));
    const Schedule sched = Schedule::linear();
    std::vector<double> m1(model.theta().size(), 0.0), m2(model.theta().size(), 0.0);
    std::vector<std::pair<std::uint32_t, double>> history;
    double initial_loss = 0.0;
    int high_streak = 0;
    for (std::uint32_t step = 0; step < cfg.steps; ++step) {
        SplitMix64 data_rng(substream_key(cfg.seed, 0x64617461, step));
        std::vector<SubTokenGrid> batch;
        batch.reserve(cfg.batch);
        for (std::uint32_t e = 0; e < cfg.batch; ++e)
            batch.push_back(SubTokenGrid::from_tokens(st, data(data_rng)));
        const auto mc = loss_mc(model, batch, sched, substream_key(cfg.seed, 0x6c6f7373, step),
                                cfg.t_floor);
        if (step == 0) initial_loss = mc.loss;
        if (mc.loss > 10.0 * initial_loss) {
            if (++high_streak >= 100) throw DivergenceDetected("train: loss diverged");
        } else {
            high_streak = 0;
        }
        history.emplace_back(step, mc.loss);
        const double bc1 = 1.0 - std::pow(cfg.beta1, step + 1);
        const double bc2 = 1.0 - std::pow(cfg.beta2, step + 1);
        auto& theta = model.theta();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * mc.grads[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * mc.grads[i] * mc.grads[i];
            theta[i] -= cfg.lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + 1e-8);
        }
    }
    return {std::move(model), std::move(history), std::move(st)};
}

/// Exact NELBO of any posterior callable on an enumerable instance:
/// expectation over (y0, mask pattern) at Gauss-Legendre s-nodes.
inline double eval_nelbo_exact(const PosteriorFn& posterior, const TokenDist& q,
                               const Subtokenizer& st, const Quadrature& quad) {
    oracle_detail::CodeTable ct(q, st);
    const std::uint32_t n = ct.n_cells;
    const std::uint32_t ell = st.granularity();
    return quad.rule.integrate([&](double s) {
        double ce = 0.0;
        std::unordered_map<std::uint64_t, std::vector<std::vector<double>>> memo;
        for (std::uint32_t m = 0; m < (1u << n); ++m) {
            const double pm = oracle_detail::pattern_prob(s, m, n);
            if (pm <= 0.0) continue;
            for (std::size_t x = 0; x < q.states(); ++x) {
                const double px = q.probs[x];
                if (px <= 0.0) continue;
                const std::uint64_t key = ct.obs_key(x, m);
                auto it = memo.find(key);
                if (it == memo.end()) {
                    SubTokenGrid yt(q.L, ell, kMask);
                    for (std::uint32_t c = 0; c < n; ++c)
                        if (!((m >> c) & 1u))
                            yt.at(c / ell, c % ell) = static_cast<std::int32_t>(ct.codes[x][c]);
                    it = memo.emplace(key, posterior(yt)).first;
                }
                const auto& probs = it->second;
                double nll = 0.0;
                for (std::uint32_t c = 0; c < n; ++c)
                    if ((m >> c) & 1u)
                        nll -= std::log(std::max(probs[c][ct.codes[x][c]], 1e-300));
                ce += pm * px * nll;
            }
        }
        return ce / (1.0 - s);
    });
}

struct McEval {
    double value = 0.0;
    double stderr_ = 0.0;
};

/// Monte Carlo NELBO for instances beyond the enumeration budget: at each
/// s-node, sample (sequence, mask pattern) pairs and average the masked
/// negative log-probabilities. Keyed substreams make two evaluations with
/// the same seed use identical draws (paired comparisons).
inline McEval eval_nelbo_mc(const PosteriorFn& posterior, const SequenceSampler& data,
                            const Subtokenizer& st, const Quadrature& quad,
                            std::uint32_t samples_per_node, std::uint64_t seed) {
    const std::uint32_t ell = st.granularity();
    double value = 0.0, var = 0.0;
    const auto& nodes = quad.rule.nodes;
    const auto& weights = quad.rule.weights;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const double s = nodes[k];
        double sum = 0.0, sum2 = 0.0;
        for (std::uint32_t n = 0; n < samples_per_node; ++n) {
            SplitMix64 rng(substream_key(seed, k, n));
            const auto seq = data(rng);
            SubTokenGrid y0 = SubTokenGrid::from_tokens(st, seq);
            SubTokenGrid yt = y0;
            for (std::uint32_t i = 0; i < y0.rows(); ++i)
                for (std::uint32_t j = 0; j < ell; ++j)
                    if (rng.next_double() >= s) yt.at(i, j) = kMask;
            const auto probs = posterior(yt);
            double nll = 0.0;
            for (std::uint32_t i = 0; i < y0.rows(); ++i)
                for (std::uint32_t j = 0; j < ell; ++j)
                    if (yt.masked(i, j))
                        nll -= std::log(std::max(
                            probs[static_cast<std::size_t>(i) * ell + j]
                                 [static_cast<std::uint32_t>(y0.at(i, j))],
                            1e-300));
            sum += nll;
            sum2 += nll * nll;
        }
        const double mean = sum / samples_per_node;
        const double node_var =
            samples_per_node > 1
                ? (sum2 - sum * sum / samples_per_node) / (samples_per_node - 1.0)
                : 0.0;
        const double scale = weights[k] / (1.0 - s);
        value += scale * mean;
        var += scale * scale * node_var / samples_per_node;
    }
    return {value, std::sqrt(var)};
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

/// Central finite-difference check of loss_mc gradients on `n_params`
/// randomly chosen parameters (same seed => same MC draw, so the loss is
/// a deterministic function of theta).
inline GradCheckResult gradient_check(ToyModel& m, const std::vector<SubTokenGrid>& batch,
                                      const Schedule& s, std::uint64_t mc_seed,
                                      std::size_t n_params, std::uint64_t pick_seed,
                                      double step = 1e-5) {
    const auto base = loss_mc(m, batch, s, mc_seed);
    SplitMix64 rng(pick_seed);
    GradCheckResult res;
    for (std::size_t k = 0; k < n_params; ++k) {
        const std::size_t i = static_cast<std::size_t>(rng.next_below(m.theta().size()));
        const double save = m.theta()[i];
        m.theta()[i] = save + step;
        const double lp = loss_mc(m, batch, s, mc_seed).loss;
        m.theta()[i] = save - step;
        const double lm = loss_mc(m, batch, s, mc_seed).loss;
        m.theta()[i] = save;
        const double fd = (lp - lm) / (2.0 * step);
        const double rel =
            std::abs(base.grads[i] - fd) / (std::abs(base.grads[i]) + 1e-8);
        res.max_rel_err = std::max(res.max_rel_err, rel);
        ++res.checked;
    }
    return res;
}

}  // namespace primelab
