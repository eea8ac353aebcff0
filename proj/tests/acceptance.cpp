// Acceptance gate: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Each criterion is self-contained and seeded.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "primelab/corpus.hpp"
#include "primelab/kernels.hpp"
#include "primelab/markov.hpp"
#include "primelab/oracle.hpp"
#include "primelab/rng.hpp"
#include "primelab/scaling.hpp"
#include "primelab/spectra.hpp"
#include "primelab/stats.hpp"
#include "primelab/subtok.hpp"
#include "primelab/trainer.hpp"
#include "primelab/verify.hpp"

using namespace primelab;

namespace {

int g_failures = 0;

void report(int num, const std::string& name, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", num, name.c_str(),
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

bool all_pass(const std::vector<CheckResult>& checks, std::string& first_fail) {
    for (const auto& c : checks)
        if (!c.pass) {
            first_fail = c.name;
            return false;
        }
    return true;
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

// ---------------------------------------------------------------- criterion 1
void criterion1() {
    struct Row {
        std::uint32_t ell, b;
        double bits;
    };
    const Row rows[] = {{16, 2, 1.0000}, {8, 4, 2.0000}, {4, 15, 3.9069}, {2, 225, 7.8138}};
    bool ok = true;
    std::string detail;
    for (const auto& r : rows) {
        const std::uint32_t b = ceil_root(50257, r.ell);
        const double bits = round4(std::log2(static_cast<double>(b)));
        if (b != r.b || bits != r.bits) {
            ok = false;
            detail = "ell=" + std::to_string(r.ell) + " got b=" + std::to_string(b);
        }
    }
    report(1, "per-sub-token entropy ceiling table (V=50257)", ok, detail);
}

// ---------------------------------------------------------------- criterion 2
void criterion2() {
    auto mk = [](double aN, double bD) { return ScalingFit{1.0, 1.0, 1.0, aN, bD, 0.0}; };
    const struct {
        double aN, bD, a_hat, b_hat;
    } rows[] = {{0.35, 0.28, 0.45, 0.55}, {0.35, 0.26, 0.43, 0.57}, {0.37, 0.26, 0.42, 0.58}};
    bool ok = true;
    for (const auto& r : rows) {
        const auto e = exponents(mk(r.aN, r.bD));
        if (std::abs(e.a_hat - r.a_hat) > 0.02 || std::abs(e.b_hat - r.b_hat) > 0.02) ok = false;
    }
    report(2, "compute-optimal allocation exponents", ok);
}

// ------------------------------------------------------------ criteria 3 to 6
void criterion_suite(int num, const std::string& name, const std::string& suite) {
    std::string first_fail;
    const bool ok = all_pass(run_verification(suite), first_fail);
    report(num, name, ok, first_fail);
}

// ---------------------------------------------------------------- criterion 7
void criterion7() {
    const ScalingFit truth{1.30, 400.0, 400.0, 0.37, 0.26, 0.0};
    auto points = [&](double sigma, std::uint64_t seed) {
        std::vector<ScalingPoint> pts;
        SplitMix64 rng(seed);
        for (double logN : {7.0, 8.0, 9.0, 10.0})
            for (double logD : {9.0, 9.5, 10.0, 10.5, 11.0, 12.0}) {
                const double N = std::pow(10.0, logN), D = std::pow(10.0, logD);
                double loss = predict_loss(truth, N, D);
                if (sigma > 0.0) {
                    const double u1 = std::max(rng.next_double(), 1e-12);
                    const double u2 = rng.next_double();
                    loss *= std::exp(sigma * std::sqrt(-2.0 * std::log(u1)) *
                                     std::cos(2.0 * M_PI * u2));
                }
                pts.push_back({N, D, loss});
            }
        return pts;
    };
    bool ok = true;
    std::string detail;
    const auto clean = fit_scaling(points(0.0, 0));
    if (std::abs(clean.alphaN - truth.alphaN) > 1e-6 || std::abs(clean.betaD - truth.betaD) > 1e-6 ||
        std::abs(clean.E - truth.E) > 1e-6 * truth.E) {
        ok = false;
        detail = "noiseless recovery out of tolerance";
    }
    const auto noisy = fit_scaling(points(0.005, 77));
    if (std::abs(noisy.alphaN - truth.alphaN) > 0.02 || std::abs(noisy.betaD - truth.betaD) > 0.02) {
        ok = false;
        detail = "noisy exponent recovery out of tolerance";
    }
    for (double C : {1e18, 3.3e19, 1e21}) {
        const auto a = optimal_allocation(truth, C);
        if (std::abs(a.N_opt * a.D_opt - C / 6.0) > 1e-12 * (C / 6.0)) {
            ok = false;
            detail = "allocation identity violated";
        }
    }
    report(7, "scaling-law fit recovery and allocation identity", ok, detail);
}

// ---------------------------------------------------------------- criterion 8
void criterion8() {
    bool ok = true;
    std::string detail;

    {  // finite-difference gradient agreement on 20 sampled parameters
        const auto st = Subtokenizer::random(16, 4, 3);
        ToyModel m(ToyModel::Dims{4, 4, 2, 16, 32}, 9);
        SplitMix64 rng(5);
        const auto chain = MarkovChain::synthetic(16, 1.0, 0.7);
        std::vector<SubTokenGrid> batch;
        for (int e = 0; e < 4; ++e)
            batch.push_back(SubTokenGrid::from_tokens(st, chain.sample_sequence(4, rng)));
        const auto gc = gradient_check(m, batch, Schedule::linear(), 11, 20, 13);
        if (gc.max_rel_err >= 1e-4) {
            ok = false;
            detail = "gradcheck max_rel_err=" + std::to_string(gc.max_rel_err);
        }
    }
    {  // variational dominance on an exactly-enumerable instance
        const auto st = Subtokenizer::identity(4, 2);
        const auto q = MarkovChain::synthetic(4, 1.0, 0.6).to_token_dist(2);
        const Quadrature quad(64);
        const double opt = eval_nelbo_exact(exact_posterior(q, st), q, st, quad);
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            ToyModel m(ToyModel::Dims{2, 2, 2, 8, 16}, seed);
            if (eval_nelbo_exact(m.posterior(), q, st, quad) < opt - 1e-8) {
                ok = false;
                detail = "variational dominance violated";
            }
        }
    }

    const Quadrature quad(32);

    {  // headline: within 5% of the oracle optimum in < 60 s single-threaded
        const auto chain = MarkovChain::synthetic(16, 1.0, 0.4);
        const SequenceSampler data = [&](SplitMix64& rng) { return chain.sample_sequence(4, rng); };
        const auto t0 = std::chrono::steady_clock::now();
        TrainConfig cfg;
        cfg.V = 16;
        cfg.ell = 4;
        cfg.L = 4;
        cfg.d = 32;
        cfg.h = 64;
        cfg.steps = 5000;
        cfg.batch = 32;
        cfg.lr = 5e-3;
        cfg.seed = 101;
        cfg.subtok_seed = 7;
        const auto r = train(cfg, data);
        // paired evaluation: identical sequence/mask draws for both posteriors
        const auto model_eval = eval_nelbo_mc(r.model.posterior(), data, r.subtok, quad, 200, 991);
        const auto oracle_eval =
            eval_nelbo_mc(chain.bayes_posterior(r.subtok), data, r.subtok, quad, 200, 991);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (model_eval.value > 1.05 * oracle_eval.value) {
            ok = false;
            detail += " headline gap " +
                      std::to_string(model_eval.value / oracle_eval.value - 1.0) + " > 5%;";
        }
        if (secs >= 60.0) {
            ok = false;
            detail += " headline run took " + std::to_string(secs) + " s;";
        }
    }
    {  // shuffling direction: the oracle optimum under each of 3 random
        // permutations beats the identity assignment on a Zipf marginal
        std::vector<double> p(8);
        double z = 0.0;
        for (int i = 0; i < 8; ++i) {
            p[i] = 1.0 / (i + 1);
            z += p[i];
        }
        for (auto& v : p) v /= z;
        const auto q = TokenDist::product(p, 1);
        const Quadrature q64(64);
        const double identity = optimal_nelbo(q, Subtokenizer::identity(8, 3), q64).value;
        double shuffled = 0.0;
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL})
            shuffled += optimal_nelbo(q, Subtokenizer::random(8, 3, seed), q64).value / 3.0;
        if (shuffled > identity) {
            ok = false;
            detail += " shuffled optimum mean " + std::to_string(shuffled) + " > identity " +
                      std::to_string(identity) + ";";
        }
    }
    {  // granularity trend across 3 seeds: trained ell=4 <= trained ell=1
        const auto chain = MarkovChain::synthetic(16, 0.5, 0.7);
        const SequenceSampler data = [&](SplitMix64& rng) { return chain.sample_sequence(4, rng); };
        auto mean_final = [&](std::uint32_t ell) {
            double sum = 0.0;
            for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
                TrainConfig cfg;
                cfg.V = 16;
                cfg.ell = ell;
                cfg.L = 4;
                cfg.d = 32;
                cfg.h = 64;
                cfg.steps = 1500;
                cfg.batch = 32;
                cfg.lr = 5e-3;
                cfg.strategy = ShuffleStrategy::Random;
                cfg.seed = seed;
                cfg.subtok_seed = 40 + seed;
                const auto r = train(cfg, data);
                sum += eval_nelbo_mc(r.model.posterior(), data, r.subtok, quad, 200, 991).value;
            }
            return sum / 3.0;
        };
        const double fine = mean_final(4);
        const double coarse = mean_final(1);
        if (fine > coarse) {
            ok = false;
            detail += " ell=4 mean " + std::to_string(fine) + " > ell=1 mean " +
                      std::to_string(coarse) + ";";
        }
    }
    report(8, "trainable denoiser gradient/dominance/recovery/trend suite", ok, detail);
}

// ---------------------------------------------------------------- criterion 9
void criterion9() {
    const auto q = MarkovChain::synthetic(8, 1.0, 0.7).to_token_dist(2);
    const auto st = Subtokenizer::random(8, 3, 5);
    const auto post = exact_posterior(q, st);
    const auto sched = Schedule::linear();
    std::vector<std::uint64_t> observed(64, 0);
    for (std::uint32_t n = 0; n < 20000; ++n) {
        const auto toks = sample(post, st, 2, 64, sched, substream_key(123, n));
        ++observed[static_cast<std::size_t>(toks[0]) * 8 + toks[1]];
    }
    const double p = chi_square_test(observed, q.probs);
    report(9, "ancestral sampler goodness-of-fit (V=8, L=2, K=64)", p > 0.01,
           "p=" + std::to_string(p));
}

// --------------------------------------------------------------- criterion 10
void criterion10() {
    bool ok = true;
    DenseMatrix eye = DenseMatrix::zeros(6, 6);
    for (int i = 0; i < 6; ++i) eye.at(i, i) = 1.0;
    if (std::abs(stable_rank(eye) - 6.0) > 1e-9) ok = false;

    DenseMatrix r1 = DenseMatrix::zeros(5, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) r1.at(r, c) = (r + 1.0) * (c + 0.5);
    if (std::abs(stable_rank(r1) - 1.0) > 1e-9) ok = false;

    DenseMatrix m = DenseMatrix::zeros(7, 5);
    SplitMix64 rng(99);
    for (auto& v : m.data) v = 2.0 * rng.next_double() - 1.0;
    double sum2 = 0.0;
    for (double s : singular_values(m)) sum2 += s * s;
    if (std::abs(sum2 - m.frobenius_sq()) > 1e-9 * m.frobenius_sq()) ok = false;

    report(10, "spectral identities (stable rank, Frobenius)", ok);
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion_suite(3, "masked-state entropy bound sweep", "entropy-bound");
    criterion_suite(4, "NELBO route agreement and granularity monotonicity", "routes");
    criterion_suite(5, "expectation/schedule/entropy identity suite", "identities");
    criterion_suite(6, "index-shuffling oracle ordering", "shuffling");
    criterion7();
    criterion8();
    criterion9();
    criterion10();
    if (g_failures == 0) {
        std::printf("acceptance: all 10 criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
    return 1;
}
