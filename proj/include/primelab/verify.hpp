#pragma once

#include <bit>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "primelab/corpus.hpp"
#include "primelab/markov.hpp"
#include "primelab/oracle.hpp"
#include "primelab/schedule.hpp"
#include "primelab/stats.hpp"
#include "primelab/subtok.hpp"

namespace primelab {

struct CheckResult {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

inline CheckResult check_le(std::string name, double lhs, double rhs, double tol) {
    return {std::move(name), lhs, rhs, tol, lhs <= rhs + tol};
}
inline CheckResult check_eq(std::string name, double lhs, double rhs, double tol) {
    return {std::move(name), lhs, rhs, tol, std::abs(lhs - rhs) <= tol};
}

inline nlohmann::json checks_to_json(const std::vector<CheckResult>& checks) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks)
        arr.push_back({{"name", c.name},
                       {"lhs", c.lhs},
                       {"rhs", c.rhs},
                       {"tolerance", c.tolerance},
                       {"pass", c.pass}});
    return arr;
}

namespace verify_detail {

struct Instance {
    std::string name;
    TokenDist q;
    std::uint32_t ell;
};

inline std::vector<double> zipf_probs(std::uint32_t V, double s) {
    std::vector<double> p(V);
    double sum = 0.0;
    for (std::uint32_t i = 0; i < V; ++i) {
        p[i] = std::pow(static_cast<double>(i + 1), -s);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

inline std::vector<Instance> default_instances(std::size_t budget) {
    std::vector<Instance> out;
    out.push_back({"uniform-V4-L1-ell2", TokenDist::product({0.25, 0.25, 0.25, 0.25}, 1, budget), 2});
    out.push_back({"skewed-V4-L1-ell2", TokenDist::product({0.5, 0.25, 0.15, 0.10}, 1, budget), 2});
    out.push_back({"zipf-V8-L1-ell3", TokenDist::product(zipf_probs(8, 1.0), 1, budget), 3});
    out.push_back({"markov-V8-L2-ell3",
                   MarkovChain::synthetic(8, 1.0, 0.7).to_token_dist(2, budget), 3});
    out.push_back({"uniform-V2-L1-ell1", TokenDist::product({0.5, 0.5}, 1, budget), 1});
    out.push_back({"zipf-V16-L1-ell4", TokenDist::product(zipf_probs(16, 1.2), 1, budget), 4});
    return out;
}

}  // namespace verify_detail

/// Prop 2 sweep: H(y_t) <= L*ell*(h(alpha)+alpha*log2 b) on a 21-point
/// alpha grid; equality on product-uniform data.
inline std::vector<CheckResult> verify_entropy_bound(std::size_t budget = TokenDist::kDefaultBudget) {
    std::vector<CheckResult> checks;
    for (const auto& inst : verify_detail::default_instances(budget)) {
        const auto st = Subtokenizer::identity(inst.q.V, inst.ell);
        double worst_gap = -HUGE_VAL;  // H - bound, must stay <= 0
        double worst_dev = 0.0;        // |H - bound| for the equality cases
        for (int k = 0; k <= 20; ++k) {
            const double a = 0.05 * k;
            const double h = entropy_yt(inst.q, st, a);
            const double bound = entropy_bound(inst.q.L, inst.ell, st.base(), a);
            worst_gap = std::max(worst_gap, h - bound);
            worst_dev = std::max(worst_dev, std::abs(h - bound));
        }
        checks.push_back(check_le("entropy-bound/" + inst.name + "/H<=bound", worst_gap, 0.0, 1e-9));
        if (inst.name.rfind("uniform", 0) == 0)
            checks.push_back(check_eq("entropy-bound/" + inst.name + "/equality", worst_dev, 0.0, 1e-9));
    }
    return checks;
}

/// Prop 1 route agreement, the Prop 3 granularity chain, and the
/// single-token NELBO identity.
inline std::vector<CheckResult> verify_routes(std::size_t budget = TokenDist::kDefaultBudget) {
    std::vector<CheckResult> checks;
    const Quadrature quad(64);
    for (const auto& inst : verify_detail::default_instances(budget)) {
        const auto st = Subtokenizer::identity(inst.q.V, inst.ell);
        const auto r = optimal_nelbo(inst.q, st, quad);
        checks.push_back(check_eq("routes/" + inst.name + "/routes", r.route_decomposition,
                                  r.route_posterior, 1e-8));
    }
    {
        // nested-base chain: V=16 gives b = 16, 4, 2 for ell = 1, 2, 4
        const auto q = TokenDist::product(verify_detail::zipf_probs(16, 1.2), 1, budget);
        double prev = HUGE_VAL;
        std::uint32_t prev_ell = 0;
        for (std::uint32_t ell : {1u, 2u, 4u}) {
            const auto st = Subtokenizer::identity(16, ell);
            const double v = optimal_nelbo(q, st, Quadrature(64)).value;
            if (prev_ell != 0)
                checks.push_back(check_le("prop3/V16-ell" + std::to_string(prev_ell) + "->" +
                                              std::to_string(ell),
                                          v, prev, 1e-8));
            prev = v;
            prev_ell = ell;
        }
    }
    {
        const auto q = TokenDist::product(verify_detail::zipf_probs(5, 1.0), 1, budget);
        const auto st = Subtokenizer::identity(5, 1);
        const double v = optimal_nelbo(q, st, Quadrature(64)).value;
        checks.push_back(check_eq("routes/single-token-nelbo=H(x0)", v, q.entropy_nats(), 1e-8));
    }
    return checks;
}

/// Closed-form identity suite: the expectation-transport equality, schedule
/// invariance of the substituted integral, the kernel-entropy and
/// per-cell-entropy closed forms, and the KL equality condition.
inline std::vector<CheckResult> verify_identities(std::size_t budget = TokenDist::kDefaultBudget) {
    std::vector<CheckResult> checks;
    const auto q4 = TokenDist::product({0.5, 0.25, 0.15, 0.10}, 1, budget);
    const auto st4 = Subtokenizer::identity(4, 2);
    const auto qm = MarkovChain::synthetic(4, 1.0, 0.6).to_token_dist(2, budget);
    const auto stm = Subtokenizer::identity(4, 2);

    {  // expectation-transport identity with three choices of F
        const ExpectationFn f_one = [](const auto&, const auto&) { return 1.0; };
        const ExpectationFn f_allmask = [](const auto&, const std::vector<std::int32_t>& xt) {
            for (auto v : xt)
                if (v != kMask) return 0.0;
            return 1.0;
        };
        const ExpectationFn f_loglik = [&](const std::vector<std::uint32_t>& x0,
                                    const std::vector<std::int32_t>& xt) {
            // -log q(x0 | xt), the integrand of the likelihood chain
            double z = 0.0;
            for (std::size_t s = 0; s < q4.states(); ++s) {
                const auto toks = q4.tokens_of(s);
                bool compat = true;
                for (std::size_t i = 0; i < xt.size(); ++i)
                    if (xt[i] != kMask && toks[i] != static_cast<std::uint32_t>(xt[i]))
                        compat = false;
                if (compat) z += q4.probs[s];
            }
            std::size_t state = 0;
            for (auto t : x0) state = state * q4.V + t;
            return -std::log(q4.probs[state] / z);
        };
        auto r1 = transport_check(q4, st4, f_one, 0.5);
        checks.push_back(check_eq("transport/F=1", r1.lhs, r1.rhs, 1e-10));
        auto r2 = transport_check(qm, stm, f_allmask, 0.5);
        checks.push_back(check_eq("transport/F=all-mask-indicator", r2.lhs, r2.rhs, 1e-10));
        // the all-mask indicator also has the closed form (1-alpha)^L
        checks.push_back(check_eq("transport/all-mask-closed-form", r2.lhs, 0.25, 1e-10));
        auto r3 = transport_check(q4, st4, f_loglik, 0.5);
        checks.push_back(check_eq("transport/F=-log-posterior", r3.lhs, r3.rhs, 1e-10));
    }
    {  // time-change invariance of the weighted integral, integrable test functions
        const Quadrature quad(64);
        auto f_poly = [](double s) { return s * s * (1.0 - s); };
        auto r1 = time_change_check(f_poly, Schedule::linear(), Schedule::power(2.0), quad);
        checks.push_back(check_eq("time-change/s^2(1-s)/linear-vs-power2", r1.lhs, r1.rhs, 1e-6));
        auto r2 = time_change_check(f_poly, Schedule::linear(), Schedule::power(3.0), quad);
        checks.push_back(check_eq("time-change/s^2(1-s)/linear-vs-power3", r2.lhs, r2.rhs, 1e-6));
        // F = -CE(s): I(alpha) is then the NELBO, invariant across schedules
        oracle_detail::CodeTable ct(q4, st4);
        auto f_ce = [&](double s) { return -oracle_detail::cross_entropy(q4, ct, s); };
        auto r3 = time_change_check(f_ce, Schedule::linear(), Schedule::power(3.0), quad);
        checks.push_back(check_eq("time-change/nelbo/linear-vs-power3", r3.lhs, r3.rhs, 1e-6));
        checks.push_back(check_eq("time-change/nelbo-matches-optimal", r3.lhs,
                                  optimal_nelbo(q4, st4, quad).value, 1e-6));
    }
    {  // masking-kernel log-likelihood closed form: E[log q(yt|y0)] = L*ell*((1-a)ln(1-a)+a ln a)
        for (double a : {0.25, 0.5, 0.8}) {
            const std::uint32_t n = qm.L * stm.granularity();
            double lhs = 0.0;
            for (std::uint32_t m = 0; m < (1u << n); ++m) {
                const double pm = oracle_detail::pattern_prob(a, m, n);
                if (pm <= 0.0) continue;
                const auto nm = static_cast<std::uint32_t>(std::popcount(m));
                lhs += pm * (nm * std::log(1.0 - a) + (n - nm) * std::log(a));
            }
            const double rhs = -static_cast<double>(n) * mask_entropy_nats(a);
            checks.push_back(
                check_eq("kernel-loglik/kernel-entropy/a=" + std::to_string(a), lhs, rhs, 1e-10));
        }
    }
    {  // per-cell masked-state entropy closed form: H(yt_cell) = a*H(y0_cell) + h(a)
        oracle_detail::CodeTable ct(qm, stm);
        const double a = 0.6;
        double worst = 0.0;
        for (std::uint32_t c = 0; c < ct.n_cells; ++c) {
            std::vector<double> cell_marg(ct.b, 0.0);
            for (std::size_t x = 0; x < qm.states(); ++x) cell_marg[ct.codes[x][c]] += qm.probs[x];
            std::vector<double> yt_dist(ct.b + 1, 0.0);
            yt_dist[ct.b] = 1.0 - a;
            for (std::uint32_t v = 0; v < ct.b; ++v) yt_dist[v] = a * cell_marg[v];
            const double lhs = entropy_nats(yt_dist);
            const double rhs = a * entropy_nats(cell_marg) + mask_entropy_nats(a);
            worst = std::max(worst, std::abs(lhs - rhs));
        }
        checks.push_back(check_eq("cell-entropy/per-cell-entropy", worst, 0.0, 1e-10));
    }
    {  // coarsening KL-gap equality condition
        const auto qu = TokenDist::product({0.25, 0.25, 0.25, 0.25}, 1, budget);
        double worst = 0.0;
        for (double t : {0.2, 0.5, 0.8})
            worst = std::max(worst, kl_equality_gap(qu, st4, 2, t));
        checks.push_back(check_eq("coarsening-kl/product-uniform-gap=0", worst, 0.0, 1e-10));
        const double gap = kl_equality_gap(q4, st4, 2, 0.5);
        checks.push_back(check_le("coarsening-kl/gap>=0", 0.0, gap, 1e-12));
    }
    return checks;
}

/// Technique 1 at the oracle level: entropy-maximizing assignment lowers
/// the optimal NELBO, and shuffling raises sub-token entropy on Zipf data.
inline std::vector<CheckResult> verify_shuffling(std::size_t budget = TokenDist::kDefaultBudget) {
    std::vector<CheckResult> checks;
    const Quadrature quad(64);
    {
        const auto probs = verify_detail::zipf_probs(8, 1.0);
        const auto q = TokenDist::product(probs, 1, budget);
        const auto best = best_assignment_bruteforce(probs, 3);
        const auto st_best = subtokenizer_from_parts(8, 3, best.perm, ShuffleStrategy::Greedy, {});
        const auto st_id = Subtokenizer::identity(8, 3);
        const double n_best = optimal_nelbo(q, st_best, quad).value;
        const double n_id = optimal_nelbo(q, st_id, quad).value;
        checks.push_back(check_le("shuffling/zipfV8-best-perm-nelbo<=identity", n_best, n_id, 0.0));
        checks.push_back(check_le("shuffling/zipfV8-strict-gap", 1e-6, n_id - n_best, 0.0));
    }
    {
        ZipfGenerator gen(50257, 0.7, 7);
        const auto counts = gen.counts(1000000);
        const auto rows = entropy_report(counts, 16, {1, 2, 3});
        double identity_avg = 0.0, greedy_avg = 0.0, random_mean = 0.0, random_min = HUGE_VAL;
        int n_random = 0;
        for (const auto& r : rows) {
            if (r.strategy == "identity") identity_avg = r.average_bits;
            else if (r.strategy == "greedy") greedy_avg = r.average_bits;
            else if (r.strategy.rfind("random", 0) == 0) {
                random_mean += r.average_bits;
                random_min = std::min(random_min, r.average_bits);
                ++n_random;
            }
        }
        random_mean /= n_random;
        checks.push_back(check_le("shuffling/zipfV50257-random>=0.99bits", 0.99, random_min, 0.0));
        checks.push_back(
            check_le("shuffling/zipfV50257-identity<random", identity_avg, random_min - 1e-6, 0.0));
        checks.push_back(check_le("shuffling/zipfV50257-greedy>=mean(random)", random_mean,
                                  greedy_avg, 1e-12));
    }
    return checks;
}

inline std::vector<CheckResult> run_verification(const std::string& suite,
                                                 std::size_t budget = TokenDist::kDefaultBudget) {
    std::vector<CheckResult> checks;
    auto append = [&](std::vector<CheckResult> more) {
        checks.insert(checks.end(), more.begin(), more.end());
    };
    if (suite == "all" || suite == "entropy-bound") append(verify_entropy_bound(budget));
    if (suite == "all" || suite == "routes") append(verify_routes(budget));
    if (suite == "all" || suite == "identities") append(verify_identities(budget));
    if (suite == "all" || suite == "shuffling") append(verify_shuffling(budget));
    if (checks.empty()) throw Error("unknown verification suite: " + suite);
    return checks;
}

}  // namespace primelab
