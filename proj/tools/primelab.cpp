// primelab — command-line surface over the header library.
//
// Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "primelab/corpus.hpp"
#include "primelab/io.hpp"
#include "primelab/kernels.hpp"
#include "primelab/markov.hpp"
#include "primelab/oracle.hpp"
#include "primelab/scaling.hpp"
#include "primelab/schedule.hpp"
#include "primelab/spectra.hpp"
#include "primelab/subtok_io.hpp"
#include "primelab/trainer.hpp"
#include "primelab/trainer_io.hpp"
#include "primelab/verify.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace primelab;

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::size_t enumeration_budget(std::size_t cli_budget) {
    if (cli_budget != 0) return cli_budget;
    if (const char* env = std::getenv("PRIMELAB_BUDGET")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0' || v == 0)
            throw UsageError("PRIMELAB_BUDGET must be a positive integer");
        return static_cast<std::size_t>(v);
    }
    return TokenDist::kDefaultBudget;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw UsageError("cannot parse number: " + tok);
        }
    }
    if (out.empty()) throw UsageError("empty number list");
    return out;
}

std::vector<std::uint32_t> parse_u32s(const std::string& s) {
    std::vector<std::uint32_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
        } catch (const std::exception&) {
            throw UsageError("cannot parse integer: " + tok);
        }
    }
    if (out.empty()) throw UsageError("empty integer list");
    return out;
}

std::string csv_cell(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

/// Arrays of objects become header+rows; flat objects become key,value
/// lines; anything else is emitted as a single JSON cell per line.
std::string to_csv(const json& j) {
    std::ostringstream out;
    if (j.is_array() && !j.empty() && j.front().is_object()) {
        bool first = true;
        for (auto it = j.front().begin(); it != j.front().end(); ++it) {
            if (!first) out << ',';
            out << it.key();
            first = false;
        }
        out << '\n';
        for (const auto& row : j) {
            first = true;
            for (auto it = row.begin(); it != row.end(); ++it) {
                if (!first) out << ',';
                out << csv_cell(it.value());
                first = false;
            }
            out << '\n';
        }
    } else if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            out << it.key() << ',' << csv_cell(it.value()) << '\n';
    } else if (j.is_array()) {
        for (const auto& v : j) out << csv_cell(v) << '\n';
    } else {
        out << csv_cell(j) << '\n';
    }
    return out.str();
}

struct Emitter {
    std::string report_path;
    std::string format = "json";

    void emit(const json& result) const {
        const std::string text =
            format == "csv" ? to_csv(result) : result.dump(2) + "\n";
        std::cout << text;
        if (!report_path.empty()) atomic_write(report_path, text);
    }
};

json grid_to_json(const SubTokenGrid& g) {
    json rows = json::array();
    for (std::uint32_t i = 0; i < g.rows(); ++i) {
        json row = json::array();
        for (std::uint32_t j = 0; j < g.cols(); ++j) row.push_back(g.at(i, j));
        rows.push_back(row);
    }
    return rows;
}

Subtokenizer load_st(const std::string& path) {
    if (path.empty()) throw UsageError("--st <subtokenizer.json> is required");
    return load_subtokenizer(path);
}

TokenDist dist_from_marginal(const std::string& marginal, std::uint32_t L, std::size_t budget) {
    if (marginal.empty()) throw UsageError("--marginal <p0,p1,...> is required");
    return TokenDist::product(parse_doubles(marginal), L, budget);
}

ScalingFit fit_from_args(const std::string& fit_path, double E, double A, double B, double alphaN,
                         double betaD) {
    if (!fit_path.empty()) {
        json j;
        try {
            j = json::parse(read_file(fit_path));
        } catch (const nlohmann::json::exception& e) {
            throw CorruptFile(std::string("cannot parse ") + fit_path + ": " + e.what());
        }
        try {
            return {j.at("E").get<double>(),      j.at("A").get<double>(),
                    j.at("B").get<double>(),      j.at("alphaN").get<double>(),
                    j.at("betaD").get<double>(),  j.value("objective", 0.0)};
        } catch (const nlohmann::json::exception& e) {
            throw CorruptFile(std::string("malformed fit JSON: ") + e.what());
        }
    }
    if (alphaN <= 0.0 || betaD <= 0.0)
        throw UsageError("provide --fit <file> or explicit --alpha/--beta (with --E/--A/--B)");
    return {E, A, B, alphaN, betaD, 0.0};
}

json fit_to_json(const ScalingFit& f) {
    return {{"E", f.E},          {"A", f.A},         {"B", f.B},
            {"alphaN", f.alphaN}, {"betaD", f.betaD}, {"objective", f.objective},
            {"a_hat", f.a_hat()}, {"b_hat", f.b_hat()}, {"G", f.G()}};
}

std::vector<ScalingPoint> parse_points_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("N,D,loss", 0) != 0)
        throw CorruptFile("points CSV must start with header N,D,loss");
    std::vector<ScalingPoint> pts;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string a, b, c;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c))
            throw CorruptFile("points CSV: bad line " + std::to_string(lineno));
        try {
            pts.push_back({std::stod(a), std::stod(b), std::stod(c)});
        } catch (const std::exception&) {
            throw CorruptFile("points CSV: bad number on line " + std::to_string(lineno));
        }
    }
    return pts;
}

DenseMatrix parse_matrix_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(parse_doubles(line));
        if (rows.back().size() != rows.front().size())
            throw CorruptFile("matrix CSV: ragged rows");
    }
    if (rows.empty()) throw CorruptFile("matrix CSV: no rows");
    DenseMatrix m = DenseMatrix::zeros(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c];
    return m;
}

DenseMatrix matrix_from_args(const std::string& input, const std::string& ckpt,
                             const std::string& which) {
    if (!ckpt.empty()) {
        const auto cp = load_checkpoint(ckpt);
        if (which == "w1") return model_w1(cp.model);
        if (which == "w2") return model_w2(cp.model);
        throw UsageError("--matrix must be w1 or w2");
    }
    if (input.empty()) throw UsageError("provide --input <matrix.csv> or --ckpt <ckpt.json>");
    return parse_matrix_csv(read_file(input));
}

ShuffleStrategy parse_strategy(const std::string& s) {
    if (s == "identity") return ShuffleStrategy::Identity;
    if (s == "random") return ShuffleStrategy::Random;
    if (s == "greedy") return ShuffleStrategy::Greedy;
    throw UsageError("unknown strategy: " + s);
}

Schedule parse_schedule(const std::string& kind, double k) {
    if (kind == "linear") return Schedule::linear();
    if (kind == "power") return Schedule::power(k);
    throw UsageError("unknown schedule: " + kind);
}

SequenceSampler markov_sampler(const MarkovChain& chain, std::uint32_t L) {
    return [chain, L](SplitMix64& rng) { return chain.sample_sequence(L, rng); };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked-diffusion subtokenization laboratory"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    Emitter emitter;
    std::size_t cli_budget = 0;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();
    app.add_option("--report", emitter.report_path, "also write the result to this path");
    app.add_option("--format", emitter.format, "output format")
        ->check(CLI::IsMember({"json", "csv"}))
        ->capture_default_str();
    app.add_option("--budget", cli_budget,
                   "enumeration budget (overrides PRIMELAB_BUDGET; default 4096)");

    int exit_code = kExitOk;

    // ------------------------------------------------------------------ subtok
    auto* subtok = app.add_subcommand("subtok", "build/apply/invert subtokenizers");
    subtok->require_subcommand(1)->fallthrough();
    {
        auto* build = subtok->add_subcommand("build", "build and persist a subtokenizer");
        build->fallthrough();
        static std::uint32_t V = 0, ell = 0;
        static std::string strategy = "identity", counts_path, out_path;
        build->add_option("--vocab", V, "vocabulary size")->required();
        build->add_option("--ell", ell, "granularity")->required();
        build->add_option("--strategy", strategy, "identity|random|greedy")
            ->capture_default_str();
        build->add_option("--counts", counts_path, "frequency TSV (greedy strategy)");
        build->add_option("--out", out_path, "output path")->required();
        build->callback([&]() {
            Subtokenizer st = [&]() {
                switch (parse_strategy(strategy)) {
                    case ShuffleStrategy::Identity: return Subtokenizer::identity(V, ell);
                    case ShuffleStrategy::Random: return Subtokenizer::random(V, ell, seed);
                    case ShuffleStrategy::Greedy: {
                        if (counts_path.empty())
                            throw UsageError("greedy strategy requires --counts");
                        const auto c = parse_frequency_tsv(read_file(counts_path), V);
                        return Subtokenizer::greedy(V, ell, c.counts);
                    }
                }
                throw UsageError("unknown strategy");
            }();
            save_subtokenizer(st, out_path);
            emitter.emit(json{{"path", out_path},
                              {"V", st.vocab_size()},
                              {"ell", st.granularity()},
                              {"b", st.base()},
                              {"strategy", to_string(st.strategy())}});
        });

        auto* encode = subtok->add_subcommand("encode", "token ids to sub-token codes");
        encode->fallthrough();
        static std::string enc_st, enc_tokens;
        encode->add_option("--st", enc_st, "subtokenizer JSON")->required();
        encode->add_option("--tokens", enc_tokens, "comma-separated token ids")->required();
        encode->callback([&]() {
            const auto st = load_st(enc_st);
            json rows = json::array();
            for (auto t : parse_u32s(enc_tokens))
                rows.push_back({{"token", t}, {"code", st.encode(t)}});
            emitter.emit(rows);
        });

        auto* decode = subtok->add_subcommand("decode", "sub-token code to token id");
        decode->fallthrough();
        static std::string dec_st, dec_code;
        decode->add_option("--st", dec_st, "subtokenizer JSON")->required();
        decode->add_option("--code", dec_code, "comma-separated digits")->required();
        decode->callback([&]() {
            const auto st = load_st(dec_st);
            const auto digits = parse_u32s(dec_code);
            emitter.emit(json{{"token", st.decode(SubTokenCode(digits.begin(), digits.end()))}});
        });

        auto* info = subtok->add_subcommand("info", "describe a persisted subtokenizer");
        info->fallthrough();
        static std::string info_st;
        info->add_option("--st", info_st, "subtokenizer JSON")->required();
        info->callback([&]() {
            const auto st = load_st(info_st);
            json j{{"V", st.vocab_size()},
                   {"ell", st.granularity()},
                   {"b", st.base()},
                   {"strategy", to_string(st.strategy())},
                   {"max_ell", max_granularity(st.vocab_size())},
                   {"checksum", fnv1a64_perm(st.perm())}};
            if (st.seed()) j["seed"] = *st.seed();
            emitter.emit(j);
        });
    }

    // ----------------------------------------------------------------- kernels
    auto* kernels = app.add_subcommand("kernels", "forward/reverse diffusion kernels");
    kernels->require_subcommand(1)->fallthrough();
    {
        auto* mask = kernels->add_subcommand("mask", "forward-mask a token sequence");
        mask->fallthrough();
        static std::string m_st, m_tokens, m_sched = "linear";
        static double m_t = 0.5, m_k = 2.0;
        mask->add_option("--st", m_st, "subtokenizer JSON")->required();
        mask->add_option("--tokens", m_tokens, "comma-separated token ids")->required();
        mask->add_option("--t", m_t, "diffusion time in [0,1]")->capture_default_str();
        mask->add_option("--schedule", m_sched, "linear|power")->capture_default_str();
        mask->add_option("--k", m_k, "power-schedule exponent")->capture_default_str();
        mask->callback([&]() {
            const auto st = load_st(m_st);
            const auto y0 = SubTokenGrid::from_tokens(st, parse_u32s(m_tokens));
            const auto yt = forward_mask(y0, parse_schedule(m_sched, m_k), m_t, seed);
            emitter.emit(json{{"t", m_t},
                              {"alpha", parse_schedule(m_sched, m_k).value(m_t)},
                              {"masked_cells", yt.masked_count()},
                              {"grid", grid_to_json(yt)}});
        });

        auto* sample = kernels->add_subcommand(
            "sample", "ancestral sampling with the exact Bayes posterior");
        sample->fallthrough();
        static std::string s_st, s_marginal, s_sched = "linear";
        static std::uint32_t s_L = 1, s_K = 16, s_n = 1;
        static double s_k = 2.0;
        sample->add_option("--st", s_st, "subtokenizer JSON")->required();
        sample->add_option("--marginal", s_marginal, "token marginal p0,p1,... (product data)")
            ->required();
        sample->add_option("--L", s_L, "sequence length")->capture_default_str();
        sample->add_option("--K", s_K, "number of reverse steps")->capture_default_str();
        sample->add_option("--samples", s_n, "number of sequences")->capture_default_str();
        sample->add_option("--schedule", s_sched, "linear|power")->capture_default_str();
        sample->add_option("--k", s_k, "power-schedule exponent")->capture_default_str();
        sample->callback([&]() {
            const auto st = load_st(s_st);
            const auto q = dist_from_marginal(s_marginal, s_L, enumeration_budget(cli_budget));
            if (q.V != st.vocab_size()) throw UsageError("marginal size != subtokenizer V");
            const auto post = exact_posterior(q, st);
            const auto sched = parse_schedule(s_sched, s_k);
            json rows = json::array();
            for (std::uint32_t i = 0; i < s_n; ++i)
                rows.push_back(
                    json{{"tokens", primelab::sample(post, st, s_L, s_K, sched,
                                                     substream_key(seed, i))}});
            emitter.emit(rows);
        });
    }

    // ------------------------------------------------------------------ oracle
    auto* oracle = app.add_subcommand("oracle", "exact-enumeration verification oracle");
    oracle->require_subcommand(1)->fallthrough();
    {
        auto* verify = oracle->add_subcommand("verify", "run the verification suites");
        verify->fallthrough();
        static std::string suite = "all";
        verify->add_option("--suite", suite, "all|entropy-bound|routes|identities|shuffling")
            ->capture_default_str();
        verify->callback([&]() {
            const auto checks = run_verification(suite, enumeration_budget(cli_budget));
            bool all_pass = true;
            for (const auto& c : checks) all_pass = all_pass && c.pass;
            emitter.emit(json::parse(checks_to_json(checks).dump()));
            if (!all_pass) exit_code = kExitVerifyFail;
        });

        auto* profile = oracle->add_subcommand("profile", "per-time expected log posterior");
        profile->fallthrough();
        static std::string p_marginal;
        static std::uint32_t p_L = 1, p_ell = 1, p_grid = 11;
        profile->add_option("--marginal", p_marginal, "token marginal p0,p1,...")->required();
        profile->add_option("--L", p_L, "sequence length")->capture_default_str();
        profile->add_option("--ell", p_ell, "granularity")->capture_default_str();
        profile->add_option("--grid", p_grid, "number of t values")->capture_default_str();
        profile->callback([&]() {
            const auto q = dist_from_marginal(p_marginal, p_L, enumeration_budget(cli_budget));
            const auto st = Subtokenizer::identity(q.V, p_ell);
            std::vector<double> tg(p_grid);
            for (std::uint32_t i = 0; i < p_grid; ++i)
                tg[i] = static_cast<double>(i) / (p_grid > 1 ? p_grid - 1 : 1);
            const auto vals = loglik_profile(q, st, tg);
            json rows = json::array();
            for (std::uint32_t i = 0; i < p_grid; ++i)
                rows.push_back({{"t", tg[i]}, {"loglik_nats", vals[i]}});
            emitter.emit(rows);
        });

        auto* nelbo = oracle->add_subcommand("nelbo", "optimal NELBO by both routes");
        nelbo->fallthrough();
        static std::string n_marginal, n_st;
        static std::uint32_t n_L = 1, n_ell = 1;
        static std::size_t n_nodes = 64;
        nelbo->add_option("--marginal", n_marginal, "token marginal p0,p1,...")->required();
        nelbo->add_option("--L", n_L, "sequence length")->capture_default_str();
        nelbo->add_option("--ell", n_ell, "granularity (identity subtokenizer)")
            ->capture_default_str();
        nelbo->add_option("--st", n_st, "subtokenizer JSON (overrides --ell)");
        nelbo->add_option("--nodes", n_nodes, "quadrature nodes")->capture_default_str();
        nelbo->callback([&]() {
            const auto q = dist_from_marginal(n_marginal, n_L, enumeration_budget(cli_budget));
            const auto st =
                n_st.empty() ? Subtokenizer::identity(q.V, n_ell) : load_subtokenizer(n_st);
            const auto r = optimal_nelbo(q, st, Quadrature(n_nodes));
            emitter.emit(json{{"value_nats", r.value},
                              {"route_decomposition", r.route_decomposition},
                              {"route_posterior", r.route_posterior},
                              {"entropy_x0_nats", q.entropy_nats()}});
        });

        auto* best = oracle->add_subcommand("best-perm", "brute-force entropy-optimal perm");
        best->fallthrough();
        static std::string b_probs;
        static std::uint32_t b_ell = 1;
        best->add_option("--probs", b_probs, "token probabilities p0,p1,...")->required();
        best->add_option("--ell", b_ell, "granularity")->capture_default_str();
        best->callback([&]() {
            const auto r = best_assignment_bruteforce(parse_doubles(b_probs), b_ell);
            emitter.emit(json{{"perm", r.perm}, {"avg_entropy_bits", r.avg_entropy_bits}});
        });
    }

    // ------------------------------------------------------------------ corpus
    auto* corpus = app.add_subcommand("corpus", "token-frequency auditing");
    corpus->require_subcommand(1)->fallthrough();
    {
        auto* count = corpus->add_subcommand("count", "histogram a token-id stream");
        count->fallthrough();
        static std::string c_input, c_out;
        static std::uint32_t c_V = 0;
        count->add_option("--input", c_input, "newline-delimited id stream")->required();
        count->add_option("--vocab", c_V, "vocabulary size")->required();
        count->add_option("--out", c_out, "output frequency TSV")->required();
        count->callback([&]() {
            const auto c = count_tokens(parse_id_stream(read_file(c_input)), c_V);
            atomic_write(c_out, frequency_tsv(c));
            emitter.emit(json{{"path", c_out}, {"total", c.total}, {"V", c.V}});
        });

        auto* cdf = corpus->add_subcommand("cdf", "cumulative distribution over indices");
        cdf->fallthrough();
        static std::string d_counts;
        static std::uint32_t d_V = 0;
        cdf->add_option("--counts", d_counts, "frequency TSV")->required();
        cdf->add_option("--vocab", d_V, "vocabulary size")->required();
        cdf->callback([&]() {
            const auto c = parse_frequency_tsv(read_file(d_counts), d_V);
            const auto cdfv = token_cdf(c);
            json rows = json::array();
            for (std::uint32_t i = 0; i < d_V; ++i)
                rows.push_back({{"index", i}, {"cdf", cdfv[i]}});
            emitter.emit(rows);
        });

        auto* entropy = corpus->add_subcommand("entropy", "per-position sub-token entropy");
        entropy->fallthrough();
        static std::string e_counts, e_st, e_strategy = "identity";
        static std::uint32_t e_V = 0, e_ell = 0;
        entropy->add_option("--counts", e_counts, "frequency TSV")->required();
        entropy->add_option("--vocab", e_V, "vocabulary size")->required();
        entropy->add_option("--ell", e_ell, "granularity (used when no --st)");
        entropy->add_option("--strategy", e_strategy, "identity|random|greedy")
            ->capture_default_str();
        entropy->add_option("--st", e_st, "subtokenizer JSON (overrides --ell/--strategy)");
        entropy->callback([&]() {
            const auto c = parse_frequency_tsv(read_file(e_counts), e_V);
            Subtokenizer st = [&]() {
                if (!e_st.empty()) return load_subtokenizer(e_st);
                if (e_ell == 0) throw UsageError("provide --st or --ell");
                switch (parse_strategy(e_strategy)) {
                    case ShuffleStrategy::Identity: return Subtokenizer::identity(e_V, e_ell);
                    case ShuffleStrategy::Random: return Subtokenizer::random(e_V, e_ell, seed);
                    case ShuffleStrategy::Greedy:
                        return Subtokenizer::greedy(e_V, e_ell, c.counts);
                }
                throw UsageError("unknown strategy");
            }();
            const auto h = subtoken_entropies(c, st);
            emitter.emit(json{{"per_position_bits", h.per_position},
                              {"average_bits", h.average},
                              {"maximum_bits", std::log2(static_cast<double>(st.base()))}});
        });

        auto* report = corpus->add_subcommand("report", "strategy comparison table");
        report->fallthrough();
        static std::string r_counts, r_seeds = "1,2,3";
        static std::uint32_t r_V = 0, r_ell = 0;
        report->add_option("--counts", r_counts, "frequency TSV")->required();
        report->add_option("--vocab", r_V, "vocabulary size")->required();
        report->add_option("--ell", r_ell, "granularity")->required();
        report->add_option("--seeds", r_seeds, "random-strategy seeds")->capture_default_str();
        report->callback([&]() {
            const auto c = parse_frequency_tsv(read_file(r_counts), r_V);
            std::vector<std::uint64_t> seeds;
            for (auto s : parse_u32s(r_seeds)) seeds.push_back(s);
            json rows = json::array();
            for (const auto& row : entropy_report(c, r_ell, seeds))
                rows.push_back({{"strategy", row.strategy}, {"average_bits", row.average_bits}});
            emitter.emit(rows);
        });
    }

    // ----------------------------------------------------------------- scaling
    auto* scaling = app.add_subcommand("scaling", "power-law loss fitting");
    scaling->require_subcommand(1)->fallthrough();
    {
        auto* fit = scaling->add_subcommand("fit", "fit the loss estimator to N,D,loss points");
        fit->fallthrough();
        static std::string f_input, f_out;
        fit->add_option("--input", f_input, "CSV with header N,D,loss")->required();
        fit->add_option("--out", f_out, "write the fit JSON here");
        fit->callback([&]() {
            const auto pts = parse_points_csv(read_file(f_input));
            const auto f = fit_scaling(pts);
            json result = fit_to_json(f);
            json residuals = json::array();
            for (const auto& p : pts)
                residuals.push_back({{"N", p.N},
                                     {"D", p.D},
                                     {"loss", p.loss},
                                     {"predicted", predict_loss(f, p.N, p.D)},
                                     {"log_residual",
                                      std::log(predict_loss(f, p.N, p.D)) - std::log(p.loss)}});
            result["residuals"] = residuals;
            if (!f_out.empty()) atomic_write(f_out, result.dump(2) + "\n");
            emitter.emit(result);
        });

        auto* predict = scaling->add_subcommand("predict", "evaluate the loss estimator");
        predict->fallthrough();
        static std::string p_fit;
        static double p_E = 0, p_A = 0, p_B = 0, p_alpha = 0, p_beta = 0, p_N = 0, p_D = 0;
        predict->add_option("--fit", p_fit, "fit JSON from `scaling fit`");
        predict->add_option("--E", p_E, "irreducible loss");
        predict->add_option("--A", p_A, "N coefficient");
        predict->add_option("--B", p_B, "D coefficient");
        predict->add_option("--alpha", p_alpha, "N exponent");
        predict->add_option("--beta", p_beta, "D exponent");
        predict->add_option("--N", p_N, "parameters")->required();
        predict->add_option("--D", p_D, "tokens")->required();
        predict->callback([&]() {
            const auto f = fit_from_args(p_fit, p_E, p_A, p_B, p_alpha, p_beta);
            emitter.emit(json{{"N", p_N}, {"D", p_D}, {"loss", predict_loss(f, p_N, p_D)}});
        });

        auto* optimal = scaling->add_subcommand("optimal", "compute-optimal N,D split");
        optimal->fallthrough();
        static std::string o_fit;
        static double o_E = 0, o_A = 0, o_B = 0, o_alpha = 0, o_beta = 0, o_C = 0;
        optimal->add_option("--fit", o_fit, "fit JSON from `scaling fit`");
        optimal->add_option("--E", o_E, "irreducible loss");
        optimal->add_option("--A", o_A, "N coefficient");
        optimal->add_option("--B", o_B, "D coefficient");
        optimal->add_option("--alpha", o_alpha, "N exponent");
        optimal->add_option("--beta", o_beta, "D exponent");
        optimal->add_option("--C", o_C, "compute budget (FLOPs)")->required();
        optimal->callback([&]() {
            const auto f = fit_from_args(o_fit, o_E, o_A, o_B, o_alpha, o_beta);
            const auto a = optimal_allocation(f, o_C);
            emitter.emit(json{{"C", o_C},
                              {"N_opt", a.N_opt},
                              {"D_opt", a.D_opt},
                              {"ND_over_C6", a.N_opt * a.D_opt / (o_C / 6.0)}});
        });

        auto* exps = scaling->add_subcommand("exponents", "allocation exponents from a fit");
        exps->fallthrough();
        static std::string x_fit;
        static double x_alpha = 0, x_beta = 0, x_A = 1.0, x_B = 1.0;
        exps->add_option("--fit", x_fit, "fit JSON from `scaling fit`");
        exps->add_option("--alpha", x_alpha, "N exponent");
        exps->add_option("--beta", x_beta, "D exponent");
        exps->add_option("--A", x_A, "N coefficient (for G)")->capture_default_str();
        exps->add_option("--B", x_B, "D coefficient (for G)")->capture_default_str();
        exps->callback([&]() {
            const auto f = fit_from_args(x_fit, 0.0, x_A, x_B, x_alpha, x_beta);
            const auto e = exponents(f);
            emitter.emit(json{{"a_hat", e.a_hat}, {"b_hat", e.b_hat}, {"G", e.G}});
        });
    }

    // ------------------------------------------------------------------- train
    auto* train_cmd = app.add_subcommand("train", "toy denoiser training/evaluation");
    train_cmd->require_subcommand(1)->fallthrough();
    {
        auto* run = train_cmd->add_subcommand("run", "train on synthetic Markov data");
        run->fallthrough();
        static TrainConfig cfg;
        static std::string t_strategy = "random", t_out, t_history;
        static double t_zipf = 1.0, t_mix = 0.7;
        run->add_option("--vocab", cfg.V, "vocabulary size")->required();
        run->add_option("--ell", cfg.ell, "granularity")->required();
        run->add_option("--L", cfg.L, "sequence length")->required();
        run->add_option("--d", cfg.d, "embedding width")->capture_default_str();
        run->add_option("--hidden", cfg.h, "hidden width")->capture_default_str();
        run->add_option("--strategy", t_strategy, "identity|random")->capture_default_str();
        run->add_option("--steps", cfg.steps, "training steps")->capture_default_str();
        run->add_option("--batch", cfg.batch, "batch size")->capture_default_str();
        run->add_option("--lr", cfg.lr, "learning rate")->capture_default_str();
        run->add_option("--markov-exp", t_zipf, "Markov Zipf exponent")->capture_default_str();
        run->add_option("--markov-mix", t_mix, "Markov rotation mix")->capture_default_str();
        run->add_option("--out", t_out, "checkpoint output path")->required();
        run->add_option("--history", t_history, "loss-history CSV path");
        run->callback([&]() {
            cfg.strategy = parse_strategy(t_strategy);
            if (cfg.strategy == ShuffleStrategy::Greedy)
                throw UsageError("train supports identity|random strategies");
            cfg.seed = seed;
            cfg.subtok_seed = substream_key(seed, 0x7374);
            const auto chain = MarkovChain::synthetic(cfg.V, t_zipf, t_mix);
            const auto result = train(cfg, markov_sampler(chain, cfg.L));
            save_checkpoint(result.model, result.subtok, t_out);
            if (!t_history.empty()) atomic_write(t_history, history_csv(result.history));
            emitter.emit(json{{"checkpoint", t_out},
                              {"steps", cfg.steps},
                              {"final_loss", result.history.back().second}});
        });

        auto* eval = train_cmd->add_subcommand("eval", "NELBO of a checkpointed model");
        eval->fallthrough();
        static std::string v_ckpt;
        static double v_zipf = 1.0, v_mix = 0.7;
        static std::uint32_t v_samples = 256;
        static std::size_t v_nodes = 32;
        eval->add_option("--ckpt", v_ckpt, "checkpoint JSON")->required();
        eval->add_option("--markov-exp", v_zipf, "Markov Zipf exponent")->capture_default_str();
        eval->add_option("--markov-mix", v_mix, "Markov rotation mix")->capture_default_str();
        eval->add_option("--mc-samples", v_samples, "MC samples per node")->capture_default_str();
        eval->add_option("--nodes", v_nodes, "quadrature nodes")->capture_default_str();
        eval->callback([&]() {
            const auto cp = load_checkpoint(v_ckpt);
            const auto& dm = cp.model.dims();
            const auto chain = MarkovChain::synthetic(cp.subtok.vocab_size(), v_zipf, v_mix);
            const Quadrature quad(v_nodes);
            json result;
            const std::size_t budget = enumeration_budget(cli_budget);
            bool enumerable = true;
            {
                std::size_t n = 1;
                for (std::uint32_t i = 0; i < dm.L && enumerable; ++i) {
                    n *= cp.subtok.vocab_size();
                    if (n > budget) enumerable = false;
                }
            }
            if (enumerable) {
                const auto q = chain.to_token_dist(dm.L, budget);
                result["method"] = "exact";
                result["nelbo_nats"] = eval_nelbo_exact(cp.model.posterior(), q, cp.subtok, quad);
                result["oracle_nelbo_nats"] =
                    eval_nelbo_exact(chain.bayes_posterior(cp.subtok), q, cp.subtok, quad);
            } else {
                const auto data = markov_sampler(chain, dm.L);
                const auto m = eval_nelbo_mc(cp.model.posterior(), data, cp.subtok, quad,
                                             v_samples, substream_key(seed, 0x6576));
                const auto o = eval_nelbo_mc(chain.bayes_posterior(cp.subtok), data, cp.subtok,
                                             quad, v_samples, substream_key(seed, 0x6576));
                result["method"] = "mc";
                result["nelbo_nats"] = m.value;
                result["stderr"] = m.stderr_;
                result["oracle_nelbo_nats"] = o.value;
                result["oracle_stderr"] = o.stderr_;
            }
            emitter.emit(result);
        });

        auto* gradcheck = train_cmd->add_subcommand("gradcheck", "finite-difference check");
        gradcheck->fallthrough();
        static std::uint32_t g_V = 8, g_ell = 3, g_L = 2, g_d = 8, g_h = 16, g_params = 20;
        gradcheck->add_option("--vocab", g_V, "vocabulary size")->capture_default_str();
        gradcheck->add_option("--ell", g_ell, "granularity")->capture_default_str();
        gradcheck->add_option("--L", g_L, "sequence length")->capture_default_str();
        gradcheck->add_option("--d", g_d, "embedding width")->capture_default_str();
        gradcheck->add_option("--hidden", g_h, "hidden width")->capture_default_str();
        gradcheck->add_option("--params", g_params, "parameters to check")->capture_default_str();
        gradcheck->callback([&]() {
            const auto st = Subtokenizer::random(g_V, g_ell, substream_key(seed, 0x7374));
            ToyModel m(ToyModel::Dims{g_L, g_ell, st.base(), g_d, g_h},
                       substream_key(seed, 0x696e6974));
            std::vector<SubTokenGrid> batch;
            SplitMix64 rng(substream_key(seed, 0x64617461));
            for (int e = 0; e < 4; ++e) {
                std::vector<std::uint32_t> seq(g_L);
                for (auto& t : seq) t = static_cast<std::uint32_t>(rng.next_below(g_V));
                batch.push_back(SubTokenGrid::from_tokens(st, seq));
            }
            const auto r = gradient_check(m, batch, Schedule::linear(),
                                          substream_key(seed, 0x6d63), g_params,
                                          substream_key(seed, 0x7069));
            emitter.emit(json{{"checked", r.checked}, {"max_rel_err", r.max_rel_err}});
            if (r.max_rel_err >= 1e-4) exit_code = kExitVerifyFail;
        });
    }

    // ----------------------------------------------------------------- spectra
    auto* spectra = app.add_subcommand("spectra", "singular values and stable rank");
    spectra->require_subcommand(1)->fallthrough();
    {
        auto* svd = spectra->add_subcommand("svd", "singular values of a matrix");
        svd->fallthrough();
        static std::string s_input, s_ckpt, s_which = "w1";
        svd->add_option("--input", s_input, "matrix CSV (rows of comma-separated reals)");
        svd->add_option("--ckpt", s_ckpt, "trainer checkpoint JSON");
        svd->add_option("--matrix", s_which, "w1|w2 (with --ckpt)")->capture_default_str();
        svd->callback([&]() {
            const auto m = matrix_from_args(s_input, s_ckpt, s_which);
            emitter.emit(json{{"rows", m.rows},
                              {"cols", m.cols},
                              {"singular_values", singular_values(m)}});
        });

        auto* sr = spectra->add_subcommand("stable-rank", "Frobenius^2 over spectral^2");
        sr->fallthrough();
        static std::string r_input, r_ckpt, r_which = "w1";
        sr->add_option("--input", r_input, "matrix CSV (rows of comma-separated reals)");
        sr->add_option("--ckpt", r_ckpt, "trainer checkpoint JSON");
        sr->add_option("--matrix", r_which, "w1|w2 (with --ckpt)")->capture_default_str();
        sr->callback([&]() {
            const auto m = matrix_from_args(r_input, r_ckpt, r_which);
            emitter.emit(json{{"rows", m.rows},
                              {"cols", m.cols},
                              {"stable_rank", stable_rank(m)}});
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const CorruptFile& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return exit_code;
}
