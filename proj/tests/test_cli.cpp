#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "primelab/corpus.hpp"
#include "primelab/io.hpp"
#include "primelab/subtok_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string out;
};

std::string cli_path() {
    const char* p = std::getenv("PRIMELAB_CLI");
    REQUIRE_MESSAGE(p != nullptr, "PRIMELAB_CLI must point at the built binary");
    return p;
}

CmdResult run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("primelab_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("usage errors exit 2") {
    CHECK(run("").exit_code == 2);
    CHECK(run("bogus").exit_code == 2);
    CHECK(run("subtok").exit_code == 2);
    CHECK(run("subtok build --ell 3 --out /tmp/x.json").exit_code == 2);  // missing --vocab
    CHECK(run("subtok build --vocab 8 --ell 3 --strategy nope --out /tmp/x.json").exit_code == 2);
    CHECK(run("--help").exit_code == 0);
}

TEST_CASE("io errors exit 3") {
    CHECK(run("subtok info --st /nonexistent/st.json").exit_code == 3);
    TempDir tmp;
    std::ofstream(tmp.file("garbage.json")) << "not json";
    CHECK(run("subtok info --st " + tmp.file("garbage.json")).exit_code == 3);
}

TEST_CASE("subtok build/encode/decode/info round trip") {
    TempDir tmp;
    const auto st_path = tmp.file("st.json");
    const auto r = run("subtok build --vocab 8 --ell 3 --strategy random --seed 42 --out " +
                       st_path);
    CHECK(r.exit_code == 0);
    const auto st = primelab::load_subtokenizer(st_path);
    CHECK(st.vocab_size() == 8);
    CHECK(st.base() == 2);

    const auto enc = run("subtok encode --st " + st_path + " --tokens 5");
    CHECK(enc.exit_code == 0);
    const auto code = json::parse(enc.out)[0]["code"];
    std::string code_str;
    for (const auto& d : code) code_str += (code_str.empty() ? "" : ",") + d.dump();
    const auto dec = run("subtok decode --st " + st_path + " --code " + code_str);
    CHECK(dec.exit_code == 0);
    CHECK(json::parse(dec.out)["token"] == 5);

    const auto info = run("subtok info --st " + st_path);
    CHECK(info.exit_code == 0);
    const auto j = json::parse(info.out);
    CHECK(j["V"] == 8);
    CHECK(j["ell"] == 3);
    CHECK(j["strategy"] == "random");

    // decode of an out-of-image code is a usage-level failure
    const auto st5 = tmp.file("st5.json");
    CHECK(run("subtok build --vocab 5 --ell 3 --out " + st5).exit_code == 0);
    CHECK(run("subtok decode --st " + st5 + " --code 1,1,1").exit_code == 2);
}

TEST_CASE("build is idempotent byte-for-byte") {
    TempDir tmp;
    const auto a = tmp.file("a.json"), b = tmp.file("b.json");
    CHECK(run("subtok build --vocab 97 --ell 7 --strategy random --seed 5 --out " + a).exit_code ==
          0);
    CHECK(run("subtok build --vocab 97 --ell 7 --strategy random --seed 5 --out " + b).exit_code ==
          0);
    CHECK(primelab::read_file(a) == primelab::read_file(b));
}

TEST_CASE("kernels mask and sample") {
    TempDir tmp;
    const auto st_path = tmp.file("st.json");
    REQUIRE(run("subtok build --vocab 4 --ell 2 --out " + st_path).exit_code == 0);

    const auto full = run("kernels mask --st " + st_path + " --tokens 1,2,3 --t 1 --seed 9");
    CHECK(full.exit_code == 0);
    CHECK(json::parse(full.out)["masked_cells"] == 6);

    const auto a = run("kernels mask --st " + st_path + " --tokens 1,2,3 --t 0.5 --seed 9");
    const auto b = run("kernels mask --st " + st_path + " --tokens 1,2,3 --t 0.5 --seed 9");
    CHECK(a.out == b.out);

    const auto s = run("kernels sample --st " + st_path +
                       " --marginal 0.6,0.2,0.1,0.1 --L 2 --K 4 --samples 3 --seed 1");
    CHECK(s.exit_code == 0);
    const auto rows = json::parse(s.out);
    CHECK(rows.size() == 3);
    for (const auto& row : rows)
        for (const auto& t : row["tokens"]) CHECK(t.get<int>() < 4);
}

TEST_CASE("oracle nelbo, profile, best-perm") {
    const auto n = run("oracle nelbo --marginal 0.5,0.25,0.15,0.10 --L 1 --ell 2");
    CHECK(n.exit_code == 0);
    const auto nj = json::parse(n.out);
    CHECK(nj["value_nats"].get<double>() == doctest::Approx(1.2070696).epsilon(1e-4));

    const auto p = run("oracle profile --marginal 0.5,0.5 --L 1 --ell 1 --grid 3");
    CHECK(p.exit_code == 0);
    const auto pj = json::parse(p.out);
    CHECK(pj.size() == 3);
    CHECK(pj[0]["loglik_nats"].get<double>() == doctest::Approx(0.0));
    CHECK(pj[2]["loglik_nats"].get<double>() == doctest::Approx(-std::log(2.0)).epsilon(1e-9));

    const auto bp = run("oracle best-perm --probs 0.5,0.25,0.15,0.10 --ell 2");
    CHECK(bp.exit_code == 0);
    const auto bj = json::parse(bp.out);
    CHECK(bj["perm"] == json::array({0, 3, 1, 2}));
    CHECK(bj["avg_entropy_bits"].get<double>() == doctest::Approx(0.952509).epsilon(1e-4));
}

TEST_CASE("oracle verify exits 0 on a passing suite and writes the report") {
    TempDir tmp;
    const auto report = tmp.file("report.json");
    const auto r = run("oracle verify --suite entropy-bound --report " + report);
    CHECK(r.exit_code == 0);
    const auto j = json::parse(primelab::read_file(report));
    CHECK(!j.empty());
    for (const auto& c : j) CHECK(c["pass"].get<bool>());
}

TEST_CASE("corpus pipeline over temp files") {
    TempDir tmp;
    const auto ids = tmp.file("ids.txt");
    {
        std::ofstream out(ids);
        for (int i = 0; i < 1000; ++i) out << (i % 7 == 0 ? 1 : i % 4) << "\n";
    }
    const auto counts = tmp.file("counts.tsv");
    const auto c = run("corpus count --input " + ids + " --vocab 4 --out " + counts);
    CHECK(c.exit_code == 0);
    CHECK(json::parse(c.out)["total"] == 1000);

    const auto cdf = run("corpus cdf --counts " + counts + " --vocab 4");
    CHECK(cdf.exit_code == 0);
    const auto cj = json::parse(cdf.out);
    CHECK(cj.back()["cdf"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));

    const auto ent =
        run("corpus entropy --counts " + counts + " --vocab 4 --ell 2 --strategy identity");
    CHECK(ent.exit_code == 0);
    const auto ej = json::parse(ent.out);
    CHECK(ej["per_position_bits"].size() == 2);
    CHECK(ej["average_bits"].get<double>() <= 1.0 + 1e-12);

    const auto rep = run("corpus report --counts " + counts + " --vocab 4 --ell 2 --seeds 1,2");
    CHECK(rep.exit_code == 0);
    const auto rj = json::parse(rep.out);
    CHECK(rj.size() == 5);  // identity, 2 random, greedy, maximum
}

TEST_CASE("corpus report row order") {
    TempDir tmp;
    const auto counts = tmp.file("counts.tsv");
    std::ofstream(counts) << "0\t40\n1\t30\n2\t20\n3\t10\n";
    const auto rep = run("corpus report --counts " + counts + " --vocab 4 --ell 2 --seeds 1,2");
    CHECK(rep.exit_code == 0);
    const auto rj = json::parse(rep.out);
    REQUIRE(rj.size() == 5);
    CHECK(rj[0]["strategy"] == "identity");
    CHECK(rj[4]["strategy"] == "maximum");
    CHECK(rj[4]["average_bits"].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("scaling exponents and allocation") {
    const auto e = run("scaling exponents --alpha 0.37 --beta 0.26");
    CHECK(e.exit_code == 0);
    const auto ej = json::parse(e.out);
    CHECK(ej["a_hat"].get<double>() == doctest::Approx(0.4127).epsilon(1e-3));
    CHECK(ej["b_hat"].get<double>() == doctest::Approx(0.5873).epsilon(1e-3));

    const auto o = run(
        "scaling optimal --E 1.3 --A 400 --B 400 --alpha 0.37 --beta 0.26 --C 3.3e19");
    CHECK(o.exit_code == 0);
    const auto oj = json::parse(o.out);
    CHECK(oj["ND_over_C6"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));

    const auto pr = run("scaling predict --E 1.5 --A 0 --B 0 --alpha 0.3 --beta 0.3 --N 1e8 "
                        "--D 1e10");
    CHECK(pr.exit_code == 0);
    CHECK(json::parse(pr.out)["loss"].get<double>() == doctest::Approx(1.5));
}

TEST_CASE("scaling fit on noiseless synthetic points") {
    TempDir tmp;
    const auto csv = tmp.file("points.csv");
    {
        std::ofstream out(csv);
        out << "N,D,loss\n";
        out.precision(17);
        for (double logN : {7.0, 8.0, 9.0, 10.0})
            for (double logD : {9.0, 10.0, 11.0, 12.0}) {
                const double N = std::pow(10.0, logN), D = std::pow(10.0, logD);
                out << N << ',' << D << ','
                    << 1.3 + 400.0 * std::pow(N, -0.37) + 400.0 * std::pow(D, -0.26) << "\n";
            }
    }
    const auto fit_path = tmp.file("fit.json");
    const auto f = run("scaling fit --input " + csv + " --out " + fit_path);
    CHECK(f.exit_code == 0);
    const auto fj = json::parse(f.out);
    CHECK(fj["alphaN"].get<double>() == doctest::Approx(0.37).epsilon(1e-4));
    CHECK(fj["betaD"].get<double>() == doctest::Approx(0.26).epsilon(1e-4));

    const auto pr = run("scaling predict --fit " + fit_path + " --N 1e9 --D 1e11");
    CHECK(pr.exit_code == 0);
    const double expect = 1.3 + 400.0 * std::pow(1e9, -0.37) + 400.0 * std::pow(1e11, -0.26);
    CHECK(json::parse(pr.out)["loss"].get<double>() == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("train run, eval, gradcheck, spectra from checkpoint") {
    TempDir tmp;
    const auto ckpt = tmp.file("ckpt.json");
    const auto hist = tmp.file("hist.csv");
    const auto r = run("train run --vocab 4 --ell 2 --L 2 --steps 40 --batch 8 --seed 3 --out " +
                       ckpt + " --history " + hist);
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(ckpt));
    const auto hist_text = primelab::read_file(hist);
    CHECK(hist_text.rfind("step,loss\n", 0) == 0);

    const auto ev = run("train eval --ckpt " + ckpt + " --seed 3");
    CHECK(ev.exit_code == 0);
    const auto ej = json::parse(ev.out);
    CHECK(ej["method"] == "exact");
    CHECK(ej["nelbo_nats"].get<double>() >= ej["oracle_nelbo_nats"].get<double>() - 1e-8);

    const auto gc = run("train gradcheck --vocab 8 --ell 3 --L 2 --params 10 --seed 4");
    CHECK(gc.exit_code == 0);
    CHECK(json::parse(gc.out)["max_rel_err"].get<double>() < 1e-4);

    const auto sv = run("spectra svd --ckpt " + ckpt + " --matrix w1");
    CHECK(sv.exit_code == 0);
    CHECK(!json::parse(sv.out)["singular_values"].empty());

    const auto sr = run("spectra stable-rank --ckpt " + ckpt + " --matrix w2");
    CHECK(sr.exit_code == 0);
    CHECK(json::parse(sr.out)["stable_rank"].get<double>() >= 1.0);
}

TEST_CASE("spectra from CSV and csv output format") {
    TempDir tmp;
    const auto m = tmp.file("m.csv");
    std::ofstream(m) << "2,0,0\n0,1,0\n0,0,1\n";
    const auto r = run("spectra stable-rank --input " + m);
    CHECK(r.exit_code == 0);
    CHECK(json::parse(r.out)["stable_rank"].get<double>() == doctest::Approx(1.5).epsilon(1e-10));

    const auto c = run("spectra stable-rank --format csv --input " + m);
    CHECK(c.exit_code == 0);
    CHECK(c.out.find("stable_rank,1.5") != std::string::npos);
}

TEST_CASE("PRIMELAB_BUDGET env var limits enumeration") {
    const std::string cmd = "PRIMELAB_BUDGET=8 " + cli_path() +
                            " oracle nelbo --marginal 0.5,0.25,0.15,0.10 --L 2 --ell 2 "
                            "2>/dev/null";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 2);  // 16 joint states > budget 8
    const std::string ok = "PRIMELAB_BUDGET=16 " + cli_path() +
                           " oracle nelbo --marginal 0.5,0.25,0.15,0.10 --L 2 --ell 2 "
                           ">/dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(ok.c_str())) == 0);
}
