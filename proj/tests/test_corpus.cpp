#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "primelab/corpus.hpp"
#include "primelab/oracle.hpp"

using namespace primelab;

TEST_CASE("count_tokens basics") {
    const auto c = count_tokens({0, 0, 0, 1}, 2);
    CHECK(c.counts == std::vector<std::uint64_t>{3, 1});
    CHECK(c.total == 4);

    const auto empty = count_tokens({}, 4);
    CHECK(empty.total == 0);

    CHECK_THROWS_WITH_AS(count_tokens({0, 1, 5}, 2), doctest::Contains("position 2"),
                         TokenOutOfRange);
}

TEST_CASE("sharded counting merges exactly") {
    ZipfGenerator gen(100, 1.0, 7);
    std::vector<std::uint32_t> ids;
    for (int i = 0; i < 20000; ++i) ids.push_back(gen.next());
    const auto whole = count_tokens(ids, 100);
    auto a = count_tokens(ids.begin(), ids.begin() + 7000, 100u);
    const auto b = count_tokens(ids.begin() + 7000, ids.end(), 100u);
    a.merge(b);
    CHECK(a.counts == whole.counts);
    CHECK(a.total == whole.total);
    CHECK_THROWS_AS(a.merge(TokenCounts::zeros(99)), ShapeMismatch);
}

TEST_CASE("token_cdf") {
    TokenCounts c = TokenCounts::zeros(2);
    c.add(0, 3);
    c.add(1, 1);
    const auto cdf = token_cdf(c);
    CHECK(cdf[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(cdf[1] == doctest::Approx(1.0).epsilon(1e-12));

    TokenCounts u = TokenCounts::zeros(8);
    for (std::uint32_t i = 0; i < 8; ++i) u.add(i, 5);
    const auto ucdf = token_cdf(u);
    for (std::uint32_t i = 0; i < 8; ++i)
        CHECK(ucdf[i] == doctest::Approx((i + 1) / 8.0).epsilon(1e-12));

    CHECK_THROWS_AS(token_cdf(TokenCounts::zeros(4)), EmptyCounts);
}

TEST_CASE("zipf cdf lies above the diagonal") {
    ZipfGenerator gen(64, 1.0, 3);
    const auto c = gen.counts(100000);
    const auto cdf = token_cdf(c);
    double max_dev = 0.0;
    for (std::uint32_t i = 0; i + 1 < 64; ++i)
        max_dev = std::max(max_dev, cdf[i] - (i + 1) / 64.0);
    CHECK(max_dev > 0.3);
}

TEST_CASE("subtoken_entropies closed forms") {
    {
        TokenCounts u = TokenCounts::zeros(16);
        for (std::uint32_t i = 0; i < 16; ++i) u.add(i, 3);
        const auto h = subtoken_entropies(u, Subtokenizer::random(16, 4, 11));
        for (double v : h.per_position) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(h.average == doctest::Approx(1.0).epsilon(1e-12));
    }
    {
        TokenCounts c = TokenCounts::zeros(4);
        c.add(0, 40);
        c.add(1, 30);
        c.add(2, 20);
        c.add(3, 10);
        const auto h = subtoken_entropies(c, Subtokenizer::identity(4, 2));
        CHECK(h.per_position[0] == doctest::Approx(entropy_bits({0.7, 0.3})).epsilon(1e-12));
        CHECK(h.per_position[1] == doctest::Approx(entropy_bits({0.6, 0.4})).epsilon(1e-12));
        CHECK(h.average == doctest::Approx(0.926120).epsilon(1e-5));

        const auto best = best_assignment_bruteforce(c.probs(), 2);
        const auto st = subtokenizer_from_parts(4, 2, best.perm, ShuffleStrategy::Greedy, {});
        const auto hb = subtoken_entropies(c, st);
        CHECK(hb.average == doctest::Approx(best.avg_entropy_bits).epsilon(1e-12));
        CHECK(hb.average == doctest::Approx(0.9855).epsilon(1e-4));
    }
    CHECK_THROWS_AS(subtoken_entropies(TokenCounts::zeros(4), Subtokenizer::identity(4, 2)),
                    EmptyCounts);
}

TEST_CASE("entropy_report ordering and directions") {
    {
        TokenCounts u = TokenCounts::zeros(8);
        for (std::uint32_t i = 0; i < 8; ++i) u.add(i, 2);
        const auto rows = entropy_report(u, 3, {1, 2});
        CHECK(rows.size() == 5);
        CHECK(rows.front().strategy == "identity");
        CHECK(rows.back().strategy == "maximum");
        for (const auto& r : rows)
            CHECK(r.average_bits == doctest::Approx(1.0).epsilon(1e-12));
    }
    {
        ZipfGenerator gen(1024, 1.0, 7);
        const auto c = gen.counts(200000);
        const auto rows = entropy_report(c, 10, {1, 2, 3});
        double identity = 0, greedy = 0, rand_sum = 0, rand_min = 1e9;
        int n_rand = 0;
        for (const auto& r : rows) {
            if (r.strategy == "identity") identity = r.average_bits;
            if (r.strategy == "greedy") greedy = r.average_bits;
            if (r.strategy.rfind("random", 0) == 0) {
                rand_sum += r.average_bits;
                rand_min = std::min(rand_min, r.average_bits);
                ++n_rand;
            }
            CHECK(r.average_bits <= 1.0 + 1e-12);
            CHECK(r.average_bits >= 0.0);
        }
        CHECK(identity < rand_min);
        CHECK(greedy >= rand_sum / n_rand);
    }
}

TEST_CASE("frequency TSV round trip and validation") {
    TokenCounts c = TokenCounts::zeros(6);
    c.add(0, 10);
    c.add(2, 5);
    c.add(5, 1);
    const auto text = frequency_tsv(c);
    const auto back = parse_frequency_tsv(text, 6);
    CHECK(back.counts == c.counts);
    CHECK(back.total == c.total);

    CHECK_THROWS_AS(parse_frequency_tsv("1\t5\n1\t4\n", 4), CorruptFile);
    CHECK_THROWS_AS(parse_frequency_tsv("2\t5\n1\t4\n", 4), CorruptFile);
    CHECK_THROWS_AS(parse_frequency_tsv("junk\n", 4), CorruptFile);
    CHECK_THROWS_AS(parse_frequency_tsv("9\t5\n", 4), TokenOutOfRange);
}

TEST_CASE("id stream parsing") {
    const auto ids = parse_id_stream("3\n1\n4\n1\n5\n");
    CHECK(ids == std::vector<std::uint32_t>{3, 1, 4, 1, 5});
    CHECK(parse_id_stream("").empty());
}

TEST_CASE("zipf generator probabilities") {
    ZipfGenerator gen(10, 1.0, 1);
    const auto p = gen.probs();
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        sum += p[i];
        if (i > 0) CHECK(p[i] < p[i - 1]);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    const auto c = gen.counts(50000);
    CHECK(c.total == 50000);
}
