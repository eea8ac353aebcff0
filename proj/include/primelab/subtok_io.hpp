#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "primelab/io.hpp"
#include "primelab/subtok.hpp"

namespace primelab {

inline nlohmann::json subtokenizer_to_json(const Subtokenizer& st) {
    nlohmann::json j;
    j["format_version"] = Subtokenizer::kFormatVersion;
    j["V"] = st.vocab_size();
    j["ell"] = st.granularity();
    j["b"] = st.base();
    j["strategy"] = to_string(st.strategy());
    if (st.seed()) j["seed"] = *st.seed();
    j["perm"] = st.perm();
    j["checksum"] = fnv1a64_perm(st.perm());
    return j;
}

inline void save_subtokenizer(const Subtokenizer& st, const std::filesystem::path& path) {
    atomic_write(path, subtokenizer_to_json(st).dump(2) + "\n");
}

inline Subtokenizer subtokenizer_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format_version").get<int>() != Subtokenizer::kFormatVersion)
            throw CorruptFile("unsupported subtokenizer format_version");
        const auto V = j.at("V").get<std::uint32_t>();
        const auto ell = j.at("ell").get<std::uint32_t>();
        auto perm = j.at("perm").get<std::vector<std::uint32_t>>();
        if (j.at("checksum").get<std::uint64_t>() != fnv1a64_perm(perm))
            throw CorruptFile("subtokenizer checksum mismatch");
        const std::string strat = j.at("strategy").get<std::string>();
        ShuffleStrategy strategy = ShuffleStrategy::Identity;
        if (strat == "random")
            strategy = ShuffleStrategy::Random;
        else if (strat == "greedy")
            strategy = ShuffleStrategy::Greedy;
        else if (strat != "identity")
            throw CorruptFile("unknown strategy: " + strat);
        std::optional<std::uint64_t> seed;
        if (j.contains("seed")) seed = j["seed"].get<std::uint64_t>();
        auto st = subtokenizer_from_parts(V, ell, std::move(perm), strategy, seed);
        if (j.at("b").get<std::uint32_t>() != st.base())
            throw CorruptFile("stored b does not match ceil(V^(1/ell))");
        return st;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(std::string("malformed subtokenizer JSON: ") + e.what());
    }
}

inline Subtokenizer load_subtokenizer(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(std::string("cannot parse ") + path.string() + ": " + e.what());
    }
    return subtokenizer_from_json(j);
}

}  // namespace primelab
