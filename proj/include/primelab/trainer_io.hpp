#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "primelab/io.hpp"
#include "primelab/spectra.hpp"
#include "primelab/subtok_io.hpp"
#include "primelab/trainer.hpp"

namespace primelab {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    ToyModel model;
    Subtokenizer subtok;
};

inline nlohmann::json checkpoint_to_json(const ToyModel& m, const Subtokenizer& st) {
    const auto& d = m.dims();
    nlohmann::json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["dims"] = {{"L", d.L}, {"ell", d.ell}, {"b", d.b}, {"d", d.d}, {"h", d.h}};
    j["theta"] = m.theta();
    j["subtok"] = subtokenizer_to_json(st);
    return j;
}

inline void save_checkpoint(const ToyModel& m, const Subtokenizer& st,
                            const std::filesystem::path& path) {
    atomic_write(path, checkpoint_to_json(m, st).dump(2) + "\n");
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
            throw CorruptFile("unsupported checkpoint format_version");
        const auto& jd = j.at("dims");
        const ToyModel::Dims dims{jd.at("L").get<std::uint32_t>(), jd.at("ell").get<std::uint32_t>(),
                                  jd.at("b").get<std::uint32_t>(), jd.at("d").get<std::uint32_t>(),
                                  jd.at("h").get<std::uint32_t>()};
        auto theta = j.at("theta").get<std::vector<double>>();
        if (theta.size() != dims.total())
            throw CorruptFile("checkpoint theta size does not match dims");
        auto st = subtokenizer_from_json(j.at("subtok"));
        if (st.granularity() != dims.ell || st.base() != dims.b)
            throw CorruptFile("checkpoint subtokenizer does not match dims");
        ToyModel model(dims, 0);
        model.theta() = std::move(theta);
        return {std::move(model), std::move(st)};
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(std::string("malformed checkpoint JSON: ") + e.what());
    }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(std::string("cannot parse ") + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

inline std::string history_csv(const std::vector<std::pair<std::uint32_t, double>>& history) {
    std::ostringstream out;
    out << "step,loss\n";
    out.precision(17);
    for (const auto& [step, loss] : history) out << step << ',' << loss << '\n';
    return out.str();
}

/// The hidden-layer weight matrices of a checkpointed model, for spectral
/// analysis: W1 is h x d, W2 is (ell*b) x h.
inline DenseMatrix model_w1(const ToyModel& m) {
    const auto& dm = m.dims();
    DenseMatrix out = DenseMatrix::zeros(dm.h, dm.d);
    for (std::uint32_t r = 0; r < dm.h; ++r)
        for (std::uint32_t k = 0; k < dm.d; ++k) out.at(r, k) = m.w1(r, k);
    return out;
}

inline DenseMatrix model_w2(const ToyModel& m) {
    const auto& dm = m.dims();
    DenseMatrix out = DenseMatrix::zeros(static_cast<std::size_t>(dm.ell) * dm.b, dm.h);
    for (std::uint32_t j = 0; j < dm.ell; ++j)
        for (std::uint32_t v = 0; v < dm.b; ++v)
            for (std::uint32_t r = 0; r < dm.h; ++r)
                out.at(static_cast<std::size_t>(j) * dm.b + v, r) = m.w2(j, v, r);
    return out;
}

}  // namespace primelab
