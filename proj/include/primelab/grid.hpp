#pragma once

#include <cstdint>
#include <vector>

#include "primelab/error.hpp"
#include "primelab/subtok.hpp"

namespace primelab {

/// Sentinel for a masked cell.
inline constexpr std::int32_t kMask = -1;

/// L x ell grid of sub-token cells; each cell is a digit in [0,b) or MASK.
class SubTokenGrid {
public:
    SubTokenGrid(std::uint32_t L, std::uint32_t ell, std::int32_t fill = kMask)
        : L_(L), ell_(ell), cells_(static_cast<std::size_t>(L) * ell, fill) {}

    std::uint32_t rows() const { return L_; }
    std::uint32_t cols() const { return ell_; }
    std::size_t size() const { return cells_.size(); }

    std::int32_t& at(std::uint32_t row, std::uint32_t col) { return cells_[idx(row, col)]; }
    std::int32_t at(std::uint32_t row, std::uint32_t col) const { return cells_[idx(row, col)]; }
    bool masked(std::uint32_t row, std::uint32_t col) const { return at(row, col) == kMask; }

    std::size_t masked_count() const {
        std::size_t n = 0;
        for (auto c : cells_) n += (c == kMask);
        return n;
    }
    bool mask_free() const { return masked_count() == 0; }

    const std::vector<std::int32_t>& cells() const { return cells_; }

    bool operator==(const SubTokenGrid& o) const = default;

    /// Encode a token sequence into a mask-free grid.
    static SubTokenGrid from_tokens(const Subtokenizer& st, const std::vector<std::uint32_t>& tokens) {
        SubTokenGrid g(static_cast<std::uint32_t>(tokens.size()), st.granularity());
        for (std::uint32_t i = 0; i < tokens.size(); ++i) {
            const auto code = st.encode(tokens[i]);
            for (std::uint32_t j = 0; j < st.granularity(); ++j)
                g.at(i, j) = static_cast<std::int32_t>(code[j]);
        }
        return g;
    }

    /// Decode a mask-free grid back to tokens; throws InvalidCode on codes
    /// outside the image of the subtokenizer.
    std::vector<std::uint32_t> to_tokens(const Subtokenizer& st) const {
        if (ell_ != st.granularity()) throw ShapeMismatch("grid cols != subtokenizer ell");
        std::vector<std::uint32_t> out(L_);
        for (std::uint32_t i = 0; i < L_; ++i) {
            SubTokenCode code(ell_);
            for (std::uint32_t j = 0; j < ell_; ++j) {
                if (masked(i, j)) throw InvalidCode("to_tokens: grid contains MASK");
                code[j] = static_cast<std::uint32_t>(at(i, j));
            }
            out[i] = st.decode(code);
        }
        return out;
    }

private:
    std::size_t idx(std::uint32_t row, std::uint32_t col) const {
        return static_cast<std::size_t>(row) * ell_ + col;
    }
    std::uint32_t L_;
    std::uint32_t ell_;
    std::vector<std::int32_t> cells_;
};

}  // namespace primelab
