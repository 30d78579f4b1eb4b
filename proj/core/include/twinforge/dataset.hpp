#pragma once

#include "twinforge/matrix.hpp"
#include "twinforge/signals.hpp"

#include <array>
#include <string>
#include <string_view>

namespace twinforge {

inline constexpr std::array<std::string_view, 2> kChannelNames{"T_A", "T_B"};

/// One excitation plus the full-order response on the same grid.
struct DataSet {
    std::string id;
    ExcitationSignal excitation;
    Matrix outputs;          // 2 x N, kelvin; row 0 = T_A (core), row 1 = T_B (surface)
    std::string provenance;  // "<fom digest>:<generator seed>"

    std::size_t n_samples() const noexcept { return excitation.grid.n_samples; }

    /// Throws VALIDATION_FAILURE on shape mismatch or non-finite values.
    void validate() const;

    bool operator==(const DataSet&) const = default;
};

} // namespace twinforge
