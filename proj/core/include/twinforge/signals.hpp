#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace twinforge {

/// Uniform sampling grid: sample k sits at t0 + k * dt.
struct TimeGrid {
    std::size_t n_samples = 280;
    double dt = 5.0;
    double t0 = 0.0;

    double time(std::size_t k) const noexcept { return t0 + static_cast<double>(k) * dt; }
    double end() const noexcept { return time(n_samples - 1); }
    double duration() const noexcept { return static_cast<double>(n_samples - 1) * dt; }

    /// Throws INVALID_CONFIG unless n_samples >= 2 and dt > 0.
    void validate() const;

    bool operator==(const TimeGrid&) const = default;
};

enum class SignalKind { Aprbs, Multisine, SinAprbs };

std::string_view to_string(SignalKind kind) noexcept;
SignalKind signal_kind_from_string(std::string_view text);

struct Jump {
    double time = 0.0;  // seconds; first sample of the new level
    double delta = 0.0; // kelvin

    bool operator==(const Jump&) const = default;
};

struct ExcitationSignal {
    TimeGrid grid;
    std::vector<double> values; // oven temperature per sample, kelvin
    SignalKind kind = SignalKind::Aprbs;
    std::vector<Jump> jumps;    // empty for multisines
    std::uint64_t seed = 0;
    std::string id;

    /// Plateau levels reconstructed from the first value and the jump deltas.
    std::vector<double> levels() const;

    bool operator==(const ExcitationSignal&) const = default;
};

enum class FirstValueMode { Random, Fixed };

struct AprbsConfig {
    double amp_min = 280.0;
    double amp_max = 470.0;
    int n_levels = 5;
    double hold_min = 150.0;
    double hold_max = 500.0;
    double transition_time = 0.0;
    FirstValueMode first_value_mode = FirstValueMode::Random;
    double first_value = 280.0; // used when first_value_mode == Fixed

    void validate(const TimeGrid& grid) const;
};

enum class PhaseMode { Random, Schroeder };

struct MultisineConfig {
    double amp_min = 280.0;
    double amp_max = 470.0;
    int n_harmonics = 5;
    double f_min = 1.0 / 1400.0;
    double f_max = 8.0 / 1400.0;
    PhaseMode phase_mode = PhaseMode::Random;

    void validate(const TimeGrid& grid) const;
};

/// Piecewise-constant signal with `cfg.n_levels` random levels and random,
/// grid-snapped hold times. Deterministic in (cfg, grid, seed).
/// Throws INVALID_CONFIG or DURATION_TOO_SHORT.
ExcitationSignal gen_aprbs(const AprbsConfig& cfg, const TimeGrid& grid, std::uint64_t seed);

/// Sum of equally spaced unit sinusoids rescaled onto [amp_min, amp_max].
ExcitationSignal gen_multisine(const MultisineConfig& cfg, const TimeGrid& grid, std::uint64_t seed);

/// APRBS whose steps are replaced by half-cosine ramps of width
/// `cfg.transition_time` centred on each jump. Shares the plateau schedule of
/// gen_aprbs for the same seed.
ExcitationSignal gen_sinaprbs(const AprbsConfig& cfg, const TimeGrid& grid, std::uint64_t seed);

/// Linear interpolation between bracketing samples; exact at grid nodes.
/// Throws OUT_OF_RANGE outside [t0, t_end].
double sample_at(const ExcitationSignal& signal, double t);
double sample_at(std::span<const double> values, const TimeGrid& grid, double t);

} // namespace twinforge
