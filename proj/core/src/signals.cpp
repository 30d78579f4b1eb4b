#include "twinforge/signals.hpp"

#include "random.hpp"
#include "twinforge/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace twinforge {

void TimeGrid::validate() const
{
    require(n_samples >= 2, ErrorCode::InvalidConfig, "time grid needs at least 2 samples");
    require(std::isfinite(dt) && dt > 0.0, ErrorCode::InvalidConfig, "time grid dt must be positive");
    require(std::isfinite(t0), ErrorCode::InvalidConfig, "time grid t0 must be finite");
}

std::string_view to_string(SignalKind kind) noexcept
{
    switch (kind) {
    case SignalKind::Aprbs: return "APRBS";
    case SignalKind::Multisine: return "MULTISINE";
    case SignalKind::SinAprbs: return "SINAPRBS";
    }
    return "APRBS";
}

SignalKind signal_kind_from_string(std::string_view text)
{
    if (text == "APRBS") return SignalKind::Aprbs;
    if (text == "MULTISINE") return SignalKind::Multisine;
    if (text == "SINAPRBS") return SignalKind::SinAprbs;
    fail(ErrorCode::ParseFailure, "unknown signal kind '" + std::string(text) + "'");
}

std::vector<double> ExcitationSignal::levels() const
{
    std::vector<double> out;
    if (values.empty()) return out;
    out.reserve(jumps.size() + 1);
    out.push_back(values.front());
    for (const auto& j : jumps) {
        out.push_back(out.back() + j.delta);
    }
    return out;
}

void AprbsConfig::validate(const TimeGrid& grid) const
{
    grid.validate();
    require(std::isfinite(amp_min) && std::isfinite(amp_max) && amp_min < amp_max,
            ErrorCode::InvalidConfig, "APRBS amplitude range must satisfy amp_min < amp_max");
    require(n_levels >= 2, ErrorCode::InvalidConfig, "APRBS needs n_levels >= 2");
    require(hold_min > 0.0 && hold_min <= hold_max, ErrorCode::InvalidConfig,
            "APRBS hold times must satisfy 0 < hold_min <= hold_max");
    require(static_cast<double>(n_levels - 1) * hold_min <= grid.duration(), ErrorCode::InvalidConfig,
            "APRBS (n_levels-1)*hold_min exceeds the signal duration");
    require(transition_time >= 0.0 && transition_time <= hold_min, ErrorCode::InvalidConfig,
            "APRBS transition_time must lie in [0, hold_min]");
    if (first_value_mode == FirstValueMode::Fixed) {
        require(first_value >= amp_min && first_value <= amp_max, ErrorCode::InvalidConfig,
                "APRBS fixed first value outside the amplitude range");
    }
}

void MultisineConfig::validate(const TimeGrid& grid) const
{
    grid.validate();
    require(std::isfinite(amp_min) && std::isfinite(amp_max) && amp_min < amp_max,
            ErrorCode::InvalidConfig, "multisine amplitude range must satisfy amp_min < amp_max");
    require(n_harmonics >= 1, ErrorCode::InvalidConfig, "multisine needs n_harmonics >= 1");
    const double nyquist = 0.5 / grid.dt;
    require(f_min > 0.0 && f_min < f_max && f_max <= nyquist, ErrorCode::InvalidConfig,
            "multisine frequencies must satisfy 0 < f_min < f_max <= Nyquist");
}

namespace {

struct Schedule {
    std::vector<std::size_t> starts; // first sample index of every plateau
    std::vector<double> levels;
};

// Draw order is fixed (first level, then per plateau: hold, next level) so the
// schedule is identical for APRBS and sinAPRBS sharing a seed.
Schedule draw_schedule(const AprbsConfig& cfg, const TimeGrid& grid, std::uint64_t seed)
{
    detail::Rng rng(seed);
    const auto last = grid.n_samples - 1;
    const auto n = static_cast<std::size_t>(cfg.n_levels);
    const auto min_steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.hold_min / grid.dt)));

    Schedule s;
    s.starts.push_back(0);
    s.levels.push_back(cfg.first_value_mode == FirstValueMode::Fixed ? cfg.first_value
                                                                     : rng.uniform(cfg.amp_min, cfg.amp_max));
    for (std::size_t p = 1; p < n; ++p) {
        const double hold = rng.uniform(cfg.hold_min, cfg.hold_max);
        auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hold / grid.dt)));

        // Later jump plateaus keep room for hold_min; the trailing plateau for one sample.
        const std::size_t reserve = (n - 1 - p) * min_steps + 1;
        const std::size_t pos = s.starts.back();
        if (pos + 1 + reserve > last + 1) {
            fail(ErrorCode::DurationTooShort, "APRBS plateaus do not fit into the grid");
        }
        const std::size_t cap = last + 1 - reserve - pos;
        steps = std::min(steps, cap);
        if (steps < 1) {
            fail(ErrorCode::DurationTooShort, "APRBS plateaus do not fit into the grid");
        }
        s.starts.push_back(pos + steps);

        double level = rng.uniform(cfg.amp_min, cfg.amp_max);
        while (level == s.levels.back()) {
            level = rng.uniform(cfg.amp_min, cfg.amp_max);
        }
        s.levels.push_back(level);
    }
    if (s.starts.back() > last) {
        fail(ErrorCode::DurationTooShort, "APRBS trailing plateau is empty");
    }
    return s;
}

ExcitationSignal emit_steps(const Schedule& s, const TimeGrid& grid, std::uint64_t seed)
{
    ExcitationSignal sig;
    sig.grid = grid;
    sig.kind = SignalKind::Aprbs;
    sig.seed = seed;
    sig.values.resize(grid.n_samples);
    for (std::size_t p = 0; p < s.starts.size(); ++p) {
        const auto begin = s.starts[p];
        const auto end = p + 1 < s.starts.size() ? s.starts[p + 1] : grid.n_samples;
        std::fill(sig.values.begin() + static_cast<std::ptrdiff_t>(begin),
                  sig.values.begin() + static_cast<std::ptrdiff_t>(end), s.levels[p]);
        if (p > 0) {
            sig.jumps.push_back({grid.time(begin), s.levels[p] - s.levels[p - 1]});
        }
    }
    return sig;
}

} // namespace

ExcitationSignal gen_aprbs(const AprbsConfig& cfg, const TimeGrid& grid, std::uint64_t seed)
{
    cfg.validate(grid);
    return emit_steps(draw_schedule(cfg, grid, seed), grid, seed);
}

ExcitationSignal gen_sinaprbs(const AprbsConfig& cfg, const TimeGrid& grid, std::uint64_t seed)
{
    cfg.validate(grid);
    require(cfg.transition_time > 0.0, ErrorCode::InvalidConfig, "sinAPRBS needs transition_time > 0");

    const auto schedule = draw_schedule(cfg, grid, seed);
    auto sig = emit_steps(schedule, grid, seed);
    sig.kind = SignalKind::SinAprbs;

    const double half = 0.5 * cfg.transition_time;
    for (std::size_t p = 1; p < schedule.starts.size(); ++p) {
        const double centre = grid.time(schedule.starts[p]);
        const double from = schedule.levels[p - 1];
        const double to = schedule.levels[p];
        const double ramp_start = centre - half;
        for (std::size_t k = 0; k < grid.n_samples; ++k) {
            const double t = grid.time(k);
            if (t < ramp_start || t > centre + half) continue;
            const double phase = (t - ramp_start) / cfg.transition_time;
            sig.values[k] = from + (to - from) * 0.5 * (1.0 - std::cos(std::numbers::pi * phase));
        }
    }
    return sig;
}

ExcitationSignal gen_multisine(const MultisineConfig& cfg, const TimeGrid& grid, std::uint64_t seed)
{
    cfg.validate(grid);
    detail::Rng rng(seed);

    const auto n = static_cast<std::size_t>(cfg.n_harmonics);
    std::vector<double> freqs(n);
    std::vector<double> phases(n);
    for (std::size_t l = 0; l < n; ++l) {
        freqs[l] = n == 1 ? cfg.f_min
                          : cfg.f_min + (cfg.f_max - cfg.f_min) * static_cast<double>(l) / static_cast<double>(n - 1);
        if (cfg.phase_mode == PhaseMode::Random) {
            phases[l] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        } else {
            const double k = static_cast<double>(l + 1);
            phases[l] = -std::numbers::pi * k * (k - 1.0) / static_cast<double>(n);
        }
    }

    std::vector<double> raw(grid.n_samples, 0.0);
    for (std::size_t k = 0; k < grid.n_samples; ++k) {
        const double t = static_cast<double>(k) * grid.dt;
        for (std::size_t l = 0; l < n; ++l) {
            raw[k] += std::sin(2.0 * std::numbers::pi * freqs[l] * t + phases[l]);
        }
    }
    const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    require(hi > lo, ErrorCode::InvalidConfig, "multisine is constant on this grid");

    ExcitationSignal sig;
    sig.grid = grid;
    sig.kind = SignalKind::Multisine;
    sig.seed = seed;
    sig.values.resize(grid.n_samples);
    const double span = cfg.amp_max - cfg.amp_min;
    for (std::size_t k = 0; k < grid.n_samples; ++k) {
        const double v = cfg.amp_min + (raw[k] - lo) / (hi - lo) * span;
        sig.values[k] = std::clamp(v, cfg.amp_min, cfg.amp_max);
    }
    sig.values[static_cast<std::size_t>(lo_it - raw.begin())] = cfg.amp_min;
    sig.values[static_cast<std::size_t>(hi_it - raw.begin())] = cfg.amp_max;
    return sig;
}

double sample_at(std::span<const double> values, const TimeGrid& grid, double t)
{
    const double slack = 1e-9 * grid.dt;
    if (!(t >= grid.t0 - slack && t <= grid.end() + slack)) {
        fail(ErrorCode::OutOfRange, "sample time " + std::to_string(t) + " outside the signal grid");
    }
    const double u = (t - grid.t0) / grid.dt;
    const double nearest = std::round(u);
    if (std::abs(u - nearest) < 1e-9) {
        return values[static_cast<std::size_t>(nearest)];
    }
    auto k = static_cast<std::size_t>(std::floor(u));
    k = std::min(k, grid.n_samples - 2);
    const double frac = u - static_cast<double>(k);
    return values[k] + frac * (values[k + 1] - values[k]);
}

double sample_at(const ExcitationSignal& signal, double t)
{
    return sample_at(signal.values, signal.grid, t);
}

} // namespace twinforge
