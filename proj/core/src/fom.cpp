#include "twinforge/fom.hpp"

#include "twinforge/digest.hpp"
#include "twinforge/error.hpp"

#include <algorithm>
#include <cmath>

namespace twinforge {

void FomConfig::validate() const
{
    require(n_nodes >= 3, ErrorCode::InvalidConfig, "FOM needs at least 3 nodes");
    for (double v : {length, alpha, k0, rho_cp, d_m, dt_internal, t_init}) {
        require(std::isfinite(v) && v > 0.0, ErrorCode::InvalidConfig, "FOM physical coefficients must be positive");
    }
    for (double v : {beta_m, h_evap, m_init}) {
        require(std::isfinite(v) && v >= 0.0, ErrorCode::InvalidConfig, "FOM coefficients must be non-negative");
    }
    require(probe_core_index < n_nodes && probe_surface_index < n_nodes, ErrorCode::InvalidConfig,
            "FOM probe index out of range");
}

double FomConfig::max_stable_dt(double max_oven) const
{
    const double h = dx();
    const double k_max = k0 * (1.0 + beta_m * m_init);
    // Interior bound 0.5*dx^2*rho_cp/k_max, tightened by the Robin ghost node.
    const double heat = 0.5 * h * h * rho_cp / (k_max + h * alpha);
    const double surface_excess = std::max(max_oven - t_init, 0.0);
    const double moist = 0.5 * h * h / (d_m * (1.0 + h * h_evap * surface_excess / d_m));
    return std::min(heat, moist);
}

std::string FomConfig::digest() const
{
    Digest d;
    d.update(std::string_view("fom-v1;"));
    for (double v : {length, alpha, k0, beta_m, rho_cp, d_m, h_evap, t_init, m_init, dt_internal}) {
        d.update(v);
    }
    d.update(static_cast<std::uint64_t>(n_nodes));
    d.update(static_cast<std::uint64_t>(probe_core_index));
    d.update(static_cast<std::uint64_t>(probe_surface_index));
    return d.hex();
}

FomSolver::FomSolver(const FomConfig& cfg)
    : cfg_(cfg),
      inv_dx2_(1.0 / (cfg.dx() * cfg.dx())),
      temp_(cfg.n_nodes, cfg.t_init),
      moist_(cfg.n_nodes, cfg.m_init),
      next_temp_(cfg.n_nodes),
      next_moist_(cfg.n_nodes)
{
    cfg.validate();
}

void FomSolver::step(double t_oven)
{
    const std::size_t last = cfg_.n_nodes - 1;
    const double dt = cfg_.dt_internal;
    const double h = cfg_.dx();
    const double heat_gain = dt / cfg_.rho_cp * inv_dx2_;
    const double moist_gain = dt * cfg_.d_m * inv_dx2_;

    for (std::size_t j = 0; j <= last; ++j) {
        const double k = cfg_.k0 * (1.0 + cfg_.beta_m * moist_[j]);
        double lap_t;
        double lap_m;
        if (j == 0) {
            lap_t = 2.0 * (temp_[1] - temp_[0]);
            lap_m = 2.0 * (moist_[1] - moist_[0]);
        } else if (j == last) {
            // Ghost node from -k dT/dx = alpha (T - T_oven) and the evaporation flux.
            const double ghost_t = temp_[last - 1] - 2.0 * h * cfg_.alpha / k * (temp_[last] - t_oven);
            const double excess = std::max(temp_[last] - cfg_.t_init, 0.0);
            const double ghost_m = moist_[last - 1] - 2.0 * h / cfg_.d_m * cfg_.h_evap * excess * moist_[last];
            lap_t = ghost_t - 2.0 * temp_[last] + temp_[last - 1];
            lap_m = ghost_m - 2.0 * moist_[last] + moist_[last - 1];
        } else {
            lap_t = temp_[j + 1] - 2.0 * temp_[j] + temp_[j - 1];
            lap_m = moist_[j + 1] - 2.0 * moist_[j] + moist_[j - 1];
        }
        next_temp_[j] = temp_[j] + heat_gain * k * lap_t;
        next_moist_[j] = moist_[j] + moist_gain * lap_m;
    }
    temp_.swap(next_temp_);
    moist_.swap(next_moist_);
}

double FomSolver::mean_moisture() const noexcept
{
    const std::size_t last = moist_.size() - 1;
    double sum = 0.5 * (moist_.front() + moist_.back());
    for (std::size_t j = 1; j < last; ++j) sum += moist_[j];
    return sum / static_cast<double>(last);
}

bool FomSolver::finite() const noexcept
{
    return std::all_of(temp_.begin(), temp_.end(), [](double v) { return std::isfinite(v); })
        && std::all_of(moist_.begin(), moist_.end(), [](double v) { return std::isfinite(v); });
}

DataSet simulate_fom(const ExcitationSignal& signal, const FomConfig& cfg)
{
    cfg.validate();
    signal.grid.validate();
    require(signal.values.size() == signal.grid.n_samples, ErrorCode::InvalidConfig,
            "signal values do not match its grid");

    const double ratio = signal.grid.dt / cfg.dt_internal;
    const auto substeps = static_cast<std::size_t>(std::llround(ratio));
    require(substeps >= 1 && std::abs(ratio - static_cast<double>(substeps)) < 1e-9 * ratio,
            ErrorCode::InvalidConfig, "dt_internal must divide the recording dt");

    const double max_oven = *std::max_element(signal.values.begin(), signal.values.end());
    const double limit = cfg.max_stable_dt(max_oven);
    if (cfg.dt_internal > limit) {
        fail(ErrorCode::UnstableTimestep, "dt_internal " + format_double(cfg.dt_internal)
                                              + " exceeds the explicit stability bound " + format_double(limit));
    }

    DataSet ds;
    ds.id = signal.id;
    ds.excitation = signal;
    ds.provenance = cfg.digest() + ":" + std::to_string(signal.seed);
    const std::size_t n = signal.grid.n_samples;
    ds.outputs = Matrix(2, n);

    FomSolver solver(cfg);
    auto record = [&](std::size_t k) {
        ds.outputs(0, k) = solver.temperature()[cfg.probe_core_index];
        ds.outputs(1, k) = solver.temperature()[cfg.probe_surface_index];
    };
    record(0);
    const double inv_sub = 1.0 / static_cast<double>(substeps);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double g0 = signal.values[k];
        const double dg = signal.values[k + 1] - g0;
        for (std::size_t s = 0; s < substeps; ++s) {
            solver.step(g0 + dg * (static_cast<double>(s) * inv_sub));
        }
        if (!solver.finite()) {
            fail(ErrorCode::NonfiniteState, "FOM state diverged before t=" + format_double(signal.grid.time(k + 1)));
        }
        record(k + 1);
    }
    return ds;
}

} // namespace twinforge
