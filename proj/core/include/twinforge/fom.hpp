#pragma once

#include "twinforge/dataset.hpp"
#include "twinforge/signals.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace twinforge {

/// Parameters of the reference slab model: half-thickness `length` with a
/// symmetry plane at x = 0 and a convective, evaporating surface at x = length.
struct FomConfig {
    double length = 0.015;      // m
    std::size_t n_nodes = 31;
    double alpha = 25.0;        // W/(m^2 K)
    double k0 = 0.45;           // W/(m K)
    double beta_m = 0.3;        // conductivity gain per unit moisture
    double rho_cp = 3.6e6;      // J/(m^3 K)
    double d_m = 1e-9;          // m^2/s
    double h_evap = 1e-6;       // 1/(s K)
    double t_init = 278.0;      // K
    double m_init = 2.5;        // dry basis
    double dt_internal = 0.004; // s
    std::size_t probe_core_index = 0;
    std::size_t probe_surface_index = 30;

    double dx() const noexcept { return length / static_cast<double>(n_nodes - 1); }

    /// Throws INVALID_CONFIG for malformed values.
    void validate() const;

    /// Largest internal step keeping every explicit update a convex combination,
    /// for an oven temperature never exceeding `max_oven`.
    double max_stable_dt(double max_oven) const;

    std::string digest() const;
};

/// Explicit-Euler state of the coupled heat/moisture slab.
class FomSolver {
public:
    explicit FomSolver(const FomConfig& cfg);

    /// Advance one internal step with the given oven temperature.
    void step(double t_oven);

    std::span<const double> temperature() const noexcept { return temp_; }
    std::span<const double> moisture() const noexcept { return moist_; }

    /// Trapezoid-weighted spatial mean of moisture (the conserved quantity of
    /// the discrete diffusion operator).
    double mean_moisture() const noexcept;

    bool finite() const noexcept;

private:
    FomConfig cfg_;
    double inv_dx2_;
    std::vector<double> temp_, moist_;
    std::vector<double> next_temp_, next_moist_;
};

/// Run the slab model on `signal` and record core (T_A) and surface (T_B)
/// probes at every grid sample. Throws UNSTABLE_TIMESTEP or NONFINITE_STATE.
DataSet simulate_fom(const ExcitationSignal& signal, const FomConfig& cfg);

} // namespace twinforge
