#pragma once

#include "twinforge/dataset.hpp"
#include "twinforge/error.hpp"
#include "twinforge/matrix.hpp"
#include "twinforge/signals.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace twinforge {

struct Affine {
    double offset = 0.0;
    double scale = 1.0;

    double normalize(double v) const noexcept { return (v - offset) / scale; }
    double denormalize(double v) const noexcept { return v * scale + offset; }

    bool operator==(const Affine&) const = default;
};

/// Maps physical quantities to the unit ranges the network works in.
/// Time is rescaled so a training trajectory spans tau in [0, 1].
struct Normalization {
    std::vector<Affine> outputs; // one per output channel
    Affine input;                // oven temperature
    double time_span = 1.0;      // seconds mapped to one unit of tau

    bool operator==(const Normalization&) const = default;
};

/// Augmented neural ODE d/dtau [X; I] = s * (2 * sig(W2 sig(W1 [X; I; g] + b1) + b2) - 1).
/// `n` physical output states, `i` augmented free variables.
struct RomModel {
    std::size_t n = 0;
    std::size_t i = 0;
    Matrix w1;                // (n+i) x (n+i+1)
    std::vector<double> b1;   // n+i
    Matrix w2;                // (n+i) x (n+i)
    std::vector<double> b2;   // n+i
    double out_scale = 1.0;
    Normalization norm;

    std::size_t state_dim() const noexcept { return n + i; }
    std::size_t parameter_count() const noexcept;

    /// Throws INVALID_DIMENSION / VALIDATION_FAILURE when the invariants break.
    void validate() const;

    bool operator==(const RomModel&) const = default;
};

/// Parameters or gradients flattened as [W1, b1, W2, b2, out_scale] (row-major).
std::vector<double> pack_parameters(const RomModel& model);
void unpack_parameters(std::span<const double> flat, RomModel& model);

/// Gradient with the same shapes as the model parameters.
struct RomGradient {
    Matrix w1;
    std::vector<double> b1;
    Matrix w2;
    std::vector<double> b2;
    double out_scale = 0.0;

    std::vector<double> flat() const;
};

/// Glorot-uniform weights, zero biases, out_scale 1. Deterministic in `seed`.
RomModel init_model(std::size_t n, std::size_t i, std::uint64_t seed);

/// Network right-hand side in normalized units.
std::vector<double> rhs(const RomModel& model, std::span<const double> state, double g);

/// Reusable scratch for allocation-free right-hand-side evaluation.
class RhsEvaluator {
public:
    explicit RhsEvaluator(const RomModel& model);

    /// Writes f(state, g) into `out`; keeps hidden/output activations in
    /// `hidden` / `output` when they are non-empty (used for back-propagation).
    void operator()(std::span<const double> state, double g, std::span<double> out,
                    std::span<double> hidden = {}, std::span<double> output = {});

private:
    const RomModel* model_;
    std::vector<double> hidden_;
    std::vector<double> output_;
};

struct Trajectory {
    TimeGrid grid;
    Matrix states;  // (n+i) x N, normalized
    Matrix outputs; // n x N, kelvin
};

/// Input samples at every grid node and midpoint, normalized:
/// entry 2k is sample k, entry 2k+1 the midpoint between k and k+1.
std::vector<double> half_step_inputs(const ExcitationSignal& signal, const Affine& input_norm);

/// Classic fixed-step RK4 over tau with step dt / time_span, one step per grid
/// interval. `field(state, g_normalized, tau, out)` is any vector field of
/// dimension `state_dim`; the first x0.size() states start at normalize(x0),
/// the rest at zero. Throws NONFINITE_STATE.
template <class Field>
Trajectory integrate(Field&& field, std::size_t state_dim, const ExcitationSignal& signal,
                     std::span<const double> x0, const Normalization& norm)
{
    signal.grid.validate();
    const std::size_t n = x0.size();
    require(n >= 1 && n <= state_dim && n == norm.outputs.size(), ErrorCode::InvalidDimension,
            "initial condition does not match the model outputs");
    require(signal.values.size() == signal.grid.n_samples, ErrorCode::InvalidConfig, "signal length mismatch");

    const std::size_t steps = signal.grid.n_samples;
    const double h = signal.grid.dt / norm.time_span;
    const auto g = half_step_inputs(signal, norm.input);

    Trajectory traj;
    traj.grid = signal.grid;
    traj.states = Matrix(state_dim, steps);
    traj.outputs = Matrix(n, steps);

    std::vector<double> y(state_dim, 0.0), u(state_dim), k1(state_dim), k2(state_dim), k3(state_dim),
        k4(state_dim);
    for (std::size_t j = 0; j < n; ++j) y[j] = norm.outputs[j].normalize(x0[j]);

    auto emit = [&](std::size_t k) {
        for (std::size_t j = 0; j < state_dim; ++j) {
            if (!std::isfinite(y[j])) {
                fail(ErrorCode::NonfiniteState, "ROM state diverged at sample " + std::to_string(k));
            }
            traj.states(j, k) = y[j];
        }
        for (std::size_t j = 0; j < n; ++j) traj.outputs(j, k) = norm.outputs[j].denormalize(y[j]);
    };
    emit(0);
    for (std::size_t k = 0; k + 1 < steps; ++k) {
        const double tau = static_cast<double>(k) * h;
        field(std::span<const double>(y), g[2 * k], tau, std::span<double>(k1));
        for (std::size_t j = 0; j < state_dim; ++j) u[j] = y[j] + 0.5 * h * k1[j];
        field(std::span<const double>(u), g[2 * k + 1], tau + 0.5 * h, std::span<double>(k2));
        for (std::size_t j = 0; j < state_dim; ++j) u[j] = y[j] + 0.5 * h * k2[j];
        field(std::span<const double>(u), g[2 * k + 1], tau + 0.5 * h, std::span<double>(k3));
        for (std::size_t j = 0; j < state_dim; ++j) u[j] = y[j] + h * k3[j];
        field(std::span<const double>(u), g[2 * k + 2], tau + h, std::span<double>(k4));
        for (std::size_t j = 0; j < state_dim; ++j) {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        emit(k + 1);
    }
    return traj;
}

/// Integrates the network itself from the physical initial outputs `x0`.
Trajectory integrate(const RomModel& model, const ExcitationSignal& signal, std::span<const double> x0);

/// Mean over channels of the per-channel mean squared error. Throws SHAPE_MISMATCH.
double loss_mse(const Matrix& pred, const Matrix& target);
/// Arithmetic mean of per-scenario losses.
double loss_mse(std::span<const Matrix> preds, std::span<const Matrix> targets);

/// One training trajectory: excitation plus n x N physical targets. The first
/// target column is the initial condition.
struct Scenario {
    ExcitationSignal excitation;
    Matrix targets;
};

Scenario scenario_from(const DataSet& ds);
std::vector<Scenario> scenarios_from(std::span<const DataSet> datasets);

struct LossAndGradient {
    double loss = 0.0; // normalized units
    RomGradient gradient;
};

/// Exact reverse-mode derivative of the RK4-discretized mean squared error
/// (normalized units, averaged over scenarios) with respect to every network
/// parameter. Throws EMPTY_SCENARIOS, INVALID_DIMENSION, NONFINITE_STATE.
LossAndGradient gradient(const RomModel& model, std::span<const Scenario> scenarios);
LossAndGradient gradient(const RomModel& model, std::span<const DataSet> scenarios);

struct TrainConfig {
    int max_epochs = 5000;
    double step_size = 5e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_rel = 1e-5;
    int patience = 200;
    std::uint64_t seed = 0;
    std::size_t i_max = 8;
    double i_tol = 0.02;
    double final_step_fraction = 0.1; // cosine decay of step_size down to this fraction
    bool scale_from_data = true;      // start out_scale at the targets' peak normalized rate

    void validate() const;
};

struct TrainResult {
    RomModel model;
    std::vector<double> history; // normalized loss per epoch
    double best_loss = 0.0;
    int epochs = 0;
};

/// Min/max normalization over the union of scenarios; time span from the first grid.
/// Throws EMPTY_SCENARIOS or GRID_MISMATCH.
Normalization fit_normalization(std::span<const Scenario> scenarios);

TrainResult train(std::span<const Scenario> scenarios, std::size_t n, std::size_t i, const TrainConfig& cfg);
TrainResult train(std::span<const DataSet> scenarios, std::size_t i, const TrainConfig& cfg);

/// Continues optimization from `initial`, keeping its normalization.
TrainResult train_from(RomModel initial, std::span<const Scenario> scenarios, const TrainConfig& cfg);

struct ComplexitySelection {
    TrainResult result;
    std::size_t chosen_i = 0;
    std::vector<double> loss_by_i; // best loss of every complexity tried
};

/// Grows i from 0 while the best training loss improves by more than cfg.i_tol (relative).
ComplexitySelection select_complexity(std::span<const Scenario> scenarios, std::size_t n, const TrainConfig& cfg);
ComplexitySelection select_complexity(std::span<const DataSet> scenarios, const TrainConfig& cfg);

inline constexpr std::string_view kModelFormatVersion = "twinforge-rom/1";

std::string model_to_json(const RomModel& model);
RomModel model_from_json(const std::string& text);

/// Throws IO_FAILURE / VERSION_MISMATCH / PARSE_FAILURE.
void export_model(const RomModel& model, const std::filesystem::path& path);
RomModel import_model(const std::filesystem::path& path);

} // namespace twinforge
