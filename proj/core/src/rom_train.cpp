#include "twinforge/rom.hpp"

#include <algorithm>
#include <limits>

namespace twinforge {

namespace {

struct Prepared {
    std::vector<double> g; // normalized inputs at nodes and midpoints
    Matrix target;         // n x N, normalized
    double h = 0.0;        // tau step
};

Prepared prepare(const RomModel& model, const Scenario& sc)
{
    sc.excitation.grid.validate();
    require(sc.targets.rows() == model.n, ErrorCode::InvalidDimension, "scenario channel count differs from model n");
    require(sc.targets.cols() == sc.excitation.grid.n_samples && sc.excitation.values.size() == sc.targets.cols(),
            ErrorCode::GridMismatch, "scenario targets do not share the excitation grid");
    Prepared p;
    p.g = half_step_inputs(sc.excitation, model.norm.input);
    p.target = Matrix(model.n, sc.targets.cols());
    for (std::size_t j = 0; j < model.n; ++j) {
        for (std::size_t k = 0; k < sc.targets.cols(); ++k) {
            p.target(j, k) = model.norm.outputs[j].normalize(sc.targets(j, k));
        }
    }
    p.h = sc.excitation.grid.dt / model.norm.time_span;
    return p;
}

// Forward RK4 with every stage's input and activations retained, then an
// adjoint sweep through the stages in reverse order.
class GradientEngine {
public:
    explicit GradientEngine(const RomModel& model) : model_(model), eval_(model) {}

    double run(const Prepared& p, double weight, RomGradient& grad)
    {
        const std::size_t m = model_.state_dim();
        const std::size_t n = model_.n;
        const std::size_t steps = p.target.cols();
        const std::size_t stride = 4 * m; // per time step: 4 stages of m values
        const double h = p.h;

        states_.assign(m * steps, 0.0);
        stage_u_.resize(stride * (steps - 1));
        stage_h_.resize(stride * (steps - 1));
        stage_z_.resize(stride * (steps - 1));
        kbuf_.resize(4 * m);

        for (std::size_t j = 0; j < n; ++j) states_[j] = p.target(j, 0);

        for (std::size_t k = 0; k + 1 < steps; ++k) {
            const double* y = &states_[k * m];
            double* next = &states_[(k + 1) * m];
            const double gs[4] = {p.g[2 * k], p.g[2 * k + 1], p.g[2 * k + 1], p.g[2 * k + 2]};
            const double coef[4] = {0.0, 0.5 * h, 0.5 * h, h};
            for (std::size_t s = 0; s < 4; ++s) {
                double* u = &stage_u_[k * stride + s * m];
                double* kv = &kbuf_[s * m];
                for (std::size_t j = 0; j < m; ++j) u[j] = s == 0 ? y[j] : y[j] + coef[s] * kbuf_[(s - 1) * m + j];
                eval_(std::span<const double>(u, m), gs[s], std::span<double>(kv, m),
                      std::span<double>(&stage_h_[k * stride + s * m], m),
                      std::span<double>(&stage_z_[k * stride + s * m], m));
            }
            for (std::size_t j = 0; j < m; ++j) {
                next[j] = y[j] + h / 6.0 * (kbuf_[j] + 2.0 * kbuf_[m + j] + 2.0 * kbuf_[2 * m + j] + kbuf_[3 * m + j]);
                if (!std::isfinite(next[j])) {
                    fail(ErrorCode::NonfiniteState, "ROM state diverged during training at sample " + std::to_string(k + 1));
                }
            }
        }

        // Loss and its derivative with respect to every emitted output sample.
        const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(steps));
        double loss = 0.0;
        for (std::size_t k = 0; k < steps; ++k) {
            for (std::size_t j = 0; j < n; ++j) {
                const double e = states_[k * m + j] - p.target(j, k);
                loss += e * e;
            }
        }
        loss *= inv;

        adj_.assign(m, 0.0);
        kadj_.resize(4 * m);
        uadj_.resize(m);
        auto add_loss_adjoint = [&](std::size_t k) {
            for (std::size_t j = 0; j < n; ++j) {
                adj_[j] += weight * 2.0 * inv * (states_[k * m + j] - p.target(j, k));
            }
        };
        add_loss_adjoint(steps - 1);
        for (std::size_t k = steps - 1; k-- > 0;) {
            // adj_ holds dL/dy_{k+1}; propagate to y_k.
            for (std::size_t j = 0; j < m; ++j) {
                kadj_[j] = h / 6.0 * adj_[j];
                kadj_[m + j] = h / 3.0 * adj_[j];
                kadj_[2 * m + j] = h / 3.0 * adj_[j];
                kadj_[3 * m + j] = h / 6.0 * adj_[j];
            }
            const double gs[4] = {p.g[2 * k], p.g[2 * k + 1], p.g[2 * k + 1], p.g[2 * k + 2]};
            const double coef[4] = {0.0, 0.5 * h, 0.5 * h, h};
            for (std::size_t s = 4; s-- > 0;) {
                const std::size_t off = k * stride + s * m;
                backprop_stage(&stage_u_[off], gs[s], &stage_h_[off], &stage_z_[off], &kadj_[s * m], grad);
                for (std::size_t j = 0; j < m; ++j) {
                    adj_[j] += uadj_[j];
                    if (s > 0) kadj_[(s - 1) * m + j] += coef[s] * uadj_[j];
                }
            }
            add_loss_adjoint(k);
        }
        return loss;
    }

private:
    // Accumulates parameter gradients for one stage given dL/df and leaves
    // dL/du in uadj_.
    void backprop_stage(const double* u, double g, const double* hid, const double* z, const double* fadj,
                        RomGradient& grad)
    {
        const std::size_t m = model_.state_dim();
        da2_.resize(m);
        da1_.resize(m);
        const double s = model_.out_scale;
        for (std::size_t r = 0; r < m; ++r) {
            grad.out_scale += fadj[r] * (2.0 * z[r] - 1.0);
            da2_[r] = 2.0 * s * fadj[r] * z[r] * (1.0 - z[r]);
            grad.b2[r] += da2_[r];
            auto grow = grad.w2.row(r);
            for (std::size_t c = 0; c < m; ++c) grow[c] += da2_[r] * hid[c];
        }
        for (std::size_t c = 0; c < m; ++c) {
            double dh = 0.0;
            for (std::size_t r = 0; r < m; ++r) dh += model_.w2(r, c) * da2_[r];
            da1_[c] = dh * hid[c] * (1.0 - hid[c]);
        }
        std::fill(uadj_.begin(), uadj_.end(), 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            const double d = da1_[r];
            grad.b1[r] += d;
            auto grow = grad.w1.row(r);
            const auto wrow = model_.w1.row(r);
            for (std::size_t c = 0; c < m; ++c) {
                grow[c] += d * u[c];
                uadj_[c] += wrow[c] * d;
            }
            grow[m] += d * g;
        }
    }

    const RomModel& model_;
    RhsEvaluator eval_;
    std::vector<double> states_, stage_u_, stage_h_, stage_z_, kbuf_;
    std::vector<double> adj_, kadj_, uadj_, da1_, da2_;
};

RomGradient zero_gradient(const RomModel& model)
{
    const std::size_t m = model.state_dim();
    return {Matrix(m, m + 1), std::vector<double>(m, 0.0), Matrix(m, m), std::vector<double>(m, 0.0), 0.0};
}

void reset(RomGradient& g)
{
    std::fill(g.w1.flat().begin(), g.w1.flat().end(), 0.0);
    std::fill(g.w2.flat().begin(), g.w2.flat().end(), 0.0);
    std::fill(g.b1.begin(), g.b1.end(), 0.0);
    std::fill(g.b2.begin(), g.b2.end(), 0.0);
    g.out_scale = 0.0;
}

double accumulate(GradientEngine& engine, std::span<const Prepared> prepared, RomGradient& grad)
{
    reset(grad);
    const double weight = 1.0 / static_cast<double>(prepared.size());
    double loss = 0.0;
    for (const auto& p : prepared) loss += engine.run(p, weight, grad);
    return loss * weight;
}

void flatten_into(const RomGradient& g, std::vector<double>& out)
{
    out.clear();
    out.insert(out.end(), g.w1.flat().begin(), g.w1.flat().end());
    out.insert(out.end(), g.b1.begin(), g.b1.end());
    out.insert(out.end(), g.w2.flat().begin(), g.w2.flat().end());
    out.insert(out.end(), g.b2.begin(), g.b2.end());
    out.push_back(g.out_scale);
}

} // namespace

Scenario scenario_from(const DataSet& ds)
{
    return {ds.excitation, ds.outputs};
}

std::vector<Scenario> scenarios_from(std::span<const DataSet> datasets)
{
    std::vector<Scenario> out;
    out.reserve(datasets.size());
    for (const auto& ds : datasets) out.push_back(scenario_from(ds));
    return out;
}

LossAndGradient gradient(const RomModel& model, std::span<const Scenario> scenarios)
{
    require(!scenarios.empty(), ErrorCode::EmptyScenarios, "gradient needs at least one scenario");
    model.validate();
    std::vector<Prepared> prepared;
    for (const auto& sc : scenarios) prepared.push_back(prepare(model, sc));
    GradientEngine engine(model);
    LossAndGradient out{0.0, zero_gradient(model)};
    out.loss = accumulate(engine, prepared, out.gradient);
    return out;
}

LossAndGradient gradient(const RomModel& model, std::span<const DataSet> scenarios)
{
    const auto sc = scenarios_from(scenarios);
    return gradient(model, std::span<const Scenario>(sc));
}

void TrainConfig::validate() const
{
    require(max_epochs >= 1, ErrorCode::InvalidConfig, "max_epochs must be >= 1");
    require(step_size > 0.0, ErrorCode::InvalidConfig, "step_size must be positive");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, ErrorCode::InvalidConfig,
            "moment decay rates must lie in (0, 1)");
    require(eps_rel >= 0.0 && patience >= 1, ErrorCode::InvalidConfig, "stopping rule needs eps_rel >= 0, patience >= 1");
    require(i_tol >= 0.0, ErrorCode::InvalidConfig, "i_tol must be non-negative");
}

Normalization fit_normalization(std::span<const Scenario> scenarios)
{
    require(!scenarios.empty(), ErrorCode::EmptyScenarios, "training needs at least one scenario");
    const std::size_t n = scenarios.front().targets.rows();
    const auto& grid0 = scenarios.front().excitation.grid;
    std::vector<double> lo(n, std::numeric_limits<double>::infinity());
    std::vector<double> hi(n, -std::numeric_limits<double>::infinity());
    double glo = std::numeric_limits<double>::infinity();
    double ghi = -glo;
    for (const auto& sc : scenarios) {
        const auto& grid = sc.excitation.grid;
        require(grid.n_samples == grid0.n_samples && grid.dt == grid0.dt, ErrorCode::GridMismatch,
                "scenarios must share grid length and spacing");
        require(sc.targets.rows() == n && sc.targets.cols() == grid.n_samples, ErrorCode::GridMismatch,
                "scenario channels or length differ");
        for (std::size_t j = 0; j < n; ++j) {
            for (double v : sc.targets.row(j)) {
                lo[j] = std::min(lo[j], v);
                hi[j] = std::max(hi[j], v);
            }
        }
        for (double v : sc.excitation.values) {
            glo = std::min(glo, v);
            ghi = std::max(ghi, v);
        }
    }
    Normalization norm;
    for (std::size_t j = 0; j < n; ++j) {
        norm.outputs.push_back({lo[j], hi[j] > lo[j] ? hi[j] - lo[j] : 1.0});
    }
    norm.input = {glo, ghi > glo ? ghi - glo : 1.0};
    norm.time_span = grid0.duration();
    return norm;
}

TrainResult train_from(RomModel initial, std::span<const Scenario> scenarios, const TrainConfig& cfg)
{
    cfg.validate();
    require(!scenarios.empty(), ErrorCode::EmptyScenarios, "training needs at least one scenario");
    initial.validate();
    const auto& g0 = scenarios.front().excitation.grid;
    for (const auto& sc : scenarios) {
        require(sc.excitation.grid.n_samples == g0.n_samples, ErrorCode::GridMismatch, "scenarios must share grid length");
    }

    RomModel model = std::move(initial);
    std::vector<Prepared> prepared;
    for (const auto& sc : scenarios) prepared.push_back(prepare(model, sc));

    GradientEngine engine(model);
    RomGradient grad = zero_gradient(model);
    std::vector<double> params = pack_parameters(model);
    std::vector<double> flat_grad;
    std::vector<double> m1(params.size(), 0.0), m2(params.size(), 0.0);

    TrainResult result;
    result.history.reserve(static_cast<std::size_t>(cfg.max_epochs));
    std::vector<double> best_params = params;
    double best = std::numeric_limits<double>::infinity();
    double reference = best; // best value at the last significant improvement
    int since_improvement = 0;
    double b1t = 1.0;
    double b2t = 1.0;
    constexpr double kMinScale = 1e-6;
    const std::size_t scale_index = params.size() - 1;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double loss = accumulate(engine, prepared, grad);
        result.history.push_back(loss);
        result.epochs = epoch + 1;
        if (loss < best) {
            best = loss;
            best_params = params;
        }
        if (best < reference * (1.0 - cfg.eps_rel)) {
            reference = best;
            since_improvement = 0;
        } else if (++since_improvement >= cfg.patience) {
            break;
        }
        if (epoch + 1 == cfg.max_epochs) break;

        flatten_into(grad, flat_grad);
        const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.max_epochs);
        const double lr = cfg.step_size
            * (cfg.final_step_fraction + (1.0 - cfg.final_step_fraction) * 0.5 * (1.0 + std::cos(3.141592653589793 * progress)));
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for (std::size_t p = 0; p < params.size(); ++p) {
            const double gp = flat_grad[p];
            m1[p] = cfg.beta1 * m1[p] + (1.0 - cfg.beta1) * gp;
            m2[p] = cfg.beta2 * m2[p] + (1.0 - cfg.beta2) * gp * gp;
            const double mhat = m1[p] / (1.0 - b1t);
            const double vhat = m2[p] / (1.0 - b2t);
            params[p] -= lr * mhat / (std::sqrt(vhat) + 1e-8);
        }
        params[scale_index] = std::max(params[scale_index], kMinScale);
        unpack_parameters(params, model);
    }

    unpack_parameters(best_params, model);
    result.model = std::move(model);
    result.best_loss = best;
    return result;
}

TrainResult train(std::span<const Scenario> scenarios, std::size_t n, std::size_t i, const TrainConfig& cfg)
{
    require(!scenarios.empty(), ErrorCode::EmptyScenarios, "training needs at least one scenario");
    require(scenarios.front().targets.rows() == n, ErrorCode::InvalidDimension, "scenario channel count differs from n");
    RomModel model = init_model(n, i, cfg.seed);
    model.norm = fit_normalization(scenarios);
    if (cfg.scale_from_data) {
        double peak = 0.0;
        for (const auto& sc : scenarios) {
            const double h = sc.excitation.grid.dt / model.norm.time_span;
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t k = 0; k + 1 < sc.targets.cols(); ++k) {
                    const double d = (sc.targets(j, k + 1) - sc.targets(j, k)) / model.norm.outputs[j].scale / h;
                    peak = std::max(peak, std::abs(d));
                }
            }
        }
        if (peak > 0.0) model.out_scale = peak;
    }
    return train_from(std::move(model), scenarios, cfg);
}

TrainResult train(std::span<const DataSet> scenarios, std::size_t i, const TrainConfig& cfg)
{
    const auto sc = scenarios_from(scenarios);
    return train(std::span<const Scenario>(sc), kChannelNames.size(), i, cfg);
}

ComplexitySelection select_complexity(std::span<const Scenario> scenarios, std::size_t n, const TrainConfig& cfg)
{
    ComplexitySelection sel;
    sel.result = train(scenarios, n, 0, cfg);
    sel.loss_by_i.push_back(sel.result.best_loss);
    for (std::size_t i = 1; i <= cfg.i_max; ++i) {
        auto candidate = train(scenarios, n, i, cfg);
        sel.loss_by_i.push_back(candidate.best_loss);
        if (!(candidate.best_loss < sel.result.best_loss * (1.0 - cfg.i_tol))) break;
        sel.result = std::move(candidate);
        sel.chosen_i = i;
    }
    return sel;
}

ComplexitySelection select_complexity(std::span<const DataSet> scenarios, const TrainConfig& cfg)
{
    const auto sc = scenarios_from(scenarios);
    return select_complexity(std::span<const Scenario>(sc), kChannelNames.size(), cfg);
}

} // namespace twinforge
