#include "twinforge/pipeline.hpp"

#include "twinforge/dataset_store.hpp"
#include "twinforge/digest.hpp"
#include "twinforge/error.hpp"
#include "twinforge/metrics.hpp"
#include "twinforge/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace twinforge {

using nlohmann::json;

namespace {

constexpr std::string_view kPipelineVersion = "twinforge-pipeline/1";

// ---------------------------------------------------------------------------
// Config <-> JSON

json grid_json(const TimeGrid& g)
{
    return {{"n_samples", g.n_samples}, {"dt", g.dt}, {"t0", g.t0}};
}

json aprbs_json(const AprbsConfig& c)
{
    json j{{"amp_min", c.amp_min},   {"amp_max", c.amp_max},   {"n_levels", c.n_levels},
           {"hold_min", c.hold_min}, {"hold_max", c.hold_max}, {"transition_time", c.transition_time}};
    j["first_value"] = c.first_value_mode == FirstValueMode::Fixed ? json(c.first_value) : json(nullptr);
    return j;
}

json multisine_json(const MultisineConfig& c)
{
    return {{"amp_min", c.amp_min},
            {"amp_max", c.amp_max},
            {"n_harmonics", c.n_harmonics},
            {"f_min", c.f_min},
            {"f_max", c.f_max},
            {"phase_mode", c.phase_mode == PhaseMode::Schroeder ? "schroeder" : "random"}};
}

json signals_json(const SignalPlan& p)
{
    return {{"grid", grid_json(p.grid)},
            {"seed_base", p.seed_base},
            {"counts", {{"aprbs", p.n_aprbs}, {"sinaprbs", p.n_sinaprbs}, {"multisine", p.n_multisine}}},
            {"aprbs", aprbs_json(p.aprbs)},
            {"sinaprbs", aprbs_json(p.sinaprbs)},
            {"multisine", multisine_json(p.multisine)}};
}

json fom_json(const FomConfig& c)
{
    return {{"length", c.length},           {"n_nodes", c.n_nodes},
            {"alpha", c.alpha},             {"k0", c.k0},
            {"beta_m", c.beta_m},           {"rho_cp", c.rho_cp},
            {"d_m", c.d_m},                 {"h_evap", c.h_evap},
            {"t_init", c.t_init},           {"m_init", c.m_init},
            {"dt_internal", c.dt_internal}, {"probe_core_index", c.probe_core_index},
            {"probe_surface_index", c.probe_surface_index}};
}

json train_json(const TrainConfig& c)
{
    return {{"max_epochs", c.max_epochs},
            {"step_size", c.step_size},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps_rel", c.eps_rel},
            {"patience", c.patience},
            {"seed", c.seed},
            {"i_max", c.i_max},
            {"i_tol", c.i_tol},
            {"final_step_fraction", c.final_step_fraction},
            {"scale_from_data", c.scale_from_data}};
}

json complexity_json(const std::optional<std::size_t>& c)
{
    return c ? json(*c) : json("auto");
}

json base_rule_json(const BaseRule& r)
{
    return {{"feature", r.feature}, {"direction", r.maximize ? "max" : "min"}};
}

json results_json(const PipelineConfig& cfg)
{
    return {{"signals", signals_json(cfg.signals)},
            {"fom", fom_json(cfg.fom)},
            {"train", train_json(cfg.train)},
            {"complexity", complexity_json(cfg.complexity)},
            {"test_group", {{"size", cfg.test_size}, {"bins", cfg.bins}}},
            {"base_rule", base_rule_json(cfg.base_rule)},
            {"partners", cfg.partners}};
}

/// Reads the keys of one JSON object and rejects any it did not consume.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where))
    {
        require(j.is_object(), ErrorCode::InvalidConfig, where_ + " must be a JSON object");
    }

    template <class T>
    void get(const char* key, T& out)
    {
        const auto* v = find(key);
        if (!v) return;
        try {
            if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
                require(v->is_number_integer() && v->get<std::int64_t>() >= 0, ErrorCode::InvalidConfig,
                        path(key) + " must be a non-negative integer");
            }
            out = v->get<T>();
        } catch (const json::exception& e) {
            fail(ErrorCode::InvalidConfig, path(key) + ": " + e.what());
        }
    }

    const json* find(const char* key)
    {
        const auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    std::string path(const char* key) const { return where_ + "." + key; }

    void finish() const
    {
        for (const auto& item : j_.items()) {
            require(seen_.count(item.key()) != 0, ErrorCode::InvalidConfig, "unknown key " + where_ + "." + item.key());
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

void read_grid(const json& j, TimeGrid& g)
{
    ObjectReader r(j, "signals.grid");
    r.get("n_samples", g.n_samples);
    r.get("dt", g.dt);
    r.get("t0", g.t0);
    r.finish();
}

void read_aprbs(const json& j, AprbsConfig& c, const std::string& where)
{
    ObjectReader r(j, where);
    r.get("amp_min", c.amp_min);
    r.get("amp_max", c.amp_max);
    r.get("n_levels", c.n_levels);
    r.get("hold_min", c.hold_min);
    r.get("hold_max", c.hold_max);
    r.get("transition_time", c.transition_time);
    if (const auto* v = r.find("first_value")) {
        if (v->is_null()) {
            c.first_value_mode = FirstValueMode::Random;
        } else {
            require(v->is_number(), ErrorCode::InvalidConfig, r.path("first_value") + " must be null or kelvin");
            c.first_value_mode = FirstValueMode::Fixed;
            c.first_value = v->get<double>();
        }
    }
    r.finish();
}

void read_multisine(const json& j, MultisineConfig& c)
{
    ObjectReader r(j, "signals.multisine");
    r.get("amp_min", c.amp_min);
    r.get("amp_max", c.amp_max);
    r.get("n_harmonics", c.n_harmonics);
    r.get("f_min", c.f_min);
    r.get("f_max", c.f_max);
    if (const auto* v = r.find("phase_mode")) {
        const auto s = v->is_string() ? v->get<std::string>() : std::string();
        require(s == "random" || s == "schroeder", ErrorCode::InvalidConfig,
                "signals.multisine.phase_mode must be \"random\" or \"schroeder\"");
        c.phase_mode = s == "schroeder" ? PhaseMode::Schroeder : PhaseMode::Random;
    }
    r.finish();
}

void read_signals(const json& j, SignalPlan& p)
{
    ObjectReader r(j, "signals");
    if (const auto* v = r.find("grid")) read_grid(*v, p.grid);
    r.get("seed_base", p.seed_base);
    if (const auto* v = r.find("counts")) {
        ObjectReader c(*v, "signals.counts");
        c.get("aprbs", p.n_aprbs);
        c.get("sinaprbs", p.n_sinaprbs);
        c.get("multisine", p.n_multisine);
        c.finish();
    }
    if (const auto* v = r.find("aprbs")) read_aprbs(*v, p.aprbs, "signals.aprbs");
    if (const auto* v = r.find("sinaprbs")) read_aprbs(*v, p.sinaprbs, "signals.sinaprbs");
    if (const auto* v = r.find("multisine")) read_multisine(*v, p.multisine);
    r.finish();
}

void read_fom(const json& j, FomConfig& c)
{
    ObjectReader r(j, "fom");
    r.get("length", c.length);
    r.get("n_nodes", c.n_nodes);
    r.get("alpha", c.alpha);
    r.get("k0", c.k0);
    r.get("beta_m", c.beta_m);
    r.get("rho_cp", c.rho_cp);
    r.get("d_m", c.d_m);
    r.get("h_evap", c.h_evap);
    r.get("t_init", c.t_init);
    r.get("m_init", c.m_init);
    r.get("dt_internal", c.dt_internal);
    r.get("probe_core_index", c.probe_core_index);
    r.get("probe_surface_index", c.probe_surface_index);
    r.finish();
}

void read_train(const json& j, TrainConfig& c)
{
    ObjectReader r(j, "train");
    r.get("max_epochs", c.max_epochs);
    r.get("step_size", c.step_size);
    r.get("beta1", c.beta1);
    r.get("beta2", c.beta2);
    r.get("eps_rel", c.eps_rel);
    r.get("patience", c.patience);
    r.get("seed", c.seed);
    r.get("i_max", c.i_max);
    r.get("i_tol", c.i_tol);
    r.get("final_step_fraction", c.final_step_fraction);
    r.get("scale_from_data", c.scale_from_data);
    r.finish();
}

// ---------------------------------------------------------------------------
// Artifacts

std::string fmt(double v) { return format_double(v); }

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::vector<std::string> metric_cells(const MetricSet& m)
{
    std::vector<std::string> out;
    for (std::size_t k = 0; k < kMeasureNames.size(); ++k) out.push_back(fmt(measure(m, k)));
    return out;
}

std::vector<std::string> with_measures(std::vector<std::string> head)
{
    for (auto name : kMeasureNames) head.emplace_back(name);
    return head;
}

std::string file_digest(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return digest_hex(ss.str());
}

double train_rmse(const RomModel& model, std::span<const DataSet> sets)
{
    double s = 0.0;
    for (const auto& ds : sets) s += rmse(predict_outputs(model, ds), ds.outputs);
    return s / static_cast<double>(sets.size());
}

struct Trained {
    RomModel model;
    std::size_t i = 0;
};

Trained fit_rom(std::span<const DataSet> sets, const PipelineConfig& cfg)
{
    if (cfg.complexity) {
        const auto r = train(sets, *cfg.complexity, cfg.train);
        return {r.model, *cfg.complexity};
    }
    auto sel = select_complexity(sets, cfg.train);
    return {std::move(sel.result.model), sel.chosen_i};
}

std::string two_set_name(const std::string& base, const std::string& partner) { return base + "+" + partner; }

class Runner {
public:
    Runner(const PipelineConfig& cfg, std::ostream* log) : cfg_(cfg), log_(log), out_(cfg.out_dir) {}

    RunReport run(Stage last);

private:
    using Clock = std::chrono::steady_clock;

    // Returns true when the checkpoint matches and every listed artifact exists.
    bool begin(Stage s, const json& part, const std::vector<std::filesystem::path>& artifacts);
    void commit();
    std::filesystem::path checkpoint_path(Stage s) const;
    void note(const std::string& line) const
    {
        if (log_) *log_ << line << '\n' << std::flush;
    }

    void stage_signals();
    void stage_simulate();
    void stage_features();
    void stage_select_test();
    void stage_train_single();
    void stage_correlate();
    void stage_partner_chart();
    void stage_finalize();
    void write_manifest() const;

    std::vector<DataSet> training_sets() const;

    const PipelineConfig& cfg_;
    std::ostream* log_;
    std::filesystem::path out_;
    RunReport report_;
    std::string prev_digest_;
    StageStatus current_;
    Clock::time_point started_;
    std::vector<std::filesystem::path> artifacts_; // relative to out_

    std::vector<ExcitationSignal> signals_;
    std::vector<DataSet> datasets_;
    std::map<std::string, std::size_t> index_;
    std::vector<FeatureVector> features_;
    std::vector<DataSet> test_group_;
    std::set<std::string> test_set_;
    std::map<std::string, RomModel> single_roms_;
    std::map<std::string, GlobalMetrics> single_metrics_;
    PartnerChart chart_;
};

std::filesystem::path Runner::checkpoint_path(Stage s) const
{
    return out_ / ".checkpoints" / (std::to_string(static_cast<int>(s)) + "-" + std::string(stage_name(s)) + ".done");
}

bool Runner::begin(Stage s, const json& part, const std::vector<std::filesystem::path>& artifacts)
{
    Digest d;
    d.update(prev_digest_);
    d.update(static_cast<std::uint64_t>(s));
    d.update(part.dump());
    current_ = {s, d.hex(), false};
    prev_digest_ = current_.digest;
    started_ = Clock::now();
    for (const auto& a : artifacts) artifacts_.push_back(a);

    std::ifstream in(checkpoint_path(s));
    std::string stored;
    if (!(in && std::getline(in, stored) && stored == current_.digest)) return false;
    for (const auto& a : artifacts) {
        if (!std::filesystem::exists(out_ / a)) return false;
    }
    current_.skipped = true;
    return true;
}

void Runner::commit()
{
    if (!current_.skipped) write_file_atomic(checkpoint_path(current_.stage), current_.digest + "\n");
    const double secs = std::chrono::duration<double>(Clock::now() - started_).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f s", secs);
    note("[" + std::to_string(static_cast<int>(current_.stage)) + "/8] " + std::string(stage_name(current_.stage)) +
         ": " + (current_.skipped ? "up to date" : "done") + " (" + buf + ")");
    report_.stages.push_back(current_);
}

std::vector<DataSet> Runner::training_sets() const
{
    std::vector<DataSet> out;
    for (const auto& ds : datasets_) {
        if (!test_set_.count(ds.id)) out.push_back(ds);
    }
    std::sort(out.begin(), out.end(), [](const DataSet& a, const DataSet& b) { return a.id < b.id; });
    return out;
}

void Runner::stage_signals()
{
    const auto& plan = cfg_.signals;
    std::vector<std::filesystem::path> files{"signals.csv"};
    std::uint64_t number = 1;
    auto add = [&](SignalKind kind, std::size_t count) {
        for (std::size_t c = 0; c < count; ++c, ++number) {
            const std::uint64_t seed = plan.seed_base + number - 1;
            ExcitationSignal sig = kind == SignalKind::Aprbs       ? gen_aprbs(plan.aprbs, plan.grid, seed)
                                   : kind == SignalKind::SinAprbs ? gen_sinaprbs(plan.sinaprbs, plan.grid, seed)
                                                                  : gen_multisine(plan.multisine, plan.grid, seed);
            char suffix[24];
            std::snprintf(suffix, sizeof suffix, "%04llu", static_cast<unsigned long long>(number));
            sig.id = id_prefix(kind) + suffix;
            files.push_back(std::filesystem::path("signals") / (sig.id + ".csv"));
            signals_.push_back(std::move(sig));
        }
    };
    add(SignalKind::Aprbs, plan.n_aprbs);
    add(SignalKind::SinAprbs, plan.n_sinaprbs);
    add(SignalKind::Multisine, plan.n_multisine);

    json part{{"version", kPipelineVersion}, {"signals", signals_json(plan)}};
    if (!begin(Stage::Signals, part, files)) {
        std::filesystem::create_directories(out_ / "signals");
        CsvTable index{current_.digest, {"id", "kind", "seed"}, {}};
        for (const auto& s : signals_) {
            index.rows.push_back({s.id, std::string(to_string(s.kind)), std::to_string(s.seed)});
            std::ostringstream os;
            os << "# config_digest: " << current_.digest << '\n';
            write_signal_csv(os, s);
            write_file_atomic(out_ / "signals" / (s.id + ".csv"), os.str());
        }
        write_csv(out_ / "signals.csv", index);
    }
    commit();
}

void Runner::stage_simulate()
{
    begin(Stage::Simulate, fom_json(cfg_.fom), {"datasets.csv"});
    auto store = open_store(cfg_.store_root);
    const std::string fom_digest = cfg_.fom.digest();

    datasets_.assign(signals_.size(), DataSet{});
    std::vector<std::size_t> missing;
    for (std::size_t k = 0; k < signals_.size(); ++k) {
        const auto& sig = signals_[k];
        const std::string provenance = fom_digest + ":" + std::to_string(sig.seed);
        if (store.find(sig.id)) {
            auto ds = load_dataset(sig.id, store);
            require(ds.provenance == provenance && ds.excitation.values == sig.values, ErrorCode::DuplicateId,
                    "store " + cfg_.store_root.string() + " already holds a different data set '" + sig.id +
                        "'; use a fresh store for a changed configuration");
            datasets_[k] = std::move(ds);
        } else {
            missing.push_back(k);
        }
    }
    if (!missing.empty()) current_.skipped = false;

    parallel_for(missing.size(), cfg_.workers, [&](std::size_t m) {
        const auto k = missing[m];
        datasets_[k] = simulate_fom(signals_[k], cfg_.fom);
        datasets_[k].id = signals_[k].id;
    });
    for (auto k : missing) save_dataset(datasets_[k], store);

    for (std::size_t k = 0; k < datasets_.size(); ++k) {
        index_[datasets_[k].id] = k;
        report_.dataset_ids.push_back(datasets_[k].id);
    }
    if (!current_.skipped) {
        CsvTable t{current_.digest, {"id", "kind", "seed", "provenance"}, {}};
        for (const auto& ds : datasets_) {
            t.rows.push_back({ds.id, std::string(to_string(ds.excitation.kind)), std::to_string(ds.excitation.seed),
                              ds.provenance});
        }
        write_csv(out_ / "datasets.csv", t);
    }
    commit();
}

void Runner::stage_features()
{
    for (const auto& ds : datasets_) features_.push_back(compute_features(ds));
    if (!begin(Stage::Features, json::object(), {"features.csv"})) {
        std::vector<std::string> header{"id", "kind"};
        for (auto n : kFeatureNames) header.emplace_back(n);
        CsvTable t{current_.digest, header, {}};
        for (std::size_t k = 0; k < datasets_.size(); ++k) {
            std::vector<std::string> row{datasets_[k].id, std::string(to_string(datasets_[k].excitation.kind))};
            for (std::size_t f = 0; f < kFeatureNames.size(); ++f) row.push_back(opt_fmt(feature_value(features_[k], f)));
            t.rows.push_back(std::move(row));
        }
        write_csv(out_ / "features.csv", t);
    }
    commit();
}

void Runner::stage_select_test()
{
    const auto sel = select_test_group(datasets_, cfg_.test_size, cfg_.bins);
    report_.test_ids = sel.ids;
    report_.test_chi2 = sel.chi2;
    for (const auto& id : sel.ids) {
        test_set_.insert(id);
        test_group_.push_back(datasets_[index_.at(id)]);
    }

    json part{{"size", cfg_.test_size}, {"bins", cfg_.bins}};
    if (!begin(Stage::SelectTest, part, {"test_group.csv"})) {
        std::vector<double> medians;
        for (const auto& ds : datasets_) {
            const auto row = ds.outputs.row(0);
            medians.push_back(median(std::vector<double>(row.begin(), row.end())));
        }
        const auto bins = median_bins(medians, cfg_.bins);
        CsvTable t{current_.digest, {"id", "median_T_A", "bin"}, {}};
        for (const auto& id : sel.ids) {
            const auto k = index_.at(id);
            t.rows.push_back({id, fmt(medians[k]), std::to_string(bins[k])});
        }
        write_csv(out_ / "test_group.csv", t);
    }
    commit();
}

void Runner::stage_train_single()
{
    const auto sets = training_sets();
    std::vector<std::filesystem::path> files{"single_roms.csv"};
    for (const auto& ds : sets) files.push_back(std::filesystem::path("roms") / (ds.id + ".json"));
    json part{{"train", train_json(cfg_.train)}, {"complexity", complexity_json(cfg_.complexity)}};
    const bool up_to_date = begin(Stage::TrainSingle, part, files);

    std::vector<RomModel> models(sets.size());
    if (up_to_date) {
        for (std::size_t k = 0; k < sets.size(); ++k) models[k] = import_model(out_ / files[k + 1]);
    } else {
        std::filesystem::create_directories(out_ / "roms");
        std::atomic<std::size_t> done{0};
        std::mutex log_mutex;
        parallel_for(sets.size(), cfg_.workers, [&](std::size_t k) {
            std::span<const DataSet> one(&sets[k], 1);
            models[k] = fit_rom(one, cfg_).model;
            export_model(models[k], out_ / files[k + 1]);
            std::lock_guard lock(log_mutex);
            note("      trained " + sets[k].id + " (i=" + std::to_string(models[k].i) + ", " +
                 std::to_string(++done) + "/" + std::to_string(sets.size()) + ")");
        });
    }

    CsvTable t{current_.digest, with_measures({"id", "i", "train_rmse"}), {}};
    for (std::size_t k = 0; k < sets.size(); ++k) {
        single_roms_[sets[k].id] = models[k];
        const auto gm = evaluate_on_group(models[k], test_group_);
        single_metrics_[sets[k].id] = gm;
        std::vector<std::string> row{sets[k].id, std::to_string(models[k].i),
                                     fmt(train_rmse(models[k], std::span<const DataSet>(&sets[k], 1)))};
        for (auto& c : metric_cells(gm.mean)) row.push_back(std::move(c));
        t.rows.push_back(std::move(row));
        if (report_.best_single_id.empty() || gm.mean.rmse < report_.best_single_rmse) {
            report_.best_single_id = sets[k].id;
            report_.best_single_rmse = gm.mean.rmse;
        }
    }
    if (!up_to_date) write_csv(out_ / "single_roms.csv", t);
    commit();
}

void Runner::stage_correlate()
{
    const auto sets = training_sets();
    std::vector<FeatureVector> feats;
    std::vector<GlobalMetrics> errs;
    for (const auto& ds : sets) {
        feats.push_back(features_[index_.at(ds.id)]);
        errs.push_back(single_metrics_.at(ds.id));
    }
    if (!begin(Stage::Correlate, json::object(), {"corr_matrix.csv", "corr_scatter.csv", "corr_scatter.svg"})) {
        const auto cm = corr_matrix(feats, errs);
        CsvTable t{current_.digest, {"measure", "feature", "r", "m", "error"}, {}};
        for (std::size_t r = 0; r < cm.rows.size(); ++r) {
            for (std::size_t c = 0; c < cm.cols.size(); ++c) {
                const auto& cell = cm.cells[r][c];
                t.rows.push_back({cm.rows[r], cm.cols[c], opt_fmt(cell.r), std::to_string(cell.m), cell.error});
            }
        }
        write_csv(out_ / "corr_matrix.csv", t);

        // Scatter of the base-rule feature against the test-group rmse.
        const auto fidx = *feature_index(cfg_.base_rule.feature);
        std::vector<double> xs, ys;
        ScatterPlot plot;
        plot.title = "rmse vs " + cfg_.base_rule.feature;
        plot.x_label = cfg_.base_rule.feature;
        plot.y_label = "test-group mean rmse (K)";
        for (std::size_t k = 0; k < sets.size(); ++k) {
            if (auto x = feature_value(feats[k], fidx)) {
                xs.push_back(*x);
                ys.push_back(errs[k].mean.rmse);
                plot.points.push_back({*x, errs[k].mean.rmse, sets[k].id, ""});
            }
        }
        CsvTable s{current_.digest, {"id", "x", "y", "fit", "lower", "upper"}, {}};
        std::optional<LinearFit> fit;
        try {
            fit = linfit_bounds(xs, ys, 0.95);
        } catch (const Error&) {
        }
        if (fit) plot.fit = ScatterFit{xs, {}, fit->lower, fit->upper};
        for (std::size_t k = 0; k < xs.size(); ++k) {
            if (fit) plot.fit->center.push_back(fit->predict(xs[k]));
            s.rows.push_back({plot.points[k].label, fmt(xs[k]), fmt(ys[k]), fit ? fmt(fit->predict(xs[k])) : "",
                              fit ? fmt(fit->lower[k]) : "", fit ? fmt(fit->upper[k]) : ""});
        }
        write_csv(out_ / "corr_scatter.csv", s);
        write_file_atomic(out_ / "corr_scatter.svg", render_svg(plot));
    }
    commit();
}

void Runner::stage_partner_chart()
{
    const auto sets = training_sets();
    require(sets.size() >= 2, ErrorCode::EmptyGroup, "partner chart needs at least two non-test data sets");

    std::optional<double> best;
    for (const auto& ds : sets) {
        const auto v = feature_value(features_[index_.at(ds.id)], *feature_index(cfg_.base_rule.feature));
        if (!v) continue;
        const bool better = !best || (cfg_.base_rule.maximize ? *v > *best : *v < *best);
        if (better) {
            best = v;
            report_.base_id = ds.id;
        }
    }
    require(best.has_value(), ErrorCode::MissingJumps,
            "no non-test data set has feature '" + cfg_.base_rule.feature + "'");

    chart_ = partner_chart(report_.base_id, sets, single_roms_.at(report_.base_id), single_roms_, test_group_);

    if (!begin(Stage::PartnerChart, base_rule_json(cfg_.base_rule), {"partner_chart.csv", "partner_chart.svg"})) {
        CsvTable t{current_.digest,
                   {"rank", "id", "similarity", "base_rom_error", "own_rom_error", "score", "category", "base"},
                   {}};
        ScatterPlot plot;
        plot.title = "training partners for " + report_.base_id;
        plot.x_label = "base ROM rmse on candidate (K)";
        plot.y_label = "own ROM test-group rmse (K)";
        for (std::size_t r = 0; r < chart_.rows.size(); ++r) {
            const auto& row = chart_.rows[r];
            t.rows.push_back({std::to_string(r + 1), row.id, fmt(row.similarity), fmt(row.base_rom_error),
                              fmt(row.own_rom_error), std::to_string(row.score), std::string(to_string(row.category)),
                              row.id == report_.base_id ? "1" : "0"});
            plot.points.push_back({row.base_rom_error, row.own_rom_error, row.id, std::string(to_string(row.category))});
        }
        write_csv(out_ / "partner_chart.csv", t);
        write_file_atomic(out_ / "partner_chart.svg", render_svg(plot));
    }
    commit();
}

void Runner::stage_finalize()
{
    // Recommended partners first; if the chart recommends fewer than P, the
    // next candidates in chart order that are not identical to the base fill up.
    std::vector<std::string> partners;
    std::set<std::string> recommended;
    for (const auto& id : chart_.recommendations()) {
        if (partners.size() < cfg_.partners) {
            partners.push_back(id);
            recommended.insert(id);
        }
    }
    for (const auto& row : chart_.rows) {
        if (partners.size() >= cfg_.partners) break;
        if (row.id == chart_.base_id || row.similarity == 0.0 || recommended.count(row.id)) continue;
        partners.push_back(row.id);
    }
    report_.partner_ids = partners;

    const auto& base = datasets_[index_.at(chart_.base_id)];
    std::vector<std::filesystem::path> files{"two_set_roms.csv", "final_report.csv", "final_model.json"};
    for (const auto& p : partners) files.push_back(std::filesystem::path("roms") / (two_set_name(base.id, p) + ".json"));
    const bool up_to_date = begin(Stage::Finalize, json{{"partners", cfg_.partners}}, files);

    std::vector<RomModel> models(partners.size());
    if (up_to_date) {
        for (std::size_t k = 0; k < partners.size(); ++k) models[k] = import_model(out_ / files[k + 3]);
    } else {
        std::filesystem::create_directories(out_ / "roms");
        parallel_for(partners.size(), cfg_.workers, [&](std::size_t k) {
            const std::vector<DataSet> pair{base, datasets_[index_.at(partners[k])]};
            models[k] = fit_rom(pair, cfg_).model;
            export_model(models[k], out_ / files[k + 3]);
        });
    }

    require(!partners.empty(), ErrorCode::EmptyGroup, "no training partner candidates for " + base.id);
    CsvTable t{current_.digest, with_measures({"partner_id", "recommended", "i", "train_rmse"}), {}};
    std::size_t best = 0;
    std::vector<double> test_rmse(partners.size());
    for (std::size_t k = 0; k < partners.size(); ++k) {
        const std::vector<DataSet> pair{base, datasets_[index_.at(partners[k])]};
        const auto gm = evaluate_on_group(models[k], test_group_);
        test_rmse[k] = gm.mean.rmse;
        std::vector<std::string> row{partners[k], recommended.count(partners[k]) ? "1" : "0",
                                     std::to_string(models[k].i), fmt(train_rmse(models[k], pair))};
        for (auto& c : metric_cells(gm.mean)) row.push_back(std::move(c));
        t.rows.push_back(std::move(row));
        if (test_rmse[k] < test_rmse[best]) best = k;
    }

    report_.final_partner_id = partners[best];
    report_.final_rmse = test_rmse[best];
    report_.reduction_percent = 100.0 * (report_.best_single_rmse - report_.final_rmse) / report_.best_single_rmse;
    report_.improved = report_.final_rmse < report_.best_single_rmse;
    report_.final_model = out_ / "final_model.json";

    if (!up_to_date) {
        write_csv(out_ / "two_set_roms.csv", t);
        export_model(models[best], report_.final_model);
        CsvTable f{current_.digest,
                   {"base_id", "partner_id", "i", "test_rmse", "best_single_id", "best_single_rmse",
                    "reduction_percent", "improved"},
                   {{base.id, report_.final_partner_id, std::to_string(models[best].i), fmt(report_.final_rmse),
                     report_.best_single_id, fmt(report_.best_single_rmse), fmt(report_.reduction_percent),
                     report_.improved ? "1" : "0"}}};
        write_csv(out_ / "final_report.csv", f);
    }
    if (!report_.improved) {
        note("      no 2-data-set ROM among the top " + std::to_string(partners.size()) +
             " partners beats the best 1-data-set ROM (" + report_.best_single_id + ")");
    }
    commit();
}

void Runner::write_manifest() const
{
    json stages = json::array();
    for (const auto& s : report_.stages) {
        stages.push_back({{"stage", static_cast<int>(s.stage)},
                          {"name", stage_name(s.stage)},
                          {"digest", s.digest},
                          {"status", s.skipped ? "up_to_date" : "ran"}});
    }
    json artifacts = json::array();
    for (const auto& a : artifacts_) {
        if (std::filesystem::exists(out_ / a)) {
            artifacts.push_back({{"file", a.generic_string()}, {"digest", file_digest(out_ / a)}});
        }
    }
    json m{{"version", kPipelineVersion},
           {"config_digest", report_.config_digest},
           {"config", results_json(cfg_)},
           {"stages", stages},
           {"artifacts", artifacts}};
    if (!report_.test_ids.empty()) m["test_group"] = {{"ids", report_.test_ids}, {"chi2", report_.test_chi2}};
    if (!report_.base_id.empty()) {
        m["partner_chart"] = {{"base_id", report_.base_id},
                              {"similarity_p10", chart_.thresholds.similarity_p10},
                              {"own_error_p50", chart_.thresholds.own_error_p50},
                              {"base_error_p75", chart_.thresholds.base_error_p75}};
    }
    if (!report_.final_partner_id.empty()) {
        m["final"] = {{"base_id", report_.base_id},
                      {"partner_id", report_.final_partner_id},
                      {"test_rmse", report_.final_rmse},
                      {"best_single_id", report_.best_single_id},
                      {"best_single_rmse", report_.best_single_rmse},
                      {"reduction_percent", report_.reduction_percent},
                      {"improved", report_.improved}};
    }
    write_file_atomic(out_ / "run_manifest.json", m.dump(2) + "\n");
}

RunReport Runner::run(Stage last)
{
    report_.config_digest = config_digest(cfg_);
    std::filesystem::create_directories(out_ / ".checkpoints");

    using Step = void (Runner::*)();
    static constexpr Step steps[] = {&Runner::stage_signals,       &Runner::stage_simulate,
                                     &Runner::stage_features,      &Runner::stage_select_test,
                                     &Runner::stage_train_single,  &Runner::stage_correlate,
                                     &Runner::stage_partner_chart, &Runner::stage_finalize};
    for (int s = 1; s <= static_cast<int>(last); ++s) {
        const auto stage = static_cast<Stage>(s);
        try {
            (this->*steps[s - 1])();
        } catch (const std::exception& e) {
            fail(ErrorCode::StageFailure,
                 "stage " + std::to_string(s) + " (" + std::string(stage_name(stage)) + "): " + e.what());
        }
    }
    write_manifest();
    return report_;
}

} // namespace

// ---------------------------------------------------------------------------

void PipelineConfig::validate() const
{
    signals.grid.validate();
    require(signals.total() >= 1, ErrorCode::InvalidConfig, "signal plan is empty");
    if (signals.n_aprbs) signals.aprbs.validate(signals.grid);
    if (signals.n_sinaprbs) {
        signals.sinaprbs.validate(signals.grid);
        require(signals.sinaprbs.transition_time > 0.0, ErrorCode::InvalidConfig,
                "signals.sinaprbs.transition_time must be positive");
    }
    if (signals.n_multisine) signals.multisine.validate(signals.grid);
    fom.validate();
    train.validate();
    require(test_size >= 1, ErrorCode::InvalidConfig, "test_group.size must be >= 1");
    require(test_size + 2 <= signals.total(), ErrorCode::KTooLarge,
            "test_group.size leaves fewer than two training data sets");
    require(bins >= 2, ErrorCode::InvalidConfig, "test_group.bins must be >= 2");
    require(feature_index(base_rule.feature).has_value(), ErrorCode::InvalidConfig,
            "base_rule.feature '" + base_rule.feature + "' is not a known feature");
    require(partners >= 1, ErrorCode::InvalidConfig, "partners must be >= 1");
    require(workers >= 1, ErrorCode::InvalidConfig, "workers must be >= 1");
    require(!complexity || *complexity <= 64, ErrorCode::InvalidConfig, "complexity out of range");
}

PipelineConfig parse_config(const std::string& json_text)
{
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ParseFailure, std::string("config: ") + e.what());
    }
    PipelineConfig cfg;
    {
        ObjectReader r(doc, "config");
        std::string store = cfg.store_root.string();
        std::string out_dir = cfg.out_dir.string();
        r.get("store", store);
        r.get("out_dir", out_dir);
        cfg.store_root = store;
        cfg.out_dir = out_dir;
        r.get("workers", cfg.workers);
        if (const auto* v = r.find("signals")) read_signals(*v, cfg.signals);
        if (const auto* v = r.find("fom")) read_fom(*v, cfg.fom);
        if (const auto* v = r.find("train")) read_train(*v, cfg.train);
        if (const auto* v = r.find("complexity")) {
            if (v->is_string()) {
                require(v->get<std::string>() == "auto", ErrorCode::InvalidConfig,
                        "complexity must be \"auto\" or a non-negative integer");
                cfg.complexity.reset();
            } else {
                std::size_t c = 0;
                r.get("complexity", c);
                cfg.complexity = c;
            }
        }
        if (const auto* v = r.find("test_group")) {
            ObjectReader t(*v, "config.test_group");
            t.get("size", cfg.test_size);
            t.get("bins", cfg.bins);
            t.finish();
        }
        if (const auto* v = r.find("base_rule")) {
            ObjectReader b(*v, "config.base_rule");
            b.get("feature", cfg.base_rule.feature);
            std::string dir = cfg.base_rule.maximize ? "max" : "min";
            b.get("direction", dir);
            require(dir == "max" || dir == "min", ErrorCode::InvalidConfig,
                    "base_rule.direction must be \"max\" or \"min\"");
            cfg.base_rule.maximize = dir == "max";
            b.finish();
        }
        r.get("partners", cfg.partners);
        r.finish();
    }
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const PipelineConfig& cfg)
{
    json j = results_json(cfg);
    j["store"] = cfg.store_root.string();
    j["out_dir"] = cfg.out_dir.string();
    j["workers"] = cfg.workers;
    return j.dump(2) + "\n";
}

std::string config_digest(const PipelineConfig& cfg)
{
    json j = results_json(cfg);
    j["version"] = kPipelineVersion;
    return digest_hex(j.dump());
}

std::string_view stage_name(Stage s) noexcept
{
    switch (s) {
    case Stage::Signals: return "signals";
    case Stage::Simulate: return "simulate";
    case Stage::Features: return "features";
    case Stage::SelectTest: return "select-test";
    case Stage::TrainSingle: return "train";
    case Stage::Correlate: return "correlate";
    case Stage::PartnerChart: return "partner-chart";
    case Stage::Finalize: return "finalize";
    }
    return "unknown";
}

RunReport run_pipeline(const PipelineConfig& cfg, Stage last, std::ostream* log)
{
    cfg.validate();
    return Runner(cfg, log).run(last);
}

std::string predict_csv(const RomModel& model, const ExcitationSignal& signal, std::span<const double> x0)
{
    model.validate();
    require(x0.size() == model.n, ErrorCode::InvalidDimension,
            "x0 has " + std::to_string(x0.size()) + " values, the model has " + std::to_string(model.n) + " outputs");
    const auto traj = integrate(model, signal, x0);
    std::string out = "# config_digest: " + digest_hex(model_to_json(model)) + "\nt";
    for (std::size_t j = 0; j < model.n; ++j) {
        out += ',';
        out += model.n == kChannelNames.size() ? std::string(kChannelNames[j]) : "Y" + std::to_string(j + 1);
    }
    out += '\n';
    for (std::size_t k = 0; k < signal.grid.n_samples; ++k) {
        out += fmt(signal.grid.time(k));
        for (std::size_t j = 0; j < model.n; ++j) {
            out += ',';
            out += fmt(traj.outputs(j, k));
        }
        out += '\n';
    }
    return out;
}

SpeedReport bench(const RomModel& model, const FomConfig& fom, const ExcitationSignal& signal,
                  std::size_t rom_repetitions, std::size_t fom_repetitions)
{
    require(rom_repetitions >= 10, ErrorCode::InvalidConfig, "ROM timing needs at least 10 repetitions");
    require(fom_repetitions >= 1, ErrorCode::InvalidConfig, "FOM timing needs at least 1 repetition");
    model.validate();
    using Clock = std::chrono::steady_clock;
    auto time_it = [](auto&& fn) {
        const auto t0 = Clock::now();
        fn();
        return std::chrono::duration<double>(Clock::now() - t0).count();
    };

    std::vector<double> x0(model.n);
    for (std::size_t j = 0; j < model.n; ++j) x0[j] = model.norm.outputs[j].offset;
    std::vector<double> rom_times, fom_times;
    double sink = 0.0;
    for (std::size_t r = 0; r < rom_repetitions; ++r) {
        rom_times.push_back(time_it([&] { sink += integrate(model, signal, x0).outputs(0, 0); }));
    }
    for (std::size_t r = 0; r < fom_repetitions; ++r) {
        fom_times.push_back(time_it([&] { sink += simulate_fom(signal, fom).outputs(0, 0); }));
    }
    require(std::isfinite(sink), ErrorCode::NonfiniteState, "benchmark produced non-finite outputs");

    SpeedReport r;
    r.rom_wall_time = std::max(median(rom_times), 1e-9);
    r.fom_wall_time = std::max(median(fom_times), 1e-9);
    r.speedup = r.fom_wall_time / r.rom_wall_time;
    r.rom_repetitions = rom_repetitions;
    r.fom_repetitions = fom_repetitions;
    return r;
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job)
{
    workers = std::max<std::size_t>(1, std::min(workers, count));
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < count; k = next++) {
            try {
                job(k);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace twinforge
