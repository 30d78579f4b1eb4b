// twinforge command-line front end: one subcommand per pipeline step plus
// stand-alone predict and bench.
#include "twinforge/dataset_store.hpp"
#include "twinforge/digest.hpp"
#include "twinforge/doe.hpp"
#include "twinforge/error.hpp"
#include "twinforge/fom.hpp"
#include "twinforge/metrics.hpp"
#include "twinforge/pipeline.hpp"
#include "twinforge/report.hpp"
#include "twinforge/rom.hpp"

#include <CLI11.hpp>

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tf = twinforge;

namespace {

struct Common {
    std::string config;
    std::string store;
    std::string out;
    std::optional<std::size_t> workers;
};

struct PipelineFlags {
    std::optional<std::uint64_t> seed_base;
    std::optional<std::size_t> k;
    std::optional<std::size_t> bins;
    std::optional<std::size_t> partners;
    std::optional<int> max_epochs;
    std::string complexity;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("-c,--config", c.config, "pipeline config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--store", c.store, "data-set store root (default: $TWINFORGE_STORE, then config)");
    cmd->add_option("-w,--workers", c.workers, "worker threads for independent jobs");
}

void add_pipeline_flags(CLI::App* cmd, Common& c, PipelineFlags& f)
{
    cmd->add_option("-o,--out", c.out, "report directory");
    cmd->add_option("--seed-base", f.seed_base, "first generator seed");
    cmd->add_option("-k,--test-size", f.k, "test-group size");
    cmd->add_option("--bins", f.bins, "median bins for the test-group selection");
    cmd->add_option("-P,--partners", f.partners, "2-data-set ROMs to train");
    cmd->add_option("--max-epochs", f.max_epochs, "training epoch budget");
    cmd->add_option("--complexity", f.complexity, "augmentation i, or 'auto'");
}

std::optional<std::size_t> parse_complexity(const std::string& s)
{
    if (s == "auto") return std::nullopt;
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    tf::require(pos == s.size() && !s.empty(), tf::ErrorCode::InvalidConfig,
                "--complexity expects a non-negative integer or 'auto', got '" + s + "'");
    return v;
}

tf::PipelineConfig resolve(const Common& c, const PipelineFlags* f = nullptr)
{
    tf::PipelineConfig cfg = c.config.empty() ? tf::PipelineConfig{} : tf::load_config(c.config);
    if (const char* env = std::getenv("TWINFORGE_STORE"); env && *env && c.config.empty()) cfg.store_root = env;
    if (!c.store.empty()) cfg.store_root = c.store;
    if (!c.out.empty()) cfg.out_dir = c.out;
    if (c.workers) cfg.workers = *c.workers;
    if (f) {
        if (f->seed_base) cfg.signals.seed_base = *f->seed_base;
        if (f->k) cfg.test_size = *f->k;
        if (f->bins) cfg.bins = *f->bins;
        if (f->partners) cfg.partners = *f->partners;
        if (f->max_epochs) cfg.train.max_epochs = *f->max_epochs;
        if (!f->complexity.empty()) cfg.complexity = parse_complexity(f->complexity);
    }
    return cfg;
}

std::vector<tf::DataSet> load_sets(const tf::StoreManifest& store, std::vector<std::string> ids)
{
    if (ids.empty()) {
        for (const auto& e : store.entries) ids.push_back(e.id);
    }
    tf::require(!ids.empty(), tf::ErrorCode::EmptyGroup, "store " + store.root.string() + " holds no data sets");
    std::vector<tf::DataSet> out;
    for (const auto& id : ids) out.push_back(tf::load_dataset(id, store));
    return out;
}

void emit(const std::string& text, const std::string& path)
{
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        tf::write_file_atomic(path, text);
    }
}

std::string fmt(double v) { return tf::format_double(v); }

void print_run(const tf::RunReport& r, tf::Stage last)
{
    std::cout << "config digest  " << r.config_digest << '\n';
    if (!r.test_ids.empty()) {
        std::cout << "test group     ";
        for (const auto& id : r.test_ids) std::cout << id << ' ';
        std::cout << "(chi2 " << r.test_chi2 << ")\n";
    }
    if (!r.best_single_id.empty()) {
        std::cout << "best 1-set ROM " << r.best_single_id << "  rmse " << r.best_single_rmse << " K\n";
    }
    if (!r.base_id.empty()) std::cout << "base data set  " << r.base_id << '\n';
    if (last == tf::Stage::Finalize) {
        std::cout << "final ROM      " << r.base_id << " + " << r.final_partner_id << "  rmse " << r.final_rmse
                  << " K\n";
        std::printf("reduction      %.1f %%\n", r.reduction_percent);
        if (!r.improved) std::cout << "NO IMPROVEMENT over the best 1-data-set ROM\n";
        std::cout << "model          " << r.final_model.string() << '\n';
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"twinforge: neural-ODE reduced-order models from a transient simulation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "twinforge 0.1.0");

    Common common;
    PipelineFlags pflags;

    // gen-signals
    auto* gen = app.add_subcommand("gen-signals", "synthesize excitation signals as CSV files");
    std::string gen_kind = "aprbs";
    std::size_t gen_count = 1;
    std::uint64_t gen_seed = 1;
    std::string gen_dir = ".";
    add_common(gen, common);
    gen->add_option("--kind", gen_kind, "aprbs | sinaprbs | multisine")
        ->transform(CLI::IsMember({"aprbs", "sinaprbs", "multisine"}, CLI::ignore_case));
    gen->add_option("-n,--count", gen_count, "number of signals");
    gen->add_option("--seed", gen_seed, "seed of the first signal (then +1 each)");
    gen->add_option("-o,--out", gen_dir, "output directory");

    // simulate
    auto* sim = app.add_subcommand("simulate", "run the reference model on signals and store the data sets");
    std::vector<std::string> sim_signals;
    std::string sim_id;
    add_common(sim, common);
    sim->add_option("signals", sim_signals, "signal CSV files")->required()->check(CLI::ExistingFile);
    sim->add_option("--id", sim_id, "explicit id (single signal only)");

    // features
    auto* feat = app.add_subcommand("features", "feature table of stored data sets");
    std::vector<std::string> ids;
    std::string output;
    add_common(feat, common);
    feat->add_option("--ids", ids, "data-set ids (default: all)")->delimiter(',');
    feat->add_option("-o,--output", output, "CSV file (default: stdout)");

    // select-test
    auto* sel = app.add_subcommand("select-test", "chi-square test-group selection over stored data sets");
    std::size_t sel_k = 5, sel_bins = 5;
    add_common(sel, common);
    sel->add_option("-k", sel_k, "test-group size");
    sel->add_option("--bins", sel_bins, "median bins");
    sel->add_option("--ids", ids, "candidate ids (default: all)")->delimiter(',');
    sel->add_option("-o,--output", output, "CSV file (default: stdout)");

    // train
    auto* trn = app.add_subcommand("train", "train a ROM on stored data sets");
    std::string model_path;
    std::string trn_complexity = "auto";
    add_common(trn, common);
    trn->add_option("--ids", ids, "training data-set ids")->delimiter(',')->required();
    trn->add_option("--complexity", trn_complexity, "augmentation i, or 'auto'");
    trn->add_option("--max-epochs", pflags.max_epochs, "epoch budget");
    trn->add_option("-o,--output", model_path, "model file")->required();

    // evaluate
    auto* eva = app.add_subcommand("evaluate", "error measures of a ROM on stored data sets");
    add_common(eva, common);
    eva->add_option("-m,--model", model_path, "model file")->required()->check(CLI::ExistingFile);
    eva->add_option("--ids", ids, "evaluation ids (default: all)")->delimiter(',');
    eva->add_option("-o,--output", output, "CSV file (default: stdout)");

    // pipeline-backed steps
    struct StageCmd {
        const char* name;
        const char* help;
        tf::Stage last;
    };
    const StageCmd stage_cmds[] = {
        {"correlate", "run the pipeline through the correlation matrix", tf::Stage::Correlate},
        {"partner-chart", "run the pipeline through the training-partner chart", tf::Stage::PartnerChart},
        {"finalize", "run the pipeline through the final 2-data-set ROM", tf::Stage::Finalize},
        {"run", "run the full pipeline (resumes from checkpoints)", tf::Stage::Finalize},
    };
    std::vector<std::pair<CLI::App*, tf::Stage>> stage_apps;
    bool quiet = false;
    for (const auto& sc : stage_cmds) {
        auto* cmd = app.add_subcommand(sc.name, sc.help);
        add_common(cmd, common);
        add_pipeline_flags(cmd, common, pflags);
        cmd->add_flag("-q,--quiet", quiet, "no progress output");
        stage_apps.emplace_back(cmd, sc.last);
    }

    // predict
    auto* pred = app.add_subcommand("predict", "integrate a ROM on an oven-temperature signal");
    std::string signal_path;
    std::vector<double> x0;
    pred->add_option("-m,--model", model_path, "model file")->required()->check(CLI::ExistingFile);
    pred->add_option("-s,--signal", signal_path, "signal or data-set CSV")->required()->check(CLI::ExistingFile);
    pred->add_option("--x0", x0, "initial outputs in kelvin (default: first row of a data-set CSV)")->delimiter(',');
    pred->add_option("-o,--output", output, "CSV file (default: stdout)");

    // bench
    auto* ben = app.add_subcommand("bench", "time ROM prediction against the reference model");
    std::size_t reps = 25, fom_reps = 1;
    add_common(ben, common);
    ben->add_option("-m,--model", model_path, "model file")->required()->check(CLI::ExistingFile);
    ben->add_option("-s,--signal", signal_path, "signal or data-set CSV")->required()->check(CLI::ExistingFile);
    ben->add_option("--reps", reps, "ROM repetitions (>= 10)");
    ben->add_option("--fom-reps", fom_reps, "reference-model repetitions (>= 1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            const auto cfg = resolve(common);
            std::string upper = gen_kind;
            for (auto& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            const auto kind = tf::signal_kind_from_string(upper);
            std::filesystem::create_directories(gen_dir);
            for (std::size_t k = 0; k < gen_count; ++k) {
                const auto seed = gen_seed + k;
                auto sig = kind == tf::SignalKind::Aprbs      ? tf::gen_aprbs(cfg.signals.aprbs, cfg.signals.grid, seed)
                           : kind == tf::SignalKind::SinAprbs ? tf::gen_sinaprbs(cfg.signals.sinaprbs, cfg.signals.grid, seed)
                                                              : tf::gen_multisine(cfg.signals.multisine, cfg.signals.grid, seed);
                char name[64];
                std::snprintf(name, sizeof name, "%s_seed%llu.csv", gen_kind.c_str(),
                              static_cast<unsigned long long>(seed));
                std::ostringstream os;
                tf::write_signal_csv(os, sig);
                const auto path = std::filesystem::path(gen_dir) / name;
                tf::write_file_atomic(path, os.str());
                std::cout << path.string() << '\n';
            }
        } else if (sim->parsed()) {
            const auto cfg = resolve(common);
            tf::require(sim_id.empty() || sim_signals.size() == 1, tf::ErrorCode::InvalidConfig,
                        "--id needs exactly one signal");
            auto store = tf::open_store(cfg.store_root);
            for (const auto& path : sim_signals) {
                auto ds = tf::simulate_fom(tf::read_signal_csv(path), cfg.fom);
                ds.id = sim_id;
                std::cout << tf::save_dataset(std::move(ds), store) << '\n';
            }
        } else if (feat->parsed()) {
            const auto cfg = resolve(common);
            const auto sets = load_sets(tf::open_store(cfg.store_root), ids);
            std::vector<std::string> header{"id", "kind"};
            for (auto n : tf::kFeatureNames) header.emplace_back(n);
            tf::CsvTable t{tf::config_digest(cfg), header, {}};
            for (const auto& ds : sets) {
                const auto f = tf::compute_features(ds);
                std::vector<std::string> row{ds.id, std::string(tf::to_string(ds.excitation.kind))};
                for (std::size_t k = 0; k < tf::kFeatureNames.size(); ++k) {
                    const auto v = tf::feature_value(f, k);
                    row.push_back(v ? fmt(*v) : "");
                }
                t.rows.push_back(std::move(row));
            }
            emit(t.str(), output);
        } else if (sel->parsed()) {
            const auto cfg = resolve(common);
            const auto sets = load_sets(tf::open_store(cfg.store_root), ids);
            const auto s = tf::select_test_group(sets, sel_k, sel_bins);
            tf::CsvTable t{tf::config_digest(cfg), {"id"}, {}};
            for (const auto& id : s.ids) t.rows.push_back({id});
            emit(t.str(), output);
            std::cerr << "chi2 " << s.chi2 << (s.exhaustive ? " (exhaustive)" : " (hill climbing)") << '\n';
        } else if (trn->parsed()) {
            auto cfg = resolve(common, &pflags);
            if (pflags.max_epochs) cfg.train.max_epochs = *pflags.max_epochs;
            cfg.complexity = parse_complexity(trn_complexity);
            cfg.train.validate();
            const auto sets = load_sets(tf::open_store(cfg.store_root), ids);
            tf::RomModel model;
            if (cfg.complexity) {
                model = tf::train(sets, *cfg.complexity, cfg.train).model;
            } else {
                model = tf::select_complexity(sets, cfg.train).result.model;
            }
            tf::export_model(model, model_path);
            double sum = 0.0;
            for (const auto& ds : sets) sum += tf::rmse(tf::predict_outputs(model, ds), ds.outputs);
            std::cout << "i=" << model.i << " training rmse " << sum / static_cast<double>(sets.size()) << " K -> "
                      << model_path << '\n';
        } else if (eva->parsed()) {
            const auto cfg = resolve(common);
            const auto model = tf::import_model(model_path);
            const auto sets = load_sets(tf::open_store(cfg.store_root), ids);
            std::vector<std::string> header{"id"};
            for (auto n : tf::kMeasureNames) header.emplace_back(n);
            tf::CsvTable t{tf::digest_hex(tf::model_to_json(model)), header, {}};
            std::vector<tf::MetricSet> all;
            for (const auto& ds : sets) {
                all.push_back(tf::evaluate_on(model, ds));
                std::vector<std::string> row{ds.id};
                for (std::size_t k = 0; k < tf::kMeasureNames.size(); ++k) row.push_back(fmt(tf::measure(all.back(), k)));
                t.rows.push_back(std::move(row));
            }
            const auto g = tf::aggregate(all);
            std::vector<std::string> row{"mean"};
            for (std::size_t k = 0; k < tf::kMeasureNames.size(); ++k) row.push_back(fmt(tf::measure(g.mean, k)));
            t.rows.push_back(std::move(row));
            emit(t.str(), output);
        } else if (pred->parsed()) {
            const auto model = tf::import_model(model_path);
            tf::ExcitationSignal sig;
            std::optional<tf::DataSet> ds;
            try {
                ds = tf::read_dataset_csv(std::filesystem::path(signal_path));
                sig = ds->excitation;
            } catch (const tf::Error& e) {
                if (e.code() != tf::ErrorCode::ParseFailure) throw;
                sig = tf::read_signal_csv(signal_path);
            }
            if (x0.empty()) {
                tf::require(ds.has_value(), tf::ErrorCode::InvalidConfig,
                            "--x0 is required when the signal file carries no outputs");
                for (std::size_t j = 0; j < model.n; ++j) x0.push_back(ds->outputs(j, 0));
            }
            emit(tf::predict_csv(model, sig, x0), output);
        } else if (ben->parsed()) {
            const auto cfg = resolve(common);
            const auto model = tf::import_model(model_path);
            const auto sig = tf::read_signal_csv(signal_path);
            const auto r = tf::bench(model, cfg.fom, sig, reps, fom_reps);
            std::printf("rom_wall_time %.6e s (median of %zu)\n", r.rom_wall_time, r.rom_repetitions);
            std::printf("fom_wall_time %.6e s (median of %zu)\n", r.fom_wall_time, r.fom_repetitions);
            std::printf("speedup       %.1f\n", r.speedup);
        } else {
            for (const auto& [cmd, last] : stage_apps) {
                if (!cmd->parsed()) continue;
                const auto cfg = resolve(common, &pflags);
                const auto report = tf::run_pipeline(cfg, last, quiet ? nullptr : &std::cerr);
                print_run(report, last);
            }
        }
    } catch (const tf::Error& e) {
        std::cerr << "twinforge: " << e.what() << '\n';
        return e.code() == tf::ErrorCode::StageFailure ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "twinforge: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
