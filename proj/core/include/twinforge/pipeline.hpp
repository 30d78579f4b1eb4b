#pragma once

#include "twinforge/doe.hpp"
#include "twinforge/fom.hpp"
#include "twinforge/rom.hpp"
#include "twinforge/signals.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace twinforge {

struct SignalPlan {
    TimeGrid grid;
    std::size_t n_aprbs = 14;
    std::size_t n_sinaprbs = 3;
    std::size_t n_multisine = 3;
    AprbsConfig aprbs;
    AprbsConfig sinaprbs = [] {
        AprbsConfig c;
        c.transition_time = 100.0;
        return c;
    }();
    MultisineConfig multisine;
    std::uint64_t seed_base = 1;

    std::size_t total() const noexcept { return n_aprbs + n_sinaprbs + n_multisine; }
};

/// Which non-test data set becomes the base of the partner chart.
struct BaseRule {
    std::string feature = "std_TB";
    bool maximize = true;
};

struct PipelineConfig {
    std::filesystem::path store_root = "store";
    std::filesystem::path out_dir = "twinforge-run";
    SignalPlan signals;
    FomConfig fom;
    TrainConfig train;
    std::optional<std::size_t> complexity; // empty: chosen per ROM by select_complexity
    std::size_t test_size = 5;
    std::size_t bins = 5;
    BaseRule base_rule;
    std::size_t partners = 3;
    std::size_t workers = 1;

    /// Throws INVALID_CONFIG.
    void validate() const;
};

/// JSON config document; absent keys keep their defaults, unknown keys are
/// rejected. Throws PARSE_FAILURE or INVALID_CONFIG.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& cfg);

/// Digest of everything that influences results (paths and worker count excluded).
std::string config_digest(const PipelineConfig& cfg);

enum class Stage : int {
    Signals = 1,
    Simulate,
    Features,
    SelectTest,
    TrainSingle,
    Correlate,
    PartnerChart,
    Finalize,
};

std::string_view stage_name(Stage s) noexcept;

struct StageStatus {
    Stage stage = Stage::Signals;
    std::string digest;
    bool skipped = false; // checkpoint matched, nothing recomputed or rewritten
};

struct RunReport {
    std::string config_digest;
    std::vector<StageStatus> stages;
    std::vector<std::string> dataset_ids;
    std::vector<std::string> test_ids;
    double test_chi2 = 0.0;
    std::string base_id;
    std::vector<std::string> partner_ids; // 2-data-set ROMs trained, in chart order
    std::string final_partner_id;
    double final_rmse = 0.0;           // test-group mean rmse of the final ROM, K
    std::string best_single_id;
    double best_single_rmse = 0.0;     // best 1-data-set ROM on the test group, K
    double reduction_percent = 0.0;    // 100 * (best_single - final) / best_single
    bool improved = false;             // final < best single
    std::filesystem::path final_model;
};

/// Runs stages 1..last. Each stage writes its artifacts under cfg.out_dir plus a
/// checkpoint; a stage whose checkpoint digest matches is skipped. Failures
/// inside a stage surface as STAGE_FAILURE naming the stage.
RunReport run_pipeline(const PipelineConfig& cfg, Stage last = Stage::Finalize, std::ostream* log = nullptr);

/// `# config_digest:` line (digest of the model file), header t,T_A,T_B, one row per sample.
std::string predict_csv(const RomModel& model, const ExcitationSignal& signal, std::span<const double> x0);

struct SpeedReport {
    double rom_wall_time = 0.0; // s per trajectory, median
    double fom_wall_time = 0.0; // s per trajectory, median
    double speedup = 0.0;       // fom / rom
    std::size_t rom_repetitions = 0;
    std::size_t fom_repetitions = 0;
};

/// Times the ROM (median of >= 10 runs) and the FOM (>= 1 run) on the same signal.
SpeedReport bench(const RomModel& model, const FomConfig& fom, const ExcitationSignal& signal,
                  std::size_t rom_repetitions = 25, std::size_t fom_repetitions = 1);

/// Maps `count` independent jobs onto at most `workers` threads. Exceptions are
/// rethrown after all threads join; the one from the lowest index wins.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job);

} // namespace twinforge
