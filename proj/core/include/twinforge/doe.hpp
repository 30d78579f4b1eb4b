#pragma once

#include "twinforge/dataset.hpp"
#include "twinforge/metrics.hpp"
#include "twinforge/rom.hpp"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace twinforge {

// ---------------------------------------------------------------------------
// Features

/// Per-data-set features. Jump-based entries exist only for APRBS-family
/// signals (and need one, respectively two, jumps). Standard deviations use 1/N.
struct FeatureVector {
    std::optional<double> mean_levels;           // mean plateau level, K
    std::optional<double> mean_jumps;            // mean signed jump, K
    std::optional<double> mean_jumps_excl_first; // mean signed jump without the first, K
    std::optional<double> mean_abs_jumps;        // mean |jump|, K
    double mean_oven = 0.0;
    double std_oven = 0.0;
    double crest_oven = 0.0; // peak / rms of the mean-removed oven signal
    double std_ta = 0.0;
    double std_tb = 0.0;
};

/// Column order of every feature table.
inline constexpr std::array<std::string_view, 9> kFeatureNames{
    "mean_levels", "mean_jumps", "mean_jumps_excl_first", "mean_abs_jumps", "mean_oven",
    "std_oven",    "crest_oven", "std_TA",                "std_TB"};

std::optional<double> feature_value(const FeatureVector& f, std::size_t index);
std::optional<std::size_t> feature_index(std::string_view name);

/// Throws MISSING_JUMPS when the feature is absent, INVALID_CONFIG for unknown names.
double require_feature(const FeatureVector& f, std::string_view name);

FeatureVector compute_features(const DataSet& ds);

// ---------------------------------------------------------------------------
// Test-group selection

struct TestGroupSelection {
    std::vector<std::string> ids; // sorted
    double chi2 = 0.0;
    bool exhaustive = false;
};

/// Picks k items whose medians spread as uniformly as possible over `bins`
/// equal-width bins spanning the observed median range (minimum chi-square
/// against the uniform target). Exhaustive when C(count, k) <= 1e5, otherwise
/// greedy construction plus pairwise-swap hill climbing. Ties resolve to the
/// lexicographically smallest id list.
/// Throws K_TOO_LARGE, DEGENERATE_RANGE, INVALID_CONFIG, LENGTH_MISMATCH.
TestGroupSelection select_by_medians(std::span<const std::string> ids, std::span<const double> medians,
                                     std::size_t k, std::size_t bins);

/// Median of channel T_A per data set, then select_by_medians.
TestGroupSelection select_test_group(std::span<const DataSet> datasets, std::size_t k, std::size_t bins);

/// Chi-square statistic of a selection given each member's bin.
double chi_square_uniform(std::span<const std::size_t> bin_of_member, std::size_t bins);

/// Equal-width bin index of every median over [min, max].
std::vector<std::size_t> median_bins(std::span<const double> medians, std::size_t bins);

// ---------------------------------------------------------------------------
// Correlation

/// Sample Pearson coefficient. Throws LENGTH_MISMATCH, INSUFFICIENT_SAMPLES (m < 3), CONSTANT_INPUT.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct CorrelationCell {
    std::optional<double> r;
    std::size_t m = 0;  // number of pairs used
    std::string error;  // set when r is absent
};

/// Rows follow kMeasureNames, columns kFeatureNames.
struct CorrelationMatrix {
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    std::vector<std::vector<CorrelationCell>> cells;

    const CorrelationCell& at(std::string_view row, std::string_view col) const;
};

/// Entry (measure, feature) correlates the test-group mean of the measure with
/// the feature over all ROMs that have the feature. Per-cell failures are
/// recorded, not thrown; LENGTH_MISMATCH if the lists are misaligned.
CorrelationMatrix corr_matrix(std::span<const FeatureVector> features, std::span<const GlobalMetrics> errors);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual_std = 0.0; // sqrt(SSE / (m - 2))
    double t_quantile = 0.0;   // two-sided, m - 2 degrees of freedom
    double x_mean = 0.0;
    double sxx = 0.0;
    std::size_t m = 0;
    std::vector<double> lower; // band at each input x
    std::vector<double> upper;

    double predict(double x) const noexcept { return intercept + slope * x; }
    double half_width(double x) const noexcept;
};

/// Least-squares line with the pointwise confidence band of the mean response
/// at level p. Throws INSUFFICIENT_SAMPLES, LENGTH_MISMATCH, CONSTANT_INPUT.
LinearFit linfit_bounds(std::span<const double> xs, std::span<const double> ys, double p = 0.95);

// ---------------------------------------------------------------------------
// Training partners

/// rms of the sample-wise oven-temperature difference. Throws GRID_MISMATCH.
double similarity(const ExcitationSignal& a, const ExcitationSignal& b);

enum class PartnerCategory { TooSimilar, GoodPartnerSimilarity, DissimilarWeak, HighBaseError };

std::string_view to_string(PartnerCategory c) noexcept;

struct PartnerThresholds {
    double similarity_p10 = 0.0;
    double own_error_p50 = 0.0;
    double base_error_p75 = 0.0;
};

/// Pure classification rule:
///   similarity == 0 or below p10             -> TOO_SIMILAR
///   own-ROM error above the cohort median     -> DISSIMILAR_WEAK
///   base-ROM error at or above p75            -> HIGH_BASE_ERROR
///   otherwise                                 -> GOOD_PARTNER_SIMILARITY
PartnerCategory classify_partner(double similarity, double base_error, double own_error,
                                 const PartnerThresholds& t) noexcept;

struct PartnerRow {
    std::string id;
    double similarity = 0.0;
    double base_rom_error = 0.0; // rmse of the base ROM on this candidate, K
    double own_rom_error = 0.0;  // test-group mean rmse of the candidate's own ROM, K
    PartnerCategory category = PartnerCategory::TooSimilar;
    std::size_t score = 0;       // rank(base error, desc) + rank(own error, asc)
};

struct PartnerChart {
    std::string base_id;
    PartnerThresholds thresholds;
    std::vector<PartnerRow> rows; // sorted by (score, id)

    /// Candidates other than the base whose category is GOOD_PARTNER_SIMILARITY
    /// or HIGH_BASE_ERROR, in chart order.
    std::vector<std::string> recommendations() const;
};

/// Physical-unit predictions of `model` on a data set, starting from its first output sample.
Matrix predict_outputs(const RomModel& model, const DataSet& ds);
MetricSet evaluate_on(const RomModel& model, const DataSet& ds);
GlobalMetrics evaluate_on_group(const RomModel& model, std::span<const DataSet> group);

/// Classifies and ranks from precomputed per-candidate measurements.
PartnerChart rank_partners(std::string base_id, std::vector<PartnerRow> rows);

/// Throws MISSING_ROM when a candidate lacks its own ROM, NOT_FOUND when the
/// base is not among the candidates.
PartnerChart partner_chart(const std::string& base_id, std::span<const DataSet> candidates, const RomModel& base_rom,
                           const std::map<std::string, RomModel>& own_roms, std::span<const DataSet> test_group);

} // namespace twinforge
