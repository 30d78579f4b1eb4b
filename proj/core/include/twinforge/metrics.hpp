#pragma once

#include "twinforge/matrix.hpp"

#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace twinforge {

/// Error measures of one (ROM, data set) pair. Signed errors are pred - ref,
/// pooled across channels; r2 is the channel mean of per-channel R^2.
struct MetricSet {
    double rmse = 0.0; // K
    double mape = 0.0; // percent
    double maxe = 0.0; // K
    double mede = 0.0; // K, signed
    double iqr = 0.0;  // K
    double r2 = 1.0;

    bool operator==(const MetricSet&) const = default;
};

inline constexpr std::array<std::string_view, 6> kMeasureNames{"rmse", "mape", "maxe", "mede", "iqr", "r2"};

/// Value of the measure at `index` into kMeasureNames.
double measure(const MetricSet& m, std::size_t index);

/// Throws SHAPE_MISMATCH, ZERO_REFERENCE or CONSTANT_REFERENCE.
MetricSet evaluate(const Matrix& pred, const Matrix& ref);

// Individual measures, same conventions as evaluate().
double rmse(const Matrix& pred, const Matrix& ref);
double mape(const Matrix& pred, const Matrix& ref);
double max_error(const Matrix& pred, const Matrix& ref);
double median_error(const Matrix& pred, const Matrix& ref);
double iqr_error(const Matrix& pred, const Matrix& ref);
double r_squared(const Matrix& pred, const Matrix& ref);

/// Test-group averages (the overbarred quantities) plus the per-data-set values.
struct GlobalMetrics {
    MetricSet mean;
    std::vector<MetricSet> sets;
};

/// Throws EMPTY_GROUP.
GlobalMetrics aggregate(std::span<const MetricSet> sets);

/// Percentile with linear interpolation between order statistics
/// (position q * (n - 1) in the sorted sample), q in [0, 1].
double percentile(std::vector<double> values, double q);
double median(std::vector<double> values);

} // namespace twinforge
