#include "twinforge/metrics.hpp"

#include "twinforge/error.hpp"

#include <algorithm>
#include <cmath>

namespace twinforge {

namespace {

void check_shapes(const Matrix& pred, const Matrix& ref)
{
    require(pred.rows() == ref.rows() && pred.cols() == ref.cols(), ErrorCode::ShapeMismatch,
            "prediction and reference shapes differ");
    require(ref.rows() >= 1 && ref.cols() >= 1, ErrorCode::ShapeMismatch, "empty reference");
}

std::vector<double> signed_errors(const Matrix& pred, const Matrix& ref)
{
    check_shapes(pred, ref);
    std::vector<double> e(ref.size());
    for (std::size_t p = 0; p < e.size(); ++p) e[p] = pred.flat()[p] - ref.flat()[p];
    return e;
}

// Summation in sorted order makes group means independent of list order.
double order_free_mean(std::vector<double> values)
{
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

} // namespace

double measure(const MetricSet& m, std::size_t index)
{
    switch (index) {
    case 0: return m.rmse;
    case 1: return m.mape;
    case 2: return m.maxe;
    case 3: return m.mede;
    case 4: return m.iqr;
    case 5: return m.r2;
    default: fail(ErrorCode::OutOfRange, "measure index " + std::to_string(index));
    }
}

double percentile(std::vector<double> values, double q)
{
    require(!values.empty(), ErrorCode::EmptyGroup, "percentile of an empty sample");
    require(q >= 0.0 && q <= 1.0, ErrorCode::OutOfRange, "percentile q must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values)
{
    return percentile(std::move(values), 0.5);
}

double rmse(const Matrix& pred, const Matrix& ref)
{
    double sq = 0.0;
    for (double e : signed_errors(pred, ref)) sq += e * e;
    return std::sqrt(sq / static_cast<double>(ref.size()));
}

double mape(const Matrix& pred, const Matrix& ref)
{
    check_shapes(pred, ref);
    double sum = 0.0;
    for (std::size_t p = 0; p < ref.size(); ++p) {
        const double r = ref.flat()[p];
        require(r != 0.0, ErrorCode::ZeroReference, "reference value 0 makes the percentage error undefined");
        sum += std::abs(pred.flat()[p] - r) / std::abs(r);
    }
    return sum / static_cast<double>(ref.size()) * 100.0;
}

double max_error(const Matrix& pred, const Matrix& ref)
{
    double m = 0.0;
    for (double e : signed_errors(pred, ref)) m = std::max(m, std::abs(e));
    return m;
}

double median_error(const Matrix& pred, const Matrix& ref)
{
    return median(signed_errors(pred, ref));
}

double iqr_error(const Matrix& pred, const Matrix& ref)
{
    auto e = signed_errors(pred, ref);
    std::sort(e.begin(), e.end());
    return percentile(e, 0.75) - percentile(e, 0.25);
}

double r_squared(const Matrix& pred, const Matrix& ref)
{
    check_shapes(pred, ref);
    double r2 = 0.0;
    for (std::size_t j = 0; j < ref.rows(); ++j) {
        const auto r = ref.row(j);
        const auto p = pred.row(j);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(r.size());
        double ss_res = 0.0;
        double ss_tot = 0.0;
        for (std::size_t k = 0; k < r.size(); ++k) {
            ss_res += (p[k] - r[k]) * (p[k] - r[k]);
            ss_tot += (r[k] - mean) * (r[k] - mean);
        }
        require(ss_tot > 0.0, ErrorCode::ConstantReference,
                "reference channel " + std::to_string(j) + " is constant; R^2 undefined");
        r2 += 1.0 - ss_res / ss_tot;
    }
    return r2 / static_cast<double>(ref.rows());
}

MetricSet evaluate(const Matrix& pred, const Matrix& ref)
{
    MetricSet m;
    m.rmse = rmse(pred, ref);
    m.mape = mape(pred, ref);
    m.maxe = max_error(pred, ref);
    m.mede = median_error(pred, ref);
    m.iqr = iqr_error(pred, ref);
    m.r2 = r_squared(pred, ref);
    return m;
}

GlobalMetrics aggregate(std::span<const MetricSet> sets)
{
    require(!sets.empty(), ErrorCode::EmptyGroup, "cannot aggregate an empty test group");
    GlobalMetrics g;
    g.sets.assign(sets.begin(), sets.end());
    double* fields[6] = {&g.mean.rmse, &g.mean.mape, &g.mean.maxe, &g.mean.mede, &g.mean.iqr, &g.mean.r2};
    for (std::size_t idx = 0; idx < kMeasureNames.size(); ++idx) {
        std::vector<double> column;
        column.reserve(sets.size());
        for (const auto& s : sets) column.push_back(measure(s, idx));
        *fields[idx] = order_free_mean(std::move(column));
    }
    return g;
}

} // namespace twinforge
