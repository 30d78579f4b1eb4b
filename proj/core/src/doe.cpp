#include "twinforge/doe.hpp"

#include "twinforge/error.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace twinforge {

namespace {

double mean_of(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double population_std(std::span<const double> v)
{
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size()));
}

} // namespace

// ---------------------------------------------------------------------------
// Features

std::optional<double> feature_value(const FeatureVector& f, std::size_t index)
{
    switch (index) {
    case 0: return f.mean_levels;
    case 1: return f.mean_jumps;
    case 2: return f.mean_jumps_excl_first;
    case 3: return f.mean_abs_jumps;
    case 4: return f.mean_oven;
    case 5: return f.std_oven;
    case 6: return f.crest_oven;
    case 7: return f.std_ta;
    case 8: return f.std_tb;
    default: return std::nullopt;
    }
}

std::optional<std::size_t> feature_index(std::string_view name)
{
    for (std::size_t i = 0; i < kFeatureNames.size(); ++i) {
        if (kFeatureNames[i] == name) return i;
    }
    return std::nullopt;
}

double require_feature(const FeatureVector& f, std::string_view name)
{
    const auto idx = feature_index(name);
    require(idx.has_value(), ErrorCode::InvalidConfig, "unknown feature '" + std::string(name) + "'");
    const auto v = feature_value(f, *idx);
    require(v.has_value(), ErrorCode::MissingJumps,
            "feature '" + std::string(name) + "' needs an APRBS-family signal with enough jumps");
    return *v;
}

FeatureVector compute_features(const DataSet& ds)
{
    ds.validate();
    FeatureVector f;
    const auto& sig = ds.excitation;
    const bool jump_family = sig.kind != SignalKind::Multisine;
    if (jump_family && !sig.jumps.empty()) {
        const auto levels = sig.levels();
        f.mean_levels = mean_of(levels);
        double sum = 0.0;
        double abs_sum = 0.0;
        for (const auto& j : sig.jumps) {
            sum += j.delta;
            abs_sum += std::abs(j.delta);
        }
        const auto count = static_cast<double>(sig.jumps.size());
        f.mean_jumps = sum / count;
        f.mean_abs_jumps = abs_sum / count;
        if (sig.jumps.size() >= 2) {
            f.mean_jumps_excl_first = (sum - sig.jumps.front().delta) / (count - 1.0);
        }
    }

    f.mean_oven = mean_of(sig.values);
    f.std_oven = population_std(sig.values);
    if (f.std_oven > 0.0) {
        double peak = 0.0;
        for (double v : sig.values) peak = std::max(peak, std::abs(v - f.mean_oven));
        f.crest_oven = peak / f.std_oven; // rms of the mean-removed signal equals the population std
    }
    f.std_ta = population_std(ds.outputs.row(0));
    f.std_tb = population_std(ds.outputs.row(1));
    return f;
}

// ---------------------------------------------------------------------------
// Test-group selection

namespace {

constexpr double kExhaustiveLimit = 1e5;

double binomial_capped(std::size_t n, std::size_t k, double cap)
{
    k = std::min(k, n - k);
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i) {
        c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
        if (c > cap) return c;
    }
    return std::round(c);
}

// Integer numerator of chi^2: sum_b (bins*O_b - k)^2 ; chi^2 = num / (k*bins).
std::int64_t chi_numerator(std::span<const std::int64_t> counts, std::int64_t k)
{
    const auto bins = static_cast<std::int64_t>(counts.size());
    std::int64_t num = 0;
    for (auto o : counts) num += (bins * o - k) * (bins * o - k);
    return num;
}

} // namespace

std::vector<std::size_t> median_bins(std::span<const double> medians, std::size_t bins)
{
    require(bins >= 2, ErrorCode::InvalidConfig, "need at least 2 bins");
    require(!medians.empty(), ErrorCode::EmptyGroup, "no medians to bin");
    const auto [lo_it, hi_it] = std::minmax_element(medians.begin(), medians.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    require(hi > lo, ErrorCode::DegenerateRange, "all medians are equal; bins undefined");
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<std::size_t> out(medians.size());
    for (std::size_t i = 0; i < medians.size(); ++i) {
        const auto b = static_cast<std::size_t>(std::floor((medians[i] - lo) / width));
        out[i] = std::min(b, bins - 1);
    }
    return out;
}

double chi_square_uniform(std::span<const std::size_t> bin_of_member, std::size_t bins)
{
    require(!bin_of_member.empty() && bins >= 1, ErrorCode::InvalidConfig, "empty selection");
    std::vector<std::int64_t> counts(bins, 0);
    for (auto b : bin_of_member) ++counts.at(b);
    const auto k = static_cast<std::int64_t>(bin_of_member.size());
    return static_cast<double>(chi_numerator(counts, k)) / static_cast<double>(k * static_cast<std::int64_t>(bins));
}

TestGroupSelection select_by_medians(std::span<const std::string> ids, std::span<const double> medians,
                                     std::size_t k, std::size_t bins)
{
    require(ids.size() == medians.size(), ErrorCode::LengthMismatch, "ids and medians differ in length");
    require(k >= 1, ErrorCode::InvalidConfig, "test group size must be >= 1");
    require(bins >= 2, ErrorCode::InvalidConfig, "need at least 2 bins");
    const std::size_t count = ids.size();
    require(k <= count, ErrorCode::KTooLarge,
            "test group size " + std::to_string(k) + " exceeds " + std::to_string(count) + " data sets");

    // Work in lexicographic id order so the first optimum found is the tie-break winner.
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
    std::vector<double> sorted_medians(count);
    for (std::size_t p = 0; p < count; ++p) sorted_medians[p] = medians[order[p]];

    TestGroupSelection sel;
    if (k == count) {
        for (auto o : order) sel.ids.push_back(ids[o]);
        sel.exhaustive = true;
        try {
            const auto b = median_bins(sorted_medians, bins);
            sel.chi2 = chi_square_uniform(b, bins);
        } catch (const Error&) {
            sel.chi2 = std::numeric_limits<double>::quiet_NaN();
        }
        return sel;
    }

    const auto bin = median_bins(sorted_medians, bins);
    const auto kk = static_cast<std::int64_t>(k);
    std::vector<std::size_t> best;
    std::int64_t best_num = std::numeric_limits<std::int64_t>::max();

    if (binomial_capped(count, k, kExhaustiveLimit) <= kExhaustiveLimit) {
        sel.exhaustive = true;
        std::vector<std::size_t> comb(k);
        std::iota(comb.begin(), comb.end(), 0);
        std::vector<std::int64_t> counts(bins);
        while (true) {
            std::fill(counts.begin(), counts.end(), 0);
            for (auto c : comb) ++counts[bin[c]];
            const auto num = chi_numerator(counts, kk);
            if (num < best_num) {
                best_num = num;
                best = comb;
            }
            // Next combination in lexicographic order.
            std::size_t pos = k;
            while (pos > 0 && comb[pos - 1] == count - k + pos - 1) --pos;
            if (pos == 0) break;
            ++comb[pos - 1];
            for (std::size_t q = pos; q < k; ++q) comb[q] = comb[q - 1] + 1;
        }
    } else {
        std::vector<bool> chosen(count, false);
        std::vector<std::int64_t> counts(bins, 0);
        for (std::size_t step = 0; step < k; ++step) {
            std::size_t pick = count;
            std::int64_t pick_num = std::numeric_limits<std::int64_t>::max();
            for (std::size_t c = 0; c < count; ++c) {
                if (chosen[c]) continue;
                ++counts[bin[c]];
                const auto num = chi_numerator(counts, kk);
                --counts[bin[c]];
                if (num < pick_num) {
                    pick_num = num;
                    pick = c;
                }
            }
            chosen[pick] = true;
            ++counts[bin[pick]];
        }
        std::int64_t current = chi_numerator(counts, kk);
        bool improved = true;
        while (improved) {
            improved = false;
            for (std::size_t s = 0; s < count && !improved; ++s) {
                if (!chosen[s]) continue;
                for (std::size_t u = 0; u < count; ++u) {
                    if (chosen[u]) continue;
                    --counts[bin[s]];
                    ++counts[bin[u]];
                    const auto num = chi_numerator(counts, kk);
                    if (num < current) {
                        chosen[s] = false;
                        chosen[u] = true;
                        current = num;
                        improved = true;
                        break;
                    }
                    ++counts[bin[s]];
                    --counts[bin[u]];
                }
            }
        }
        for (std::size_t c = 0; c < count; ++c) {
            if (chosen[c]) best.push_back(c);
        }
        best_num = current;
    }

    for (auto b : best) sel.ids.push_back(ids[order[b]]);
    sel.chi2 = static_cast<double>(best_num) / static_cast<double>(kk * static_cast<std::int64_t>(bins));
    return sel;
}

TestGroupSelection select_test_group(std::span<const DataSet> datasets, std::size_t k, std::size_t bins)
{
    std::vector<std::string> ids;
    std::vector<double> medians;
    for (const auto& ds : datasets) {
        ids.push_back(ds.id);
        const auto row = ds.outputs.row(0);
        medians.push_back(median(std::vector<double>(row.begin(), row.end())));
    }
    return select_by_medians(ids, medians, k, bins);
}

// ---------------------------------------------------------------------------
// Correlation

double pearson(std::span<const double> xs, std::span<const double> ys)
{
    require(xs.size() == ys.size(), ErrorCode::LengthMismatch, "pearson inputs differ in length");
    require(xs.size() >= 3, ErrorCode::InsufficientSamples, "pearson needs at least 3 pairs");
    const double mx = mean_of(xs);
    const double my = mean_of(ys);
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    require(sxx > 0.0 && syy > 0.0, ErrorCode::ConstantInput, "pearson input is constant");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

const CorrelationCell& CorrelationMatrix::at(std::string_view row, std::string_view col) const
{
    const auto r = std::find(rows.begin(), rows.end(), row);
    const auto c = std::find(cols.begin(), cols.end(), col);
    require(r != rows.end() && c != cols.end(), ErrorCode::NotFound,
            "no correlation cell (" + std::string(row) + ", " + std::string(col) + ")");
    return cells[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - cols.begin())];
}

CorrelationMatrix corr_matrix(std::span<const FeatureVector> features, std::span<const GlobalMetrics> errors)
{
    require(features.size() == errors.size(), ErrorCode::LengthMismatch, "features and errors are not aligned");
    CorrelationMatrix cm;
    for (auto name : kMeasureNames) cm.rows.emplace_back(name);
    for (auto name : kFeatureNames) cm.cols.emplace_back(name);
    cm.cells.assign(cm.rows.size(), std::vector<CorrelationCell>(cm.cols.size()));
    for (std::size_t r = 0; r < cm.rows.size(); ++r) {
        for (std::size_t c = 0; c < cm.cols.size(); ++c) {
            std::vector<double> xs;
            std::vector<double> ys;
            for (std::size_t i = 0; i < features.size(); ++i) {
                if (auto f = feature_value(features[i], c)) {
                    xs.push_back(*f);
                    ys.push_back(measure(errors[i].mean, r));
                }
            }
            auto& cell = cm.cells[r][c];
            cell.m = xs.size();
            try {
                cell.r = pearson(xs, ys);
            } catch (const Error& e) {
                cell.error = std::string(to_string(e.code()));
            }
        }
    }
    return cm;
}

double LinearFit::half_width(double x) const noexcept
{
    const double d = x - x_mean;
    return t_quantile * residual_std * std::sqrt(1.0 / static_cast<double>(m) + d * d / sxx);
}

LinearFit linfit_bounds(std::span<const double> xs, std::span<const double> ys, double p)
{
    require(xs.size() == ys.size(), ErrorCode::LengthMismatch, "regression inputs differ in length");
    require(xs.size() >= 3, ErrorCode::InsufficientSamples, "regression band needs at least 3 points");
    require(p > 0.0 && p < 1.0, ErrorCode::InvalidConfig, "confidence level must lie in (0, 1)");
    LinearFit fit;
    fit.m = xs.size();
    fit.x_mean = mean_of(xs);
    const double y_mean = mean_of(ys);
    double sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        fit.sxx += (xs[i] - fit.x_mean) * (xs[i] - fit.x_mean);
        sxy += (xs[i] - fit.x_mean) * (ys[i] - y_mean);
    }
    require(fit.sxx > 0.0, ErrorCode::ConstantInput, "regression abscissa is constant");
    fit.slope = sxy / fit.sxx;
    fit.intercept = y_mean - fit.slope * fit.x_mean;
    double sse = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - fit.predict(xs[i]);
        sse += r * r;
    }
    const double dof = static_cast<double>(fit.m - 2);
    fit.residual_std = std::sqrt(sse / dof);
    boost::math::students_t dist(dof);
    fit.t_quantile = boost::math::quantile(dist, 0.5 * (1.0 + p));
    for (double x : xs) {
        const double w = fit.half_width(x);
        fit.lower.push_back(fit.predict(x) - w);
        fit.upper.push_back(fit.predict(x) + w);
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Training partners

double similarity(const ExcitationSignal& a, const ExcitationSignal& b)
{
    require(a.grid == b.grid && a.values.size() == b.values.size() && !a.values.empty(), ErrorCode::GridMismatch,
            "similarity needs signals on the same grid");
    double s = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) {
        const double d = a.values[k] - b.values[k];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(a.values.size()));
}

std::string_view to_string(PartnerCategory c) noexcept
{
    switch (c) {
    case PartnerCategory::TooSimilar: return "TOO_SIMILAR";
    case PartnerCategory::GoodPartnerSimilarity: return "GOOD_PARTNER_SIMILARITY";
    case PartnerCategory::DissimilarWeak: return "DISSIMILAR_WEAK";
    case PartnerCategory::HighBaseError: return "HIGH_BASE_ERROR";
    }
    return "TOO_SIMILAR";
}

PartnerCategory classify_partner(double sim, double base_error, double own_error, const PartnerThresholds& t) noexcept
{
    if (sim == 0.0 || sim < t.similarity_p10) return PartnerCategory::TooSimilar;
    if (own_error > t.own_error_p50) return PartnerCategory::DissimilarWeak;
    if (base_error >= t.base_error_p75) return PartnerCategory::HighBaseError;
    return PartnerCategory::GoodPartnerSimilarity;
}

std::vector<std::string> PartnerChart::recommendations() const
{
    std::vector<std::string> out;
    for (const auto& r : rows) {
        if (r.id == base_id) continue;
        if (r.category == PartnerCategory::GoodPartnerSimilarity || r.category == PartnerCategory::HighBaseError) {
            out.push_back(r.id);
        }
    }
    return out;
}

Matrix predict_outputs(const RomModel& model, const DataSet& ds)
{
    std::vector<double> x0(model.n);
    require(ds.outputs.rows() >= model.n, ErrorCode::InvalidDimension, "data set has fewer channels than the model");
    for (std::size_t j = 0; j < model.n; ++j) x0[j] = ds.outputs(j, 0);
    return integrate(model, ds.excitation, x0).outputs;
}

MetricSet evaluate_on(const RomModel& model, const DataSet& ds)
{
    return evaluate(predict_outputs(model, ds), ds.outputs);
}

GlobalMetrics evaluate_on_group(const RomModel& model, std::span<const DataSet> group)
{
    std::vector<MetricSet> sets;
    sets.reserve(group.size());
    for (const auto& ds : group) sets.push_back(evaluate_on(model, ds));
    return aggregate(sets);
}

PartnerChart rank_partners(std::string base_id, std::vector<PartnerRow> rows)
{
    require(!rows.empty(), ErrorCode::EmptyGroup, "partner chart needs candidates");
    PartnerChart chart;
    chart.base_id = std::move(base_id);

    std::vector<double> sims, bases, owns;
    for (const auto& r : rows) {
        sims.push_back(r.similarity);
        bases.push_back(r.base_rom_error);
        owns.push_back(r.own_rom_error);
    }
    chart.thresholds = {percentile(sims, 0.10), percentile(owns, 0.50), percentile(bases, 0.75)};

    const std::size_t n = rows.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> score(n, 0);
    auto rank_by = [&](auto less) {
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
            if (less(rows[a], rows[b])) return true;
            if (less(rows[b], rows[a])) return false;
            return rows[a].id < rows[b].id;
        });
        for (std::size_t r = 0; r < n; ++r) score[idx[r]] += r + 1;
    };
    rank_by([](const PartnerRow& a, const PartnerRow& b) { return a.base_rom_error > b.base_rom_error; });
    rank_by([](const PartnerRow& a, const PartnerRow& b) { return a.own_rom_error < b.own_rom_error; });

    for (std::size_t r = 0; r < n; ++r) {
        rows[r].score = score[r];
        rows[r].category =
            classify_partner(rows[r].similarity, rows[r].base_rom_error, rows[r].own_rom_error, chart.thresholds);
    }
    std::sort(rows.begin(), rows.end(), [](const PartnerRow& a, const PartnerRow& b) {
        return a.score != b.score ? a.score < b.score : a.id < b.id;
    });
    chart.rows = std::move(rows);
    return chart;
}

PartnerChart partner_chart(const std::string& base_id, std::span<const DataSet> candidates, const RomModel& base_rom,
                           const std::map<std::string, RomModel>& own_roms, std::span<const DataSet> test_group)
{
    const auto base = std::find_if(candidates.begin(), candidates.end(), [&](const DataSet& d) { return d.id == base_id; });
    require(base != candidates.end(), ErrorCode::NotFound, "base data set '" + base_id + "' is not a candidate");

    std::vector<PartnerRow> rows;
    for (const auto& ds : candidates) {
        const auto own = own_roms.find(ds.id);
        require(own != own_roms.end(), ErrorCode::MissingRom, "no 1-data-set ROM for candidate '" + ds.id + "'");
        PartnerRow row;
        row.id = ds.id;
        row.similarity = similarity(base->excitation, ds.excitation);
        row.base_rom_error = rmse(predict_outputs(base_rom, ds), ds.outputs);
        row.own_rom_error = evaluate_on_group(own->second, test_group).mean.rmse;
        rows.push_back(std::move(row));
    }
    return rank_partners(base_id, std::move(rows));
}

} // namespace twinforge
