#include "twinforge/error.hpp"
#include "twinforge/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace twinforge;

namespace {

Matrix row_matrix(std::initializer_list<double> v)
{
    Matrix m(1, v.size());
    std::copy(v.begin(), v.end(), m.row(0).begin());
    return m;
}

ErrorCode code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::InvalidConfig;
}

} // namespace

TEST_SUITE("metrics")
{
    TEST_CASE("worked example with a constant reference")
    {
        const auto pred = row_matrix({301, 302, 303});
        const auto ref = row_matrix({300, 300, 300});
        CHECK(rmse(pred, ref) == doctest::Approx(std::sqrt(14.0 / 3.0)).epsilon(1e-15));
        CHECK(max_error(pred, ref) == 3.0);
        CHECK(median_error(pred, ref) == 2.0);
        CHECK(iqr_error(pred, ref) == 1.0);
        CHECK(mape(pred, ref) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
        CHECK(code_of([&] { r_squared(pred, ref); }) == ErrorCode::ConstantReference);
        CHECK(code_of([&] { evaluate(pred, ref); }) == ErrorCode::ConstantReference);
    }

    TEST_CASE("identical prediction is perfect")
    {
        const auto ref = row_matrix({290, 300, 310, 305});
        const auto m = evaluate(ref, ref);
        CHECK(m.rmse == 0.0);
        CHECK(m.mape == 0.0);
        CHECK(m.maxe == 0.0);
        CHECK(m.mede == 0.0);
        CHECK(m.iqr == 0.0);
        CHECK(m.r2 == 1.0);
    }

    TEST_CASE("median error keeps its sign")
    {
        const auto pred = row_matrix({299, 299, 298, 310});
        const auto ref = row_matrix({300, 300, 300, 300});
        CHECK(median_error(pred, ref) == -1.0);
    }

    TEST_CASE("zero reference and shape mismatch")
    {
        CHECK(code_of([] { mape(row_matrix({1, 2}), row_matrix({0, 2})); }) == ErrorCode::ZeroReference);
        CHECK(code_of([] { rmse(row_matrix({1, 2}), row_matrix({1, 2, 3})); }) == ErrorCode::ShapeMismatch);
    }

    TEST_CASE("measures agree with direct formulas on random arrays")
    {
        std::mt19937_64 rng(17);
        std::normal_distribution<double> noise(0.0, 2.0);
        std::uniform_real_distribution<double> level(280.0, 450.0);
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t n = 7 + static_cast<std::size_t>(trial) * 13;
            Matrix ref(2, n), pred(2, n);
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t k = 0; k < n; ++k) {
                    ref(j, k) = level(rng);
                    pred(j, k) = ref(j, k) + noise(rng);
                }

            std::vector<double> e, ae;
            double se = 0.0, ape = 0.0;
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t k = 0; k < n; ++k) {
                    const double d = pred(j, k) - ref(j, k);
                    e.push_back(d);
                    ae.push_back(std::abs(d));
                    se += d * d;
                    ape += std::abs(d) / std::abs(ref(j, k));
                }
            std::sort(e.begin(), e.end());
            auto pct = [&](double q) {
                const double pos = q * static_cast<double>(e.size() - 1);
                const auto lo = static_cast<std::size_t>(std::floor(pos));
                const auto hi = std::min(lo + 1, e.size() - 1);
                return e[lo] + (pos - static_cast<double>(lo)) * (e[hi] - e[lo]);
            };
            double r2 = 0.0;
            for (std::size_t j = 0; j < 2; ++j) {
                double mean = 0.0;
                for (std::size_t k = 0; k < n; ++k) mean += ref(j, k);
                mean /= static_cast<double>(n);
                double ss_res = 0.0, ss_tot = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    ss_res += (pred(j, k) - ref(j, k)) * (pred(j, k) - ref(j, k));
                    ss_tot += (ref(j, k) - mean) * (ref(j, k) - mean);
                }
                r2 += 0.5 * (1.0 - ss_res / ss_tot);
            }

            const auto m = evaluate(pred, ref);
            const double count = static_cast<double>(2 * n);
            CHECK(m.rmse == doctest::Approx(std::sqrt(se / count)).epsilon(1e-12));
            CHECK(m.mape == doctest::Approx(100.0 * ape / count).epsilon(1e-12));
            CHECK(m.maxe == *std::max_element(ae.begin(), ae.end()));
            CHECK(m.mede == doctest::Approx(pct(0.5)).epsilon(1e-12));
            CHECK(m.iqr == doctest::Approx(pct(0.75) - pct(0.25)).epsilon(1e-12));
            CHECK(m.r2 == doctest::Approx(r2).epsilon(1e-12));
            CHECK(m.rmse <= m.maxe);
            CHECK(m.iqr >= 0.0);
        }
    }

    TEST_CASE("aggregate averages each field")
    {
        MetricSet a{1, 2, 3, 4, 5, 0.5};
        MetricSet b{2, 4, 6, -4, 7, 0.7};
        const std::vector<MetricSet> one{a};
        CHECK(aggregate(one).mean == a);

        const std::vector<MetricSet> two{a, b};
        const auto g = aggregate(two);
        CHECK(g.mean.rmse == 1.5);
        CHECK(g.mean.mape == 3.0);
        CHECK(g.mean.maxe == 4.5);
        CHECK(g.mean.mede == 0.0);
        CHECK(g.mean.iqr == 6.0);
        CHECK(g.mean.r2 == doctest::Approx(0.6));
        CHECK(g.sets.size() == 2);

        const std::vector<MetricSet> swapped{b, a};
        CHECK(aggregate(swapped).mean == g.mean);

        CHECK(code_of([] { aggregate(std::span<const MetricSet>{}); }) == ErrorCode::EmptyGroup);
    }

    TEST_CASE("percentile interpolates between order statistics")
    {
        CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
        CHECK(percentile({4, 1, 3, 2}, 0.0) == 1.0);
        CHECK(percentile({4, 1, 3, 2}, 1.0) == 4.0);
        CHECK(percentile({10, 20}, 0.25) == 12.5);
        CHECK(median({7}) == 7.0);
    }

    TEST_CASE("measure names index the set")
    {
        MetricSet m{1, 2, 3, 4, 5, 6};
        for (std::size_t i = 0; i < kMeasureNames.size(); ++i) CHECK(measure(m, i) == static_cast<double>(i + 1));
    }
}
