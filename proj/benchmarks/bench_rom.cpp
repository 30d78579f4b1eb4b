#include "twinforge/fom.hpp"
#include "twinforge/rom.hpp"
#include "twinforge/signals.hpp"

#include <benchmark/benchmark.h>

using namespace twinforge;

namespace {

struct Fixture {
    DataSet ds;
    std::vector<Scenario> scenarios;

    Fixture()
    {
        ds = simulate_fom(gen_aprbs(AprbsConfig{}, TimeGrid{}, 1), FomConfig{});
        scenarios.push_back(scenario_from(ds));
    }
};

const Fixture& fixture()
{
    static const Fixture f;
    return f;
}

RomModel model_for(std::size_t i)
{
    auto m = init_model(2, i, 1);
    m.norm = fit_normalization(fixture().scenarios);
    return m;
}

void BM_RomIntegrate(benchmark::State& state)
{
    const auto model = model_for(static_cast<std::size_t>(state.range(0)));
    const auto& ds = fixture().ds;
    const std::vector<double> x0{ds.outputs(0, 0), ds.outputs(1, 0)};
    for (auto _ : state) {
        benchmark::DoNotOptimize(integrate(model, ds.excitation, x0));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.n_samples()));
}
BENCHMARK(BM_RomIntegrate)->Arg(0)->Arg(2)->Arg(5)->Unit(benchmark::kMicrosecond);

void BM_RomGradient(benchmark::State& state)
{
    const auto model = model_for(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(gradient(model, fixture().scenarios));
    }
}
BENCHMARK(BM_RomGradient)->Arg(0)->Arg(2)->Arg(5)->Unit(benchmark::kMicrosecond);

void BM_FomSimulate(benchmark::State& state)
{
    const auto& sig = fixture().ds.excitation;
    const FomConfig cfg;
    for (auto _ : state) {
        benchmark::DoNotOptimize(simulate_fom(sig, cfg));
    }
}
BENCHMARK(BM_FomSimulate)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
