#include "helpers.hpp"

#include "twinforge/dataset_store.hpp"
#include "twinforge/error.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

using namespace twinforge;
using testing::TempDir;

namespace {

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

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_SUITE("dataset_store")
{
    TEST_CASE("save then load round-trips exactly")
    {
        TempDir dir("store");
        auto store = open_store(dir.path());
        const auto ds = testing::small_dataset(3);
        const auto id = save_dataset(ds, store);
        CHECK(id == "AP0001");

        const auto reopened = open_store(dir.path());
        const auto back = load_dataset(id, reopened);
        CHECK(back.outputs == ds.outputs);
        CHECK(back.excitation.values == ds.excitation.values);
        CHECK(back.excitation.jumps == ds.excitation.jumps);
        CHECK(back.excitation.grid == ds.excitation.grid);
        CHECK(back.excitation.seed == ds.excitation.seed);
        CHECK(back.provenance == ds.provenance);
        CHECK(back.id == id);
        REQUIRE(reopened.find(id) != nullptr);
        CHECK(reopened.find(id)->kind == SignalKind::Aprbs);
    }

    TEST_CASE("automatic ids increase")
    {
        TempDir dir("store");
        auto store = open_store(dir.path());
        const auto a = save_dataset(testing::small_dataset(1), store);
        auto ms = testing::small_dataset(2);
        ms.excitation.kind = SignalKind::Multisine;
        ms.excitation.jumps.clear();
        const auto b = save_dataset(ms, store);
        CHECK(a == "AP0001");
        CHECK(b == "MS0002");
        CHECK(std::stoi(b.substr(2)) > std::stoi(a.substr(2)));
    }

    TEST_CASE("duplicate id is rejected")
    {
        TempDir dir("store");
        auto store = open_store(dir.path());
        auto ds = testing::small_dataset(1);
        ds.id = "X1";
        save_dataset(ds, store);
        CHECK(code_of([&] { save_dataset(ds, store); }) == ErrorCode::DuplicateId);
    }

    TEST_CASE("non-finite outputs are rejected")
    {
        TempDir dir("store");
        auto store = open_store(dir.path());
        auto ds = testing::small_dataset(1);
        ds.outputs(1, 5) = std::numeric_limits<double>::quiet_NaN();
        CHECK(code_of([&] { save_dataset(ds, store); }) == ErrorCode::ValidationFailure);
        CHECK(store.entries.empty());
    }

    TEST_CASE("unknown id is NOT_FOUND")
    {
        TempDir dir("store");
        const auto store = open_store(dir.path());
        CHECK(code_of([&] { load_dataset("AP9999", store); }) == ErrorCode::NotFound);
    }

    TEST_CASE("hand-written three-row fixture")
    {
        const auto ds = read_dataset_csv(std::filesystem::path(TWINFORGE_FIXTURE_DIR) / "minimal_dataset.csv");
        CHECK(ds.id == "AP0042");
        CHECK(ds.n_samples() == 3);
        CHECK(ds.excitation.values == std::vector<double>{300, 320, 320});
        CHECK(ds.excitation.grid == TimeGrid{3, 5.0, 0.0});
        CHECK(ds.excitation.seed == 9);
        REQUIRE(ds.excitation.jumps.size() == 1);
        CHECK(ds.excitation.jumps[0] == Jump{5.0, 20.0});
        CHECK(ds.outputs(0, 2) == 279.125);
        CHECK(ds.outputs(1, 1) == 281.25);
        CHECK(ds.provenance == "handwritten:9");
    }

    TEST_CASE("truncated file is a PARSE_FAILURE and leaves the store untouched")
    {
        TempDir dir("store");
        auto store = open_store(dir.path());
        const auto id = save_dataset(testing::small_dataset(5), store);
        const auto manifest_before = slurp(dir / "manifest.json");

        auto text = slurp(dir / (id + ".csv"));
        text = text.substr(0, text.size() - 20); // cut inside the last row
        {
            std::ofstream out(dir / (id + ".csv"));
            out << text;
        }
        CHECK(code_of([&] { load_dataset(id, store); }) == ErrorCode::ParseFailure);
        CHECK(slurp(dir / "manifest.json") == manifest_before);
    }

    TEST_CASE("parse errors carry the line number")
    {
        std::istringstream in("t,T_oven,T_A,T_B\n0,300,300,300\n5,abc,300,300\n");
        try {
            read_dataset_csv(in, "mem.csv");
            FAIL("expected PARSE_FAILURE");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ParseFailure);
            CHECK(std::string(e.what()).find("mem.csv:3") != std::string::npos);
        }
    }

    TEST_CASE("signal-only csv is accepted by the signal reader")
    {
        TempDir dir("sig");
        const auto sig = gen_multisine(MultisineConfig{}, TimeGrid{}, 4);
        std::ostringstream os;
        write_signal_csv(os, sig);
        write_file_atomic(dir / "s.csv", os.str());
        const auto back = read_signal_csv(dir / "s.csv");
        CHECK(back.values == sig.values);
        CHECK(back.kind == SignalKind::Multisine);
    }

    TEST_CASE("a held lock blocks a second writer")
    {
        TempDir dir("store");
        auto store = open_store(dir.path());
        { std::ofstream(dir / ".lock") << "other"; }
        CHECK(code_of([&] { save_dataset(testing::small_dataset(1), store); }) == ErrorCode::StoreLocked);
        std::filesystem::remove(dir / ".lock");
        CHECK_NOTHROW(save_dataset(testing::small_dataset(1), store));
        CHECK_FALSE(std::filesystem::exists(dir / ".lock"));
    }

    TEST_CASE("manifest write is atomic: no temporary files remain")
    {
        TempDir dir("store");
        auto store = open_store(dir.path());
        save_dataset(testing::small_dataset(1), store);
        for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
            const auto name = e.path().filename().string();
            CHECK((name == "manifest.json" || name == "AP0001.csv"));
        }
    }
}
