#pragma once

#include "twinforge/dataset.hpp"
#include "twinforge/fom.hpp"
#include "twinforge/signals.hpp"

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("twinforge-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Short APRBS data set from the reference model (N samples at 5 s).
inline twinforge::DataSet small_dataset(std::uint64_t seed, std::size_t n = 60)
{
    twinforge::AprbsConfig cfg;
    cfg.n_levels = 3;
    cfg.hold_min = 50;
    cfg.hold_max = 100;
    const auto sig = twinforge::gen_aprbs(cfg, twinforge::TimeGrid{n, 5.0, 0.0}, seed);
    return twinforge::simulate_fom(sig, twinforge::FomConfig{});
}

} // namespace testing
