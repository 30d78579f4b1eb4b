#pragma once

#include <cstdint>
#include <random>

namespace twinforge::detail {

// std::uniform_real_distribution differs between standard libraries; this keeps
// every generated value bit-identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

private:
    std::mt19937_64 engine_;
};

} // namespace twinforge::detail
