#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace twinforge {

/// 64-bit FNV-1a over raw bytes. Stable across platforms; used for
/// provenance/config digests, not for security.
class Digest {
public:
    Digest& update(std::string_view bytes) noexcept;
    Digest& update(double value);
    Digest& update(std::uint64_t value);

    std::uint64_t value() const noexcept { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 14695981039346656037ull;
};

std::string digest_hex(std::string_view bytes);

/// Shortest decimal text with 17 significant digits; parses back bit-exactly.
std::string format_double(double value);

} // namespace twinforge
