#include "twinforge/digest.hpp"

#include <cstdio>

namespace twinforge {

Digest& Digest::update(std::string_view bytes) noexcept
{
    for (unsigned char c : bytes) {
        state_ ^= c;
        state_ *= 1099511628211ull;
    }
    return *this;
}

Digest& Digest::update(double value)
{
    return update(format_double(value)).update(std::string_view(";"));
}

Digest& Digest::update(std::uint64_t value)
{
    return update(std::to_string(value)).update(std::string_view(";"));
}

std::string Digest::hex() const
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

std::string digest_hex(std::string_view bytes)
{
    return Digest{}.update(bytes).hex();
}

std::string format_double(double value)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

} // namespace twinforge
