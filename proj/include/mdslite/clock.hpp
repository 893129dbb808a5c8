#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace mdslite {

// Wall-clock instant at microsecond resolution. All log timestamps and entry
// generation times use this type so that arithmetic on them is exact.
using WallTime = std::chrono::time_point<std::chrono::system_clock, std::chrono::microseconds>;
using Micros = std::chrono::microseconds;

// Monotonic instant used for TTL and soft-state bookkeeping.
using SteadyTime = std::chrono::steady_clock::time_point;

inline WallTime wall_now() {
    return std::chrono::time_point_cast<Micros>(std::chrono::system_clock::now());
}

inline SteadyTime steady_now() { return std::chrono::steady_clock::now(); }

inline double to_seconds(Micros d) { return static_cast<double>(d.count()) / 1e6; }

// RFC 3339, UTC, exactly six fractional digits: 2003-06-01T12:00:00.000001Z
std::string format_timestamp(WallTime t);
std::optional<WallTime> parse_timestamp(std::string_view text);

} // namespace mdslite
