#include "mdslite/clock.hpp"

#include <charconv>
#include <cstdio>
#include <ctime>

namespace mdslite {

namespace {

// Days from civil date, proleptic Gregorian (H. Hinnant's algorithm).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool read_digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
    if (pos + n > s.size()) {
        return false;
    }
    out = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
        if (s[i] < '0' || s[i] > '9') {
            return false;
        }
        out = out * 10 + (s[i] - '0');
    }
    return true;
}

} // namespace

std::string format_timestamp(WallTime t) {
    const auto us = t.time_since_epoch().count();
    std::int64_t secs = us / 1'000'000;
    std::int64_t frac = us % 1'000'000;
    if (frac < 0) {
        frac += 1'000'000;
        secs -= 1;
    }
    const std::time_t tt = static_cast<std::time_t>(secs);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06lldZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<long long>(frac));
    return buf;
}

std::optional<WallTime> parse_timestamp(std::string_view s) {
    // YYYY-MM-DDTHH:MM:SS.ffffffZ
    if (s.size() != 27 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' ||
        s[16] != ':' || s[19] != '.' || s[26] != 'Z') {
        return std::nullopt;
    }
    int year, mon, day, hour, min, sec, frac;
    if (!read_digits(s, 0, 4, year) || !read_digits(s, 5, 2, mon) || !read_digits(s, 8, 2, day) ||
        !read_digits(s, 11, 2, hour) || !read_digits(s, 14, 2, min) ||
        !read_digits(s, 17, 2, sec) || !read_digits(s, 20, 6, frac)) {
        return std::nullopt;
    }
    if (mon < 1 || mon > 12 || day < 1 || day > 31 || hour > 23 || min > 59 || sec > 59) {
        return std::nullopt;
    }
    const std::int64_t days = days_from_civil(year, static_cast<unsigned>(mon),
                                              static_cast<unsigned>(day));
    const std::int64_t secs = days * 86400 + hour * 3600 + min * 60 + sec;
    const WallTime t{Micros{secs * 1'000'000 + frac}};
    // Rejects dates like Feb 31 that the field checks above let through.
    if (format_timestamp(t) != s) {
        return std::nullopt;
    }
    return t;
}

} // namespace mdslite
