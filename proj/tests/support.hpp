// Test oracles and fixtures. Nothing here calls into the code under test
// for the property it checks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <chrono>
#include <random>
#include <string>
#include <vector>

#include "mdslite/directory.hpp"
#include "mdslite/telemetry.hpp"

namespace testsupport {

using namespace mdslite;

// ---------------------------------------------------------------------------
// Search oracle: scope and filter evaluated straight from the definitions.

inline bool oracle_under(const EntryName& name, const EntryName& ancestor) {
    const auto& n = name.components();
    const auto& a = ancestor.components();
    if (a.size() > n.size()) {
        return false;
    }
    return std::equal(a.rbegin(), a.rend(), n.rbegin());
}

inline bool oracle_in_scope(const EntryName& name, const EntryName& base, Scope scope) {
    switch (scope) {
    case Scope::Base:
        return name.components() == base.components();
    case Scope::OneLevel:
        return name.depth() == base.depth() + 1 && oracle_under(name, base);
    case Scope::Subtree:
        return oracle_under(name, base);
    }
    return false;
}

inline bool oracle_match(const Entry& e, const Filter& f) {
    switch (f.kind()) {
    case Filter::Kind::Presence:
        return e.attributes.count(f.attr()) > 0;
    case Filter::Kind::Equality: {
        auto it = e.attributes.find(f.attr());
        if (it == e.attributes.end()) {
            return false;
        }
        return std::find(it->second.begin(), it->second.end(), f.value()) != it->second.end();
    }
    case Filter::Kind::And:
        for (const auto& c : f.children()) {
            if (!oracle_match(e, c)) {
                return false;
            }
        }
        return true;
    case Filter::Kind::Or:
        for (const auto& c : f.children()) {
            if (oracle_match(e, c)) {
                return true;
            }
        }
        return false;
    }
    return false;
}

inline std::vector<std::string> linear_scan(const std::vector<Entry>& entries,
                                            const EntryName& base, Scope scope,
                                            const Filter& filter) {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        if (oracle_in_scope(e.name, base, scope) && oracle_match(e, filter)) {
            out.push_back(e.name.str());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Random directories

inline Entry make_entry(const EntryName& name, std::mt19937_64& rng) {
    static const std::vector<std::string> kClasses{"MdsHost", "MdsCpu", "MdsDevice", "MdsMemory"};
    static const std::vector<std::string> kCpu{"1133", "1208", "756"};
    Entry e{name, {}, WallTime{Micros{1'700'000'000'000'000 + static_cast<std::int64_t>(rng() % 1000)}}};
    e.attributes["objectclass"] = {kClasses[rng() % kClasses.size()]};
    if (rng() % 3 == 0) {
        e.attributes["objectclass"].push_back(kClasses[rng() % kClasses.size()]);
    }
    if (rng() % 2 == 0) {
        e.attributes["cpu"] = {kCpu[rng() % kCpu.size()]};
    }
    if (rng() % 4 == 0) {
        e.attributes["mem"] = {std::to_string(256 << (rng() % 3)), std::to_string(rng() % 4)};
    }
    return e;
}

// Up to `max_entries` entries under `suffix`, in a random tree. Some
// entries hang below intermediate names that have no entry of their own.
inline std::vector<Entry> random_directory(std::mt19937_64& rng, const EntryName& suffix,
                                           std::size_t max_entries) {
    std::vector<EntryName> nodes{suffix};
    std::vector<Entry> entries;
    const std::size_t n = 1 + rng() % max_entries;
    for (std::size_t i = 0; i < n; ++i) {
        EntryName parent = nodes[rng() % nodes.size()];
        if (rng() % 10 == 0) {
            parent = parent.child({"ou", "gap" + std::to_string(i)});
        }
        EntryName name = parent.child({"cn", "n" + std::to_string(i)});
        nodes.push_back(name);
        entries.push_back(make_entry(name, rng));
    }
    return entries;
}

inline Filter random_filter(std::mt19937_64& rng, int depth = 0) {
    static const std::vector<std::string> kAttrs{"objectclass", "cpu", "mem", "absent"};
    static const std::vector<std::string> kValues{"MdsHost", "MdsCpu", "1133", "1208", "512", "0", "x"};
    const int pick = static_cast<int>(rng() % (depth >= 2 ? 2 : 4));
    switch (pick) {
    case 0:
        return Filter::presence(kAttrs[rng() % kAttrs.size()]);
    case 1:
        return Filter::equality(kAttrs[rng() % kAttrs.size()], kValues[rng() % kValues.size()]);
    default: {
        std::vector<Filter> kids;
        const std::size_t k = 1 + rng() % 3;
        for (std::size_t i = 0; i < k; ++i) {
            kids.push_back(random_filter(rng, depth + 1));
        }
        return pick == 2 ? Filter::all_of(std::move(kids)) : Filter::any_of(std::move(kids));
    }
    }
}

// ---------------------------------------------------------------------------
// Single FIFO server with deterministic service time. Returns each
// customer's time in system (wait + service), in arrival order.

inline std::vector<double> serial_queue(std::vector<double> arrivals, double service) {
    std::sort(arrivals.begin(), arrivals.end());
    std::vector<double> sojourn;
    sojourn.reserve(arrivals.size());
    double free_at = -1e300;
    for (double a : arrivals) {
        const double start = std::max(a, free_at);
        free_at = start + service;
        sojourn.push_back(free_at - a);
    }
    return sojourn;
}

inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Hand-built lifelines

struct PhasePlan {
    // Seconds per phase in Table order, and the gap inserted before each.
    std::array<double, kPhaseCount> duration{};
    std::array<double, kPhaseCount> gap_before{};
};

inline std::vector<LogEvent> lifeline_events(const std::string& qid, WallTime t0, const PhasePlan& plan) {
    std::vector<LogEvent> out;
    WallTime t = t0;
    for (std::size_t i = 0; i < kPhaseCount; ++i) {
        const Phase p = kAllPhases[i];
        t += Micros{static_cast<std::int64_t>(std::llround(plan.gap_before[i] * 1e6))};
        const WallTime end = t + Micros{static_cast<std::int64_t>(std::llround(plan.duration[i] * 1e6))};
        const std::string prog = is_server_phase(p) ? "gris" : "bench";
        LogEvent s;
        s.ts = t;
        s.host = "h";
        s.prog = prog;
        s.evnt = phase_event_name(p, Boundary::Start);
        s.qid = qid;
        LogEvent e = s;
        e.ts = end;
        e.evnt = phase_event_name(p, Boundary::End);
        out.push_back(s);
        out.push_back(e);
        t = end;
    }
    return out;
}

inline WallTime epoch_plus(double seconds) {
    return WallTime{Micros{1'700'000'000'000'000 + static_cast<std::int64_t>(std::llround(seconds * 1e6))}};
}

} // namespace testsupport
