#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "mdslite/error.hpp"
#include "mdslite/telemetry.hpp"
#include "support.hpp"

using namespace mdslite;
using testsupport::epoch_plus;
using testsupport::lifeline_events;
using testsupport::PhasePlan;

namespace {

LogEvent random_event(std::mt19937_64& rng) {
    static const std::vector<std::string> kProgs{"gris", "giis", "bench", "provider"};
    LogEvent e;
    e.ts = WallTime{Micros{static_cast<std::int64_t>(rng() % 4'000'000'000'000'000ULL)}};
    e.host = "h" + std::to_string(rng() % 100);
    e.prog = kProgs[rng() % kProgs.size()];
    e.lvl = rng() % 5 == 0 ? "ERROR" : "INFO";
    if (rng() % 2 == 0) {
        e.evnt = phase_event_name(kAllPhases[rng() % kPhaseCount],
                                  rng() % 2 ? Boundary::Start : Boundary::End);
    } else {
        e.evnt = "marker-" + std::to_string(rng() % 10);
    }
    e.qid = "q-" + std::to_string(rng() % 50) + "-" + std::to_string(rng());
    const int n = static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) {
        e.extra.emplace_back("K" + std::to_string(i), "v=" + std::to_string(rng() % 1000));
    }
    return e;
}

PhasePlan plan(std::array<double, kPhaseCount> d, std::array<double, kPhaseCount> gaps = {}) {
    PhasePlan p;
    p.duration = d;
    p.gap_before = gaps;
    return p;
}

} // namespace

TEST(Phases, PartitionIntoClientAndServer) {
    std::set<std::string> names;
    int server = 0;
    for (Phase p : kAllPhases) {
        names.insert(std::string(phase_name(p)));
        server += is_server_phase(p) ? 1 : 0;
        EXPECT_EQ(parse_phase(phase_name(p)), p);
    }
    EXPECT_EQ(names.size(), 7u);
    EXPECT_EQ(server, 4);
    EXPECT_EQ(phase_event_name(Phase::ServerInvoking, Boundary::End), "Server-Invoking.end");
    EXPECT_FALSE(parse_phase("Server-Sleeping").has_value());
}

TEST(LogFormat, ExactLine) {
    LogEvent e;
    e.ts = WallTime{Micros{1'700'000'000'123'456}};
    e.host = "node1";
    e.prog = "gris";
    e.evnt = "Server-InitSearch.start";
    e.qid = "q-1-0";
    e.extra = {{"PROVIDER", "ip00"}};
    EXPECT_EQ(serialize_event(e),
              "TS=2023-11-14T22:13:20.123456Z HOST=node1 PROG=gris LVL=INFO "
              "EVNT=Server-InitSearch.start QID=q-1-0 PROVIDER=ip00");
}

TEST(LogFormat, RandomRoundTrip) {
    std::mt19937_64 rng(42);
    std::vector<LogEvent> events;
    for (int i = 0; i < 10000; ++i) {
        events.push_back(random_event(rng));
    }
    auto text = serialize_events(events);
    auto parsed = parse_log(text);
    EXPECT_TRUE(parsed.diagnostics.empty());
    EXPECT_EQ(parsed.events, events);
    EXPECT_EQ(serialize_events(parsed.events), text);
}

TEST(LogFormat, EmptyStream) {
    auto parsed = parse_log("");
    EXPECT_TRUE(parsed.events.empty());
    EXPECT_TRUE(parsed.diagnostics.empty());
}

TEST(LogFormat, CorruptLineIsIsolated) {
    std::mt19937_64 rng(1);
    std::vector<LogEvent> events;
    for (int i = 0; i < 100; ++i) {
        events.push_back(random_event(rng));
    }
    std::string text;
    for (int i = 0; i < 100; ++i) {
        text += i == 37 ? std::string("TS=garbage HOST=x") : serialize_event(events[i]);
        text += '\n';
    }
    auto parsed = parse_log(text);
    EXPECT_EQ(parsed.events.size(), 99u);
    ASSERT_EQ(parsed.diagnostics.size(), 1u);
    EXPECT_EQ(parsed.diagnostics[0].line, 38u);
    events.erase(events.begin() + 37);
    EXPECT_EQ(parsed.events, events);
}

TEST(LogFormat, ValidateRejectsBadTokens) {
    LogEvent e;
    e.host = "a b";
    e.prog = "gris";
    e.evnt = "x";
    e.qid = "q";
    EXPECT_THROW(validate_event(e), std::invalid_argument);
    e.host = "a";
    e.evnt = "Server-Sleeping.start";
    EXPECT_THROW(validate_event(e), std::invalid_argument);
}

TEST(Sinks, MemoryReadBackAndClose) {
    MemorySink sink;
    std::mt19937_64 rng(2);
    auto e = random_event(rng);
    emit(sink, e);
    ASSERT_EQ(sink.size(), 1u);
    EXPECT_EQ(sink.snapshot()[0], e);
    sink.close();
    try {
        emit(sink, e);
        FAIL() << "emit after close";
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), Errc::SinkClosed);
    }
}

TEST(Sinks, FileKeepsOrder) {
    auto path = std::filesystem::temp_directory_path() / "mdslite-test-order.log";
    std::filesystem::remove(path);
    std::vector<LogEvent> events;
    {
        FileSink sink(path);
        EventSource src{"h", "bench"};
        for (int i = 0; i < 10000; ++i) {
            events.push_back(src.make(epoch_plus(i * 1e-3), "tick", "q-" + std::to_string(i)));
            sink.emit(events.back());
        }
        sink.close();
    }
    auto parsed = read_log_file(path);
    EXPECT_TRUE(parsed.diagnostics.empty());
    EXPECT_EQ(parsed.events, events);
    std::filesystem::remove(path);
}

TEST(Sinks, MedianEmitLatency) {
    auto path = std::filesystem::temp_directory_path() / "mdslite-test-latency.log";
    FileSink sink(path);
    EventSource src{"h", "gris"};
    auto e = src.make(epoch_plus(0), "Server-InitSearch.start", "q-1-1");
    std::vector<double> ns;
    ns.reserve(100000);
    for (int i = 0; i < 100000; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        sink.emit(e);
        ns.push_back(std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count());
    }
    sink.close();
    std::nth_element(ns.begin(), ns.begin() + ns.size() / 2, ns.end());
    EXPECT_LT(ns[ns.size() / 2], 10'000.0);
    std::filesystem::remove(path);
}

TEST(Correlate, SingleCompleteLifeline) {
    auto ev = lifeline_events("q1", epoch_plus(0), plan({0.1, 0.05, 0.01, 0.02, 0.2, 0.07, 0.02}));
    std::shuffle(ev.begin(), ev.end(), std::mt19937_64(3));
    auto c = correlate(ev);
    ASSERT_EQ(c.complete.size(), 1u);
    EXPECT_TRUE(c.incomplete.empty());
    EXPECT_EQ(c.complete[0].ort(), Micros{470'000});
    EXPECT_EQ(c.complete[0].rpt(), Micros{300'000});
}

TEST(Correlate, MissingEndIsQuarantined) {
    auto ev = lifeline_events("q1", epoch_plus(0), plan({0.1, 0.05, 0.01, 0.02, 0.2, 0.07, 0.02}));
    std::erase_if(ev, [](const LogEvent& e) { return e.evnt == "Server-Invoking.end"; });
    auto c = correlate(ev);
    EXPECT_TRUE(c.complete.empty());
    ASSERT_EQ(c.incomplete.size(), 1u);
    EXPECT_EQ(c.incomplete[0].qid, "q1");
}

TEST(Correlate, DuplicateMarkerIsQuarantined) {
    auto ev = lifeline_events("q1", epoch_plus(0), plan({0.1, 0.05, 0.01, 0.02, 0.2, 0.07, 0.02}));
    ev.push_back(ev[3]);
    auto c = correlate(ev);
    EXPECT_TRUE(c.complete.empty());
    EXPECT_EQ(c.incomplete.size(), 1u);
}

// Interleaved lifelines are regrouped; the oracle groups by qid by hand and
// recomputes each phase interval from the raw events.
TEST(Correlate, InterleavedMatchesRegroupingOracle) {
    std::mt19937_64 rng(9);
    std::vector<LogEvent> all;
    for (int q = 0; q < 40; ++q) {
        std::array<double, kPhaseCount> d{};
        std::array<double, kPhaseCount> g{};
        for (std::size_t i = 0; i < kPhaseCount; ++i) {
            d[i] = static_cast<double>(rng() % 100'000) * 1e-6;
            g[i] = static_cast<double>(rng() % 1000) * 1e-6;
        }
        auto ev = lifeline_events("q" + std::to_string(q), epoch_plus(static_cast<double>(rng() % 1000) * 1e-3),
                                  plan(d, g));
        all.insert(all.end(), ev.begin(), ev.end());
    }
    std::shuffle(all.begin(), all.end(), rng);

    std::map<std::string, std::map<std::string, WallTime>> by_qid;
    for (const auto& e : all) {
        by_qid[e.qid][e.evnt] = e.ts;
    }
    auto c = correlate(all);
    ASSERT_EQ(c.complete.size(), by_qid.size());
    for (const auto& l : c.complete) {
        const auto& marks = by_qid.at(l.qid);
        for (Phase p : kAllPhases) {
            EXPECT_EQ(l.at(p).start, marks.at(phase_event_name(p, Boundary::Start)));
            EXPECT_EQ(l.at(p).end, marks.at(phase_event_name(p, Boundary::End)));
        }
        Micros rpt{0};
        for (Phase p : kServerPhases) {
            rpt += marks.at(phase_event_name(p, Boundary::End)) - marks.at(phase_event_name(p, Boundary::Start));
        }
        EXPECT_EQ(l.rpt(), rpt);
        EXPECT_EQ(l.ort(), marks.at("Client-EndConnect.end") - marks.at("Client-Connect.start"));
    }
    EXPECT_TRUE(std::is_sorted(c.complete.begin(), c.complete.end(),
                               [](const auto& a, const auto& b) { return a.qid < b.qid; }));
}

TEST(Decomposition, ZeroGaps) {
    auto ev = lifeline_events("q", epoch_plus(0), plan({0.10, 0.05, 0.05, 0.05, 0.15, 0.05, 0.02}));
    auto l = correlate(ev).complete.at(0);
    auto r = check_decomposition(l, Micros{0});
    EXPECT_EQ(r.ort, Micros{470'000});
    EXPECT_EQ(r.rpt, Micros{300'000});
    EXPECT_EQ(r.residual, Micros{0});
    EXPECT_TRUE(r.pass);
}

TEST(Decomposition, ThreeMillisecondGaps) {
    auto ev = lifeline_events("q", epoch_plus(0), plan({0.10, 0.05, 0.05, 0.05, 0.15, 0.05, 0.02},
                                                       {0, 0.001, 0.001, 0, 0, 0, 0.001}));
    auto l = correlate(ev).complete.at(0);
    auto r = check_decomposition(l, Micros{5000});
    EXPECT_EQ(r.residual, Micros{3000});
    EXPECT_TRUE(r.pass);
    EXPECT_FALSE(check_decomposition(l, Micros{1000}).pass);
}

// Generated lifelines with non-negative gaps: RPT is the exact server sum,
// ORT covers the sum of the client phases and RPT, and ORT exceeds RPT.
TEST(Decomposition, PropertiesOverRandomLifelines) {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 500; ++i) {
        std::array<double, kPhaseCount> d{};
        std::array<double, kPhaseCount> g{};
        double gaps = 0;
        for (std::size_t k = 0; k < kPhaseCount; ++k) {
            d[k] = static_cast<double>(1 + rng() % 50'000) * 1e-6;
            g[k] = k == 0 ? 0 : static_cast<double>(rng() % 300) * 1e-6;
            gaps += g[k];
        }
        auto l = correlate(lifeline_events("q", epoch_plus(i), plan(d, g))).complete.at(0);
        auto r = check_decomposition(l, Micros{5000});
        EXPECT_GE(r.residual.count(), 0);
        EXPECT_EQ(r.residual.count(), std::llround(gaps * 1e6));
        EXPECT_EQ(r.ort, r.client_connect + r.client_bind + r.rpt + r.client_endconnect + r.residual);
        EXPECT_GT(l.ort(), l.rpt());
        for (std::size_t k = 1; k < kServerPhases.size(); ++k) {
            EXPECT_LE(l.at(kServerPhases[k - 1]).end, l.at(kServerPhases[k]).start);
        }
    }
}

TEST(PhaseStats, SingleLifeline) {
    auto l = correlate(lifeline_events("q", epoch_plus(0), plan({0.1, 0.05, 0.01, 0.02, 0.2, 0.07, 0.02})))
                 .complete.at(0);
    auto s = phase_stats({l});
    EXPECT_EQ(s.count, 1u);
    EXPECT_NEAR(s.at(Phase::ServerInvoking).mean, 0.2, 1e-9);
    EXPECT_NEAR(s.at(Phase::ServerInvoking).median, 0.2, 1e-9);
    EXPECT_NEAR(s.at(Phase::ServerInvoking).p95, 0.2, 1e-9);
    EXPECT_NEAR(s.ort.mean, 0.47, 1e-9);
    EXPECT_NEAR(s.rpt.mean, 0.30, 1e-9);
}

// Three lifelines worked by hand:
//   cc  = 0.10, 0.20, 0.30     mean 0.20
//   cb  = 0.05 each            mean 0.05
//   srv = 0.02+0.02+0.10+0.06 = 0.20, 0.40, 0.60 (invoking 0.10/0.30/0.50)
//   cec = 0.01, 0.02, 0.03     mean 0.02
//   ort = 0.36, 0.67, 0.98     mean 0.67
//   rpt mean 0.40; rpt_over_ort = 0.40/0.67; connect_fraction = 0.22/0.67
TEST(PhaseStats, ThreeLifelinesHandArithmetic) {
    std::vector<PhaseLifeline> ls;
    const double cc[] = {0.10, 0.20, 0.30};
    const double inv[] = {0.10, 0.30, 0.50};
    const double cec[] = {0.01, 0.02, 0.03};
    for (int i = 0; i < 3; ++i) {
        auto ev = lifeline_events("q" + std::to_string(i), epoch_plus(i * 10),
                                  plan({cc[i], 0.05, 0.02, 0.02, inv[i], 0.06, cec[i]}));
        ls.push_back(correlate(ev).complete.at(0));
    }
    auto s = phase_stats(ls);
    EXPECT_EQ(s.count, 3u);
    EXPECT_NEAR(s.at(Phase::ClientConnect).mean, 0.20, 1e-9);
    EXPECT_NEAR(s.at(Phase::ServerInvoking).mean, 0.30, 1e-9);
    EXPECT_NEAR(s.at(Phase::ServerInvoking).median, 0.30, 1e-9);
    EXPECT_NEAR(s.at(Phase::ServerInvoking).p95, 0.48, 1e-9);
    EXPECT_NEAR(s.ort.mean, 0.67, 1e-9);
    EXPECT_NEAR(s.rpt.mean, 0.40, 1e-9);
    EXPECT_NEAR(s.rpt_over_ort, 0.40 / 0.67, 1e-9);
    EXPECT_NEAR(s.connect_fraction, 0.22 / 0.67, 1e-9);
}

TEST(PhaseStats, EmptyInputThrows) {
    try {
        phase_stats({});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EmptyInput);
    }
}

TEST(Percentile, LinearInterpolation) {
    EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(percentile({5}, 0.95), 5.0);
    EXPECT_DOUBLE_EQ(percentile({0, 10}, 0.95), 9.5);
}
