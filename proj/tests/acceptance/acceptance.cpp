// Acceptance checks, one PASS/FAIL line per criterion.
//
//   mdslite_acceptance            run all ten
//   mdslite_acceptance --only N   run criterion N
//
// Exit status is non-zero when any selected criterion fails.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mdslite/analysis.hpp"
#include "mdslite/bench.hpp"
#include "mdslite/error.hpp"
#include "mdslite/giis.hpp"
#include "mdslite/gris.hpp"
#include "mdslite/wire.hpp"
#include "support.hpp"

using namespace mdslite;
using namespace std::chrono_literals;
using ms = std::chrono::milliseconds;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Every benchmark run in this process, for the closed-loop bound check.
std::vector<std::pair<std::string, RunReport>> g_runs;

void note_run(const std::string& label, const RunReport& r) { g_runs.emplace_back(label, r); }

const EntryName kLocal = EntryName::parse("mds-vo-name=local");
const EntryName kSite = EntryName::parse("mds-vo-name=site");

BenchConfig bench_config(const net::Address& target, const EntryName& base, int users, ms duration,
                         ms think, const std::string& scenario) {
    BenchConfig b;
    b.scenario = scenario;
    b.target = target;
    b.base = base;
    b.users = users;
    b.duration = duration;
    b.think = think;
    b.sample_interval = 1000ms;
    b.timeout = 120s;
    return b;
}

struct GrisRun {
    RunReport report;
    std::vector<LogEvent> server_events;
};

GrisRun run_gris(const GrisConfig& cfg, bool warm, int users, ms duration, ms think,
                 const std::string& scenario) {
    MemorySink log;
    auto gris = GrisServer::start(cfg, &log);
    if (warm) {
        gris->service().warm();
    }
    RunOptions ro;
    ro.server_events = [&] { return log.snapshot(); };
    GrisRun out;
    out.report = run_benchmark(bench_config(gris->address(), cfg.suffix, users, duration, think, scenario), ro);
    gris->stop();
    out.server_events = log.snapshot();
    note_run(scenario + " U=" + std::to_string(users), out.report);
    return out;
}

EntryName member_suffix(int i) {
    return EntryName::parse("mds-host-name=host" + std::to_string(i) + ", mds-vo-name=site");
}

// A GIIS with `n` paper-shape GRIS members that register themselves.
struct Site {
    NullSink quiet;
    MemorySink giis_log;
    std::unique_ptr<GiisServer> giis;
    std::vector<std::unique_ptr<GrisServer>> members;

    Site(int n, CacheTtl giis_ttl, ms sweep, std::chrono::seconds register_ttl) {
        GiisConfig gc;
        gc.suffix = kSite;
        gc.cache_ttl = giis_ttl;
        gc.sweep_interval = sweep;
        gc.consult_timeout = 10s;
        giis = GiisServer::start(gc, &giis_log);
        for (int i = 0; i < n; ++i) {
            GrisConfig cfg = paper_shape_gris(member_suffix(i), CacheTtl::infinite());
            cfg.register_to = giis->endpoint();
            cfg.register_ttl = register_ttl;
            members.push_back(GrisServer::start(cfg, &quiet));
            members.back()->service().warm();
        }
        const auto until = std::chrono::steady_clock::now() + 10s;
        while (giis->service().registrations().size() < static_cast<std::size_t>(n) &&
               std::chrono::steady_clock::now() < until) {
            std::this_thread::sleep_for(20ms);
        }
    }

    ~Site() {
        giis->stop();
        for (auto& m : members) {
            m->stop();
        }
    }

    RunReport bench(int users, ms duration, ms think, const std::string& scenario) {
        RunOptions ro;
        ro.server_events = [&] { return giis_log.snapshot(); };
        RunReport r = run_benchmark(bench_config(giis->address(), kSite, users, duration, think, scenario), ro);
        note_run(scenario + " U=" + std::to_string(users), r);
        return r;
    }
};

SearchRequest full_tree(const EntryName& base, const std::string& qid) {
    return SearchRequest{base, Scope::Subtree, Filter::presence("objectclass"), std::nullopt, qid};
}

ClientQueryResult ask(const net::Address& target, const EntryName& base, const std::string& qid) {
    NullSink sink;
    ClientOptions o;
    o.timeout = 30s;
    return client_query(target, default_credential(), full_tree(base, qid), sink, o);
}

double phase_mean(const RunReport& r, Phase p) {
    return r.lifelines.stats ? r.lifelines.stats->at(p).mean : std::nan("");
}

// ---------------------------------------------------------------------------

// ORT/RPT decomposition over a cached loopback run.
Outcome criterion1() {
    auto cfg = paper_shape_gris(kLocal, CacheTtl::infinite());
    auto run = run_gris(cfg, true, 10, 30s, 1000ms, "gris-cached");
    const auto& s = run.report.lifelines;
    Outcome o;
    o.pass = s.complete > 0 && s.rpt_identity_holds && s.residual_within_5ms >= 0.99;
    o.detail = fmt("%zu complete lifelines, RPT identity %s, residual <= 5 ms for %.2f%% (need >= 99%%), max residual %.3f ms",
                   s.complete, s.rpt_identity_holds ? "exact" : "BROKEN", 100.0 * s.residual_within_5ms,
                   1e3 * s.max_residual);
    return o;
}

// Serialized provider against a FIFO single-server queue fed the same arrivals.
Outcome criterion2() {
    GrisConfig cfg;
    cfg.suffix = kLocal;
    cfg.cache_ttl = CacheTtl::zero();
    cfg.providers.push_back({"ip00", EntryName::parse("mds-device-group-name=ip00, mds-vo-name=local"), 100ms, 5,
                             180, 1000});
    auto run = run_gris(cfg, false, 10, 20s, 0ms, "contention");

    std::map<std::string, WallTime> start, end;
    for (const auto& e : run.server_events) {
        if (e.evnt == "Server-Invoking.start") {
            start[e.qid] = e.ts;
        } else if (e.evnt == "Server-Invoking.end") {
            end[e.qid] = e.ts;
        }
    }
    std::vector<double> arrivals, measured;
    const WallTime t0 = start.empty() ? WallTime{} : start.begin()->second;
    for (const auto& [qid, s] : start) {
        if (!end.count(qid)) {
            continue;
        }
        arrivals.push_back(to_seconds(s - t0));
        measured.push_back(to_seconds(end[qid] - s));
    }
    const double oracle = testsupport::mean(testsupport::serial_queue(arrivals, 0.100));
    const double got = testsupport::mean(measured);
    const double rel = oracle > 0 ? std::abs(got - oracle) / oracle : 1.0;
    Outcome o;
    o.pass = arrivals.size() > 20 && rel <= 0.15;
    o.detail = fmt("%zu invocations, mean Server-Invoking %.4f s vs serial-queue oracle %.4f s (%.1f%% off, limit 15%%)",
                   arrivals.size(), got, oracle, 100.0 * rel);
    return o;
}

// Uncached GRIS: RPT dominates ORT and Invoking is the largest phase.
Outcome criterion3() {
    Outcome o{true, ""};
    for (int u : {10, 20, 50}) {
        auto cfg = paper_shape_gris(kLocal, CacheTtl::zero(), 50ms);
        auto run = run_gris(cfg, false, u, 30s, 1000ms, "gris-uncached");
        const auto& st = run.report.lifelines.stats;
        bool largest = st.has_value();
        double ratio = st ? st->rpt_over_ort : 0;
        if (st) {
            for (Phase p : kAllPhases) {
                largest = largest && st->at(Phase::ServerInvoking).mean >= st->at(p).mean;
            }
        }
        const bool ok = st && ratio >= 0.9 && largest;
        o.pass = o.pass && ok;
        o.detail += fmt("%sU=%d rpt/ort %.3f, Invoking %.3f s %s", o.detail.empty() ? "" : "; ", u, ratio,
                        st ? st->at(Phase::ServerInvoking).mean : 0.0, largest ? "largest" : "NOT largest");
    }
    return o;
}

// Cached vs uncached GRIS.
Outcome criterion4() {
    Outcome o{true, ""};
    for (int u : {1, 10, 50}) {
        auto cached = run_gris(paper_shape_gris(kLocal, CacheTtl::infinite(), 50ms), true, u, 20s, 1000ms,
                               "gris-cached");
        auto uncached = run_gris(paper_shape_gris(kLocal, CacheTtl::zero(), 50ms), false, u, 20s, 1000ms,
                                 "gris-uncached");
        const auto& c = cached.report;
        bool invoking_zero = !c.lifelines.lifelines.empty();
        for (const auto& l : c.lifelines.lifelines) {
            invoking_zero = invoking_zero && l.duration(Phase::ServerInvoking) == Micros{0};
        }
        const double rpt = c.lifelines.stats ? c.lifelines.stats->rpt.mean : 1e9;
        const bool faster = u < 10 || c.throughput > uncached.report.throughput;
        const bool ok = faster && rpt <= 0.050 && invoking_zero;
        o.pass = o.pass && ok;
        o.detail += fmt("%sU=%d cached %.2f/s vs uncached %.2f/s, cached RPT %.2f ms, Invoking %s",
                        o.detail.empty() ? "" : "; ", u, c.throughput, uncached.report.throughput, rpt * 1e3,
                        invoking_zero ? "0" : "NONZERO");
    }
    return o;
}

// Closed-loop bound and the one-user rate.
Outcome criterion5() {
    auto cfg = paper_shape_gris(kLocal, CacheTtl::infinite());
    auto one = run_gris(cfg, true, 1, 60s, 1000ms, "closed-loop");
    run_gris(cfg, true, 5, 5s, 200ms, "closed-loop");
    run_gris(cfg, true, 10, 5s, 0ms, "closed-loop");
    bool bound = true;
    std::string worst;
    double max_ratio = 0;
    for (const auto& [label, r] : g_runs) {
        const double ratio = r.throughput / r.throughput_bound();
        bound = bound && r.throughput <= r.throughput_bound();
        if (ratio > max_ratio) {
            max_ratio = ratio;
            worst = label;
        }
    }
    const double tp = one.report.throughput;
    Outcome o;
    o.pass = bound && tp >= 0.9 && tp <= 1.0;
    o.detail = fmt("U=1 think 1 s over 60 s: %.4f req/s (need [0.9, 1.0]); bound holds on %zu/%zu runs, "
                   "closest throughput/bound %.4f (%s)",
                   tp, bound ? g_runs.size() : std::size_t{0}, g_runs.size(), max_ratio, worst.c_str());
    return o;
}

// Soft-state cleanup after two members stop.
Outcome criterion6() {
    Site site(5, CacheTtl::seconds(5), 2000ms, 10s);
    const std::size_t registered = site.giis->service().registrations().size();
    const std::size_t before = ask(site.giis->address(), kSite, "q-c6-before").entries.size();

    site.members[1]->stop();
    site.members[3]->stop();
    const WallTime killed = wall_now();
    const auto until = std::chrono::steady_clock::now() + 14s;
    while (site.giis->swept().size() < 2 && std::chrono::steady_clock::now() < until) {
        std::this_thread::sleep_for(50ms);
    }
    auto swept = site.giis->swept();
    double latest = 0;
    bool right_ones = swept.size() == 2;
    for (const auto& s : swept) {
        latest = std::max(latest, to_seconds(s.at - killed));
        const auto& sfx = s.registration.suffix;
        right_ones = right_ones && (sfx == member_suffix(1) || sfx == member_suffix(3));
    }

    // Oracle: the survivors' own full-tree counts.
    std::size_t survivors = 0;
    for (int i : {0, 2, 4}) {
        survivors += ask(site.members[i]->address(), member_suffix(i), "q-c6-m" + std::to_string(i)).entries.size();
    }
    std::size_t after = 0;
    bool answered = true;
    try {
        after = ask(site.giis->address(), kSite, "q-c6-after").entries.size();
    } catch (const Error&) {
        answered = false;
    }
    Outcome o;
    o.pass = registered == 5 && right_ones && latest <= 12.0 && answered && after == survivors;
    o.detail = fmt("%zu registered, %zu entries before; 2 stopped, swept %zu (%s) within %.2f s (limit 12 s); "
                   "aggregate %zu entries vs survivors' sum %zu",
                   registered, before, swept.size(), right_ones ? "the stopped ones" : "WRONG set", latest, after,
                   survivors);
    return o;
}

// Cached GIIS consults each member once and answers about five GRISes' worth.
Outcome criterion7() {
    Site site(5, CacheTtl::seconds(600), 5000ms, 30s);
    const std::size_t single = ask(site.members[0]->address(), member_suffix(0), "q-c7-gris").response_bytes;
    const std::size_t whole = ask(site.giis->address(), kSite, "q-c7-giis").response_bytes;
    auto r = site.bench(20, 30s, 1000ms, "giis-cached");
    const auto outbound = site.giis->service().outbound_queries();
    const double ratio = single ? static_cast<double>(whole) / static_cast<double>(single) : 0;
    Outcome o;
    o.pass = outbound <= 5 && std::abs(ratio - 5.0) <= 1.0 && r.lifelines.complete > 0;
    o.detail = fmt("outbound GRIS queries %llu (limit 5) over %zu completed queries; response %zu B vs "
                   "single GRIS %zu B, ratio %.2f (need 5 +/- 20%%)",
                   static_cast<unsigned long long>(outbound), r.lifelines.complete, whole, single, ratio);
    return o;
}

// Bigger aggregate index, longer search.
Outcome criterion8() {
    const int users = 20;
    auto gris = run_gris(paper_shape_gris(kLocal, CacheTtl::infinite()), true, users, 20s, 1000ms, "gris-cached");
    Site site(5, CacheTtl::seconds(600), 5000ms, 30s);
    ask(site.giis->address(), kSite, "q-c8-fill");
    auto giis = site.bench(users, 20s, 1000ms, "giis-cached");
    const double g = phase_mean(giis, Phase::ServerSearchIndex);
    const double s = phase_mean(gris.report, Phase::ServerSearchIndex);
    Outcome o;
    o.pass = g > s;
    o.detail = fmt("U=%d mean Server-SearchIndex GIIS %.1f us (%zu entries) vs GRIS %.1f us (%zu entries)", users,
                   g * 1e6, static_cast<std::size_t>(5 * 50), s * 1e6, static_cast<std::size_t>(50));
    return o;
}

// Indexed search against a linear scan.
Outcome criterion9() {
    std::mt19937_64 rng(20030601);
    const EntryName suffix = EntryName::parse("mds-vo-name=local, o=grid");
    const Scope scopes[] = {Scope::Base, Scope::OneLevel, Scope::Subtree};
    std::size_t checks = 0, mismatches = 0, largest = 0;
    for (int d = 0; d < 200; ++d) {
        auto entries = testsupport::random_directory(rng, suffix, 1000);
        largest = std::max(largest, entries.size());
        auto idx = build_index(entries, suffix);
        std::vector<EntryName> bases{suffix, EntryName::parse("o=grid")};
        for (int k = 0; k < 8; ++k) {
            const auto& e = entries[rng() % entries.size()];
            bases.push_back(e.name);
            bases.push_back(*e.name.parent());
        }
        for (const auto& base : bases) {
            for (Scope sc : scopes) {
                if (sc != Scope::Subtree && !idx.has_node(base) && !suffix.is_under(base)) {
                    continue;
                }
                Filter f = testsupport::random_filter(rng);
                std::vector<std::string> got;
                for (const Entry* e : idx.search_refs(base, sc, f)) {
                    got.push_back(e->name.str());
                }
                ++checks;
                mismatches += got == testsupport::linear_scan(entries, base, sc, f) ? 0 : 1;
            }
        }
        auto all = idx.search_refs(suffix, Scope::Subtree, Filter::presence("objectclass"));
        ++checks;
        mismatches += all.size() == entries.size() ? 0 : 1;
    }
    Outcome o;
    o.pass = mismatches == 0;
    o.detail = fmt("200 directories (largest %zu entries), %zu searches, %zu mismatches", largest, checks, mismatches);
    return o;
}

Message random_message(std::mt19937_64& rng) {
    static const std::vector<std::string> kTypes{"BIND", "BIND-OK", "BIND-ERR", "SEARCH", "RESULT",
                                                 "REGISTER", "REGISTER-OK", "ERROR", "UNBIND", "NEWTYPE"};
    auto bytes = [&](std::size_t max, bool newline_ok) {
        std::string s(rng() % max, '\0');
        for (auto& c : s) {
            c = static_cast<char>(rng() % 256);
            if (!newline_ok && (c == '\n' || c == '\r')) {
                c = '.';
            }
        }
        return s;
    };
    Message m{kTypes[rng() % kTypes.size()], {}, bytes(400, true)};
    for (int i = static_cast<int>(rng() % 6); i > 0; --i) {
        m.headers.emplace_back("h" + std::to_string(rng() % 1000), bytes(60, false));
    }
    return m;
}

LogEvent random_event(std::mt19937_64& rng) {
    static const std::vector<std::string> kProgs{"gris", "giis", "bench", "provider"};
    LogEvent e;
    e.ts = WallTime{Micros{static_cast<std::int64_t>(rng() % 4'000'000'000'000'000ULL)}};
    e.host = "node" + std::to_string(rng() % 20);
    e.prog = kProgs[rng() % kProgs.size()];
    e.lvl = rng() % 4 ? "INFO" : "ERROR";
    e.evnt = rng() % 2 ? phase_event_name(kAllPhases[rng() % kPhaseCount], rng() % 2 ? Boundary::Start : Boundary::End)
                       : "marker" + std::to_string(rng() % 5);
    e.qid = "q-" + std::to_string(rng() % 600) + "-" + std::to_string(rng() % 100000);
    for (int i = static_cast<int>(rng() % 3); i > 0; --i) {
        e.extra.emplace_back("X" + std::to_string(i), std::to_string(rng()));
    }
    return e;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Format round trips and analyze determinism.
Outcome criterion10() {
    std::mt19937_64 rng(42);
    std::size_t wire_bad = 0, log_bad = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Message m = random_message(rng);
        const std::string bytes = encode_frame(encode(m));
        Message back = decode(decode_frame(bytes));
        wire_bad += (back == m && encode_frame(encode(back)) == bytes) ? 0 : 1;
    }
    std::vector<LogEvent> events;
    for (int i = 0; i < n; ++i) {
        events.push_back(random_event(rng));
    }
    const std::string text = serialize_events(events);
    auto parsed = parse_log(text);
    for (int i = 0; i < n; ++i) {
        log_bad += i < static_cast<int>(parsed.events.size()) && parsed.events[i] == events[i] ? 0 : 1;
    }
    log_bad += serialize_events(parsed.events) == text ? 0 : 1;

    // Logs from a real short run, analyzed repeatedly.
    const auto dir = std::filesystem::temp_directory_path() / ("mdslite-acc10-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
        auto cfg = paper_shape_gris(kLocal, CacheTtl::infinite());
        cfg.log_path = dir / "gris.log";
        auto gris = GrisServer::start(cfg);
        gris->service().warm();
        auto b = bench_config(gris->address(), kLocal, 5, 3s, 100ms, "gris-cached");
        b.log_path = dir / "bench.log";
        note_run("gris-cached U=5", run_benchmark(b));
        gris->stop();
    }
    std::vector<std::string> outputs;
    for (int i = 0; i < 3; ++i) {
        auto paths = std::vector<std::filesystem::path>{dir / "bench.log", dir / "gris.log"};
        if (i == 1) {
            std::swap(paths[0], paths[1]);
        }
        auto a = analyze(paths);
        outputs.push_back(format_summary_csv(a.rows) + format_phase_csv(a.phases));
    }
    const bool deterministic = outputs[0] == outputs[1] && outputs[1] == outputs[2] && !outputs[0].empty();
    std::filesystem::remove_all(dir);

    Outcome o;
    o.pass = wire_bad == 0 && log_bad == 0 && deterministic;
    o.detail = fmt("%d wire messages (%zu mismatches), %d log lines (%zu mismatches), analyze output %s over 3 runs",
                   n, wire_bad, n, log_bad, deterministic ? "byte-identical" : "DIFFERS");
    return o;
}

} // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--only N]\n", argv[0]);
            return 2;
        }
    }
    const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                         criterion5, criterion6, criterion7, criterion8,
                                                         criterion9, criterion10};
    if (only < 0 || only > static_cast<int>(criteria.size())) {
        std::fprintf(stderr, "no criterion %d\n", only);
        return 2;
    }
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only && static_cast<int>(i) + 1 != only) {
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i]();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %zu: %s (%s) [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str(), took);
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
