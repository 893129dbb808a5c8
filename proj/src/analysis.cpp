#include "mdslite/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "mdslite/error.hpp"
#include "mdslite/giis.hpp"
#include "mdslite/gris.hpp"

namespace mdslite {

namespace {

std::string f6(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t c = s.find(sep, pos);
        out.emplace_back(s.substr(pos, c == std::string_view::npos ? s.npos : c - pos));
        if (c == std::string_view::npos) {
            return out;
        }
        pos = c + 1;
    }
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
}

const char* phase_column(Phase p) {
    switch (p) {
    case Phase::ClientConnect: return "t_client_connect";
    case Phase::ClientBind: return "t_client_bind";
    case Phase::ServerInitSearch: return "t_server_initsearch";
    case Phase::ServerSearchIndex: return "t_server_searchindex";
    case Phase::ServerInvoking: return "t_server_invoking";
    case Phase::ServerGenResult: return "t_server_genresult";
    case Phase::ClientEndConnect: return "t_client_endconnect";
    }
    return "?";
}

} // namespace

// ---------------------------------------------------------------------------
// CSV

std::string summary_csv_header() {
    std::string h = "scenario,users,throughput,mean_ort,mean_rpt";
    for (Phase p : kAllPhases) {
        h += ',';
        h += phase_column(p);
    }
    h += ",rpt_over_ort,connect_fraction,errors";
    return h;
}

std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = summary_csv_header() + "\n";
    for (const auto& r : rows) {
        out += r.scenario + "," + std::to_string(r.users) + "," + f6(r.throughput) + "," +
               f6(r.mean_ort) + "," + f6(r.mean_rpt);
        for (double m : r.phase_means) {
            out += "," + f6(m);
        }
        out += "," + f6(r.rpt_over_ort) + "," + f6(r.connect_fraction) + "," +
               std::to_string(r.errors) + "\n";
    }
    return out;
}

std::vector<SummaryRow> parse_summary_csv(std::string_view text) {
    std::vector<SummaryRow> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (n == 1) {
            if (line != summary_csv_header()) {
                throw Error(Errc::MalformedConfig, "unexpected summary header");
            }
            continue;
        }
        if (line.empty()) {
            continue;
        }
        auto f = split(line, ',');
        if (f.size() != 15) {
            throw Error(Errc::MalformedConfig, "summary line " + std::to_string(n) + ": 15 fields expected");
        }
        try {
            SummaryRow r;
            r.scenario = f[0];
            r.users = std::stoi(f[1]);
            r.throughput = std::stod(f[2]);
            r.mean_ort = std::stod(f[3]);
            r.mean_rpt = std::stod(f[4]);
            for (std::size_t i = 0; i < kPhaseCount; ++i) {
                r.phase_means[i] = std::stod(f[5 + i]);
            }
            r.rpt_over_ort = std::stod(f[12]);
            r.connect_fraction = std::stod(f[13]);
            r.errors = std::stoul(f[14]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw Error(Errc::MalformedConfig, "summary line " + std::to_string(n) + ": bad number");
        }
    }
    return rows;
}

std::string format_phase_csv(const std::vector<PhaseRow>& rows) {
    std::string out = "scenario,users,phase,mean,median,p95\n";
    for (const auto& r : rows) {
        out += r.scenario + "," + std::to_string(r.users) + "," + std::string(phase_name(r.phase)) +
               "," + f6(r.mean) + "," + f6(r.median) + "," + f6(r.p95) + "\n";
    }
    return out;
}

SummaryRow summary_row(const RunWindow& run, const LifelineSummary& s) {
    if (!s.stats) {
        throw Error(Errc::NoCompleteLifelines, run.scenario + " users=" + std::to_string(run.users));
    }
    SummaryRow r;
    r.scenario = run.scenario;
    r.users = run.users;
    r.throughput = s.throughput;
    r.mean_ort = s.stats->ort.mean;
    r.mean_rpt = s.stats->rpt.mean;
    for (std::size_t i = 0; i < kPhaseCount; ++i) {
        r.phase_means[i] = s.stats->phases[i].mean;
    }
    r.rpt_over_ort = s.stats->rpt_over_ort;
    r.connect_fraction = s.stats->connect_fraction;
    r.errors = s.errors;
    return r;
}

std::vector<PhaseRow> phase_rows(const RunWindow& run, const LifelineSummary& s) {
    std::vector<PhaseRow> out;
    if (!s.stats) {
        return out;
    }
    for (Phase p : kAllPhases) {
        const DurationStats& d = s.stats->at(p);
        out.push_back({run.scenario, run.users, p, d.mean, d.median, d.p95});
    }
    return out;
}

SummaryRow summary_row(const RunReport& report) {
    SummaryRow r = summary_row(report.window, report.lifelines);
    r.throughput = report.throughput;
    r.errors = report.errors;
    return r;
}

// ---------------------------------------------------------------------------
// analyze

Analysis analyze_events(std::vector<LogEvent> events) {
    std::stable_sort(events.begin(), events.end(),
                     [](const LogEvent& a, const LogEvent& b) { return a.ts < b.ts; });
    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (parse_bench_start(events[i])) {
            starts.push_back(i);
        }
    }
    std::vector<std::pair<RunWindow, std::vector<LogEvent>>> runs;
    if (starts.empty()) {
        // No marker: one run spanning the whole log, users from the qids.
        RunWindow w;
        std::set<std::string> workers;
        WallTime first{}, last{};
        bool any = false;
        for (const auto& e : events) {
            if (e.prog != "bench") {
                continue;
            }
            if (!any) {
                first = e.ts;
                any = true;
            }
            last = e.ts;
            auto parts = split(e.qid, '-');
            if (parts.size() == 3 && parts[0] == "q") {
                workers.insert(parts[1]);
            }
        }
        if (any) {
            w.start = first;
            w.duration_s = std::max(1e-6, to_seconds(last - first));
            w.users = std::max<int>(1, static_cast<int>(workers.size()));
            runs.emplace_back(w, events);
        }
    } else {
        for (std::size_t k = 0; k < starts.size(); ++k) {
            const std::size_t end = k + 1 < starts.size() ? starts[k + 1] : events.size();
            runs.emplace_back(*parse_bench_start(events[starts[k]]),
                              std::vector<LogEvent>(events.begin() + starts[k], events.begin() + end));
        }
    }

    Analysis a;
    for (auto& [window, evs] : runs) {
        LifelineSummary s = summarize_run(window, evs);
        if (!s.stats) {
            continue;
        }
        a.rows.push_back(summary_row(window, s));
        auto ph = phase_rows(window, s);
        a.phases.insert(a.phases.end(), ph.begin(), ph.end());
        a.runs.push_back({window, std::move(s)});
    }
    if (a.rows.empty()) {
        throw Error(Errc::NoCompleteLifelines, "no complete lifelines in the given logs");
    }
    return a;
}

Analysis analyze(const std::vector<std::filesystem::path>& log_paths) {
    std::vector<LogEvent> events;
    std::vector<ParseDiagnostic> diagnostics;
    for (const auto& p : log_paths) {
        ParsedLog parsed = read_log_file(p);
        events.insert(events.end(), std::make_move_iterator(parsed.events.begin()),
                      std::make_move_iterator(parsed.events.end()));
        diagnostics.insert(diagnostics.end(), parsed.diagnostics.begin(), parsed.diagnostics.end());
    }
    Analysis a = analyze_events(std::move(events));
    a.diagnostics = std::move(diagnostics);
    return a;
}

// ---------------------------------------------------------------------------
// compare

double ComparisonRow::ratio(std::size_t i) const {
    if (b[i] == 0) {
        return a[i] == 0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    return a[i] / b[i];
}

std::vector<ComparisonRow> compare(const std::vector<SummaryRow>& a,
                                   const std::vector<SummaryRow>& b) {
    std::map<int, const SummaryRow*> ma, mb;
    for (const auto& r : a) {
        ma.emplace(r.users, &r);
    }
    for (const auto& r : b) {
        mb.emplace(r.users, &r);
    }
    std::set<int> ga, gb;
    for (const auto& [u, r] : ma) {
        ga.insert(u);
    }
    for (const auto& [u, r] : mb) {
        gb.insert(u);
    }
    if (ga != gb || ga.empty()) {
        throw Error(Errc::GridMismatch, "user-count grids differ");
    }
    std::vector<ComparisonRow> out;
    for (int u : ga) {
        const SummaryRow& x = *ma.at(u);
        const SummaryRow& y = *mb.at(u);
        ComparisonRow c;
        c.users = u;
        c.a = {x.throughput, x.mean_ort, x.mean_rpt};
        c.b = {y.throughput, y.mean_ort, y.mean_rpt};
        c.a_throughput_ge_b = x.throughput >= y.throughput;
        out.push_back(c);
    }
    return out;
}

std::string format_comparison_csv(const std::vector<ComparisonRow>& rows) {
    static constexpr std::array<const char*, 3> kNames = {"throughput", "mean_ort", "mean_rpt"};
    std::string out = "users";
    for (const char* n : kNames) {
        out += std::string(",") + n + "_a," + n + "_b," + n + "_delta," + n + "_ratio";
    }
    out += ",a_throughput_ge_b\n";
    for (const auto& r : rows) {
        out += std::to_string(r.users);
        for (std::size_t i = 0; i < 3; ++i) {
            out += "," + f6(r.a[i]) + "," + f6(r.b[i]) + "," + f6(r.delta(i)) + "," + f6(r.ratio(i));
        }
        out += r.a_throughput_ge_b ? ",1\n" : ",0\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// plot data

std::map<std::string, std::string> plot_files(const std::vector<SummaryRow>& rows) {
    std::map<std::string, std::vector<const SummaryRow*>> by_scenario;
    for (const auto& r : rows) {
        by_scenario[r.scenario].push_back(&r);
    }
    std::map<std::string, std::string> files;
    for (auto& [scenario, list] : by_scenario) {
        std::stable_sort(list.begin(), list.end(),
                         [](const SummaryRow* x, const SummaryRow* y) { return x->users < y->users; });
        std::string tp = "# " + scenario + ": throughput vs users\n# columns: users throughput_rps\n";
        std::string orr = "# " + scenario + ": ORT and RPT vs users\n# columns: users mean_ort_s mean_rpt_s\n";
        std::string ph = "# " + scenario + ": phase breakdown vs users\n# columns: users";
        for (Phase p : kAllPhases) {
            ph += " ";
            ph += phase_name(p);
        }
        ph += " (seconds)\n";
        for (const SummaryRow* r : list) {
            const std::string u = std::to_string(r->users);
            tp += u + " " + f6(r->throughput) + "\n";
            orr += u + " " + f6(r->mean_ort) + " " + f6(r->mean_rpt) + "\n";
            ph += u;
            for (double m : r->phase_means) {
                ph += " " + f6(m);
            }
            ph += "\n";
        }
        files[scenario + "_throughput.dat"] = tp;
        files[scenario + "_ort_rpt.dat"] = orr;
        files[scenario + "_phases.dat"] = ph;
    }

    auto stub = [&](const std::string& family, const std::string& ylabel, const std::string& body) {
        std::string gp = "set terminal pngcairo size 900,600\nset output '" + family + ".png'\n";
        gp += "set xlabel 'concurrent users'\nset ylabel '" + ylabel + "'\nset key left top\n";
        gp += "plot " + body + "\n";
        files[family + ".gp"] = gp;
    };
    std::string tp_body, ort_body, ph_body;
    for (const auto& [scenario, list] : by_scenario) {
        if (!tp_body.empty()) {
            tp_body += ", \\\n     ";
            ort_body += ", \\\n     ";
            ph_body += ", \\\n     ";
        }
        tp_body += "'" + scenario + "_throughput.dat' using 1:2 with linespoints title '" + scenario + "'";
        ort_body += "'" + scenario + "_ort_rpt.dat' using 1:2 with linespoints title '" + scenario +
                    " ORT', '" + scenario + "_ort_rpt.dat' using 1:3 with linespoints title '" +
                    scenario + " RPT'";
        for (std::size_t i = 0; i < kPhaseCount; ++i) {
            if (i) {
                ph_body += ", ";
            }
            ph_body += "'" + scenario + "_phases.dat' using 1:" + std::to_string(i + 2) +
                       " with linespoints title '" + scenario + " " +
                       std::string(phase_name(kAllPhases[i])) + "'";
        }
    }
    if (!by_scenario.empty()) {
        stub("throughput", "requests per second", tp_body);
        stub("ort_rpt", "seconds", ort_body);
        stub("phases", "seconds", ph_body);
    }
    return files;
}

void emit_plotdata(const std::vector<SummaryRow>& rows, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, text] : plot_files(rows)) {
        write_file(dir / name, text);
    }
}

// ---------------------------------------------------------------------------
// replicate

std::string format_findings(const std::vector<Finding>& findings) {
    std::string out;
    for (const auto& f : findings) {
        out += f.check + ": " + (f.pass ? "PASS" : "FAIL") + "\n";
    }
    return out;
}

namespace {

struct ScenarioRun {
    SummaryRow row;
    RunReport report;
    std::uint64_t outbound = 0;
    bool invoking_zero = false;
};

std::string run_tag(const std::string& scenario, int users) {
    return scenario + "-u" + std::to_string(users);
}

BenchConfig bench_for(const ReplicateOptions& o, const std::string& scenario, int users,
                      const net::Address& target, const EntryName& base,
                      const std::filesystem::path& log) {
    BenchConfig b;
    b.scenario = scenario;
    b.target = target;
    b.users = users;
    b.duration = o.duration;
    b.think = o.think;
    b.base = base;
    b.sample_interval = o.sample_interval;
    b.log_path = log;
    return b;
}

bool all_invoking_zero(const LifelineSummary& s) {
    for (const auto& l : s.lifelines) {
        if (l.duration(Phase::ServerInvoking) != Micros{0}) {
            return false;
        }
    }
    return !s.lifelines.empty();
}

ScenarioRun run_gris_scenario(const ReplicateOptions& o, const std::string& scenario, int users) {
    const auto logs = o.out_dir / "logs";
    const auto tag = run_tag(scenario, users);
    const bool cached = scenario == "gris-cached";
    GrisConfig cfg = paper_shape_gris(EntryName::parse("mds-vo-name=local"),
                                      cached ? CacheTtl::infinite() : CacheTtl::zero());
    cfg.log_path = logs / (tag + "-gris.log");
    auto server = GrisServer::start(cfg);
    if (cached) {
        server->service().warm();
    }
    BenchConfig b = bench_for(o, scenario, users, server->endpoint(), cfg.suffix,
                              logs / (tag + "-bench.log"));
    RunOptions ro;
    ro.server_events = [&] {
        // The server log has to reach disk before it is read back.
        server->sink().flush();
        return read_log_file(cfg.log_path).events;
    };
    RunReport report = run_benchmark(b, ro);
    server->stop();
    ScenarioRun out;
    out.row = summary_row(report);
    out.invoking_zero = all_invoking_zero(report.lifelines);
    out.report = std::move(report);
    return out;
}

ScenarioRun run_giis_scenario(const ReplicateOptions& o, const std::string& scenario, int users) {
    using namespace std::chrono_literals;
    const auto logs = o.out_dir / "logs";
    const auto tag = run_tag(scenario, users);
    GiisConfig gc;
    gc.suffix = EntryName::parse("mds-vo-name=site");
    const double ttl_s = std::max(600.0, 2.0 * static_cast<double>(o.duration.count()) / 1000.0);
    gc.cache_ttl = CacheTtl::seconds(ttl_s);
    gc.sweep_interval = 2000ms;
    gc.log_path = logs / (tag + "-giis.log");
    auto giis = GiisServer::start(gc);
    std::vector<std::unique_ptr<GrisServer>> members;
    for (int i = 0; i < o.giis_members; ++i) {
        GrisConfig cfg = paper_shape_gris(
            EntryName::parse("mds-host-name=host" + std::to_string(i) + ", mds-vo-name=site"),
            CacheTtl::infinite());
        cfg.register_to = giis->endpoint();
        cfg.register_ttl = 30s;
        members.push_back(GrisServer::start(cfg));
        members.back()->service().warm();
    }
    const auto wait_until = std::chrono::steady_clock::now() + 10s;
    while (giis->service().registrations().size() < static_cast<std::size_t>(o.giis_members) &&
           std::chrono::steady_clock::now() < wait_until) {
        std::this_thread::sleep_for(20ms);
    }
    BenchConfig b = bench_for(o, scenario, users, giis->endpoint(), gc.suffix,
                              logs / (tag + "-bench.log"));
    RunOptions ro;
    ro.server_events = [&] {
        giis->sink().flush();
        return read_log_file(gc.log_path).events;
    };
    RunReport report = run_benchmark(b, ro);
    ScenarioRun out;
    out.outbound = giis->service().outbound_queries();
    giis->stop();
    for (auto& m : members) {
        m->stop();
    }
    out.row = summary_row(report);
    out.report = std::move(report);
    return out;
}

std::string paper_plan(const ReplicateOptions& o) {
    std::string plan = "# paper-scale parameterization; run each line on the client hosts\n";
    plan += "# think 1000 ms, duration 600 s, samples every 5 s\n";
    const std::vector<int> grid{1, 50, 100, 200, 300, 400, 500, 600};
    for (const auto& scenario : o.scenarios) {
        for (int u : grid) {
            plan += "mdslite bench --scenario " + scenario + " --target <" +
                    (scenario == "giis-cached" ? std::string("giis") : std::string("gris")) +
                    "-host:port> --users " + std::to_string(u) +
                    " --duration 600 --think-ms 1000 --sample-s 5 --base " +
                    (scenario == "giis-cached" ? "'mds-vo-name=site'" : "'mds-vo-name=local'") +
                    " --scope sub --filter '(objectclass=*)' --attrs '*' --log " +
                    run_tag(scenario, u) + "-bench.log --out " + run_tag(scenario, u) + ".csv\n";
        }
    }
    return plan;
}

} // namespace

ReplicateResult replicate(const ReplicateOptions& o) {
    ReplicateResult result;
    std::filesystem::create_directories(o.out_dir);
    if (o.scale == Scale::Paper) {
        write_file(o.out_dir / "plan.txt", paper_plan(o));
        return result;
    }
    std::filesystem::create_directories(o.out_dir / "logs");
    std::map<std::string, std::vector<ScenarioRun>> runs;
    for (const auto& scenario : o.scenarios) {
        try {
            for (int u : o.users) {
                if (scenario == "giis-cached") {
                    runs[scenario].push_back(run_giis_scenario(o, scenario, u));
                } else if (scenario == "gris-cached" || scenario == "gris-uncached") {
                    runs[scenario].push_back(run_gris_scenario(o, scenario, u));
                } else {
                    throw Error(Errc::MalformedConfig, "unknown scenario " + scenario);
                }
            }
        } catch (const Error& e) {
            result.failed_scenarios.push_back(scenario + ": " + e.what());
            runs.erase(scenario);
        }
    }

    // Rows come from the logs on disk so the files and the findings agree.
    std::vector<std::filesystem::path> logs;
    for (const auto& entry : std::filesystem::directory_iterator(o.out_dir / "logs")) {
        logs.push_back(entry.path());
    }
    std::sort(logs.begin(), logs.end());
    std::map<std::string, std::vector<SummaryRow>> rows_by;
    if (!runs.empty()) {
        Analysis a = analyze(logs);
        result.rows = a.rows;
        std::stable_sort(result.rows.begin(), result.rows.end(), [](const SummaryRow& x, const SummaryRow& y) {
            return std::tie(x.scenario, x.users) < std::tie(y.scenario, y.users);
        });
        for (const auto& r : result.rows) {
            rows_by[r.scenario].push_back(r);
        }
        write_file(o.out_dir / "summary.csv", format_summary_csv(result.rows));
        write_file(o.out_dir / "phases.csv", format_phase_csv(a.phases));
        emit_plotdata(result.rows, o.out_dir / "plot");
    }

    auto& f = result.findings;
    for (const auto& [scenario, list] : runs) {
        for (const auto& r : list) {
            const std::string at = " (" + scenario + ", U=" + std::to_string(r.row.users) + ")";
            f.push_back({"throughput <= U/(think + min ORT)" + at,
                         r.report.throughput <= r.report.throughput_bound() + 1e-9});
            f.push_back({"mean ORT > mean RPT" + at, r.row.mean_ort > r.row.mean_rpt});
            if (scenario == "gris-uncached" && r.row.users >= 10) {
                f.push_back({"rpt_over_ort >= 0.9" + at, r.row.rpt_over_ort >= 0.9});
                bool largest = true;
                for (Phase p : kAllPhases) {
                    largest = largest && r.row.phase_mean(Phase::ServerInvoking) >= r.row.phase_mean(p);
                }
                f.push_back({"Server-Invoking is the largest mean phase" + at, largest});
            }
            if (scenario == "gris-cached") {
                f.push_back({"Server-Invoking zero after warmup" + at, r.invoking_zero});
            }
            if (scenario == "giis-cached") {
                f.push_back({"outbound GRIS queries <= " + std::to_string(o.giis_members) + at,
                             r.outbound <= static_cast<std::uint64_t>(o.giis_members)});
            }
        }
    }
    if (rows_by.count("gris-cached") && rows_by.count("gris-uncached")) {
        try {
            auto cmp = compare(rows_by["gris-cached"], rows_by["gris-uncached"]);
            write_file(o.out_dir / "compare-gris-cached-vs-uncached.csv", format_comparison_csv(cmp));
            for (const auto& c : cmp) {
                if (c.users >= 10) {
                    f.push_back({"cached throughput >= uncached (U=" + std::to_string(c.users) + ")",
                                 c.a_throughput_ge_b});
                }
            }
        } catch (const Error& e) {
            f.push_back({std::string("cached vs uncached comparison: ") + e.what(), false});
        }
    }
    if (rows_by.count("giis-cached") && rows_by.count("gris-cached")) {
        for (const auto& g : rows_by["giis-cached"]) {
            for (const auto& s : rows_by["gris-cached"]) {
                if (s.users == g.users) {
                    f.push_back({"GIIS Server-SearchIndex mean > GRIS (U=" + std::to_string(g.users) + ")",
                                 g.phase_mean(Phase::ServerSearchIndex) >
                                     s.phase_mean(Phase::ServerSearchIndex)});
                }
            }
        }
    }
    for (const auto& failed : result.failed_scenarios) {
        f.push_back({"scenario ran: " + failed, false});
    }
    write_file(o.out_dir / "findings.txt", format_findings(f));
    return result;
}

} // namespace mdslite
